"""Wall-clock encoding time versus sequence length, and power-law fits."""

from __future__ import annotations

import csv
import statistics
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import tensor as T
from .errors import ContractError, LengthError
from .model import Encoder

DEFAULT_LENGTHS = (256, 512, 1024, 2048, 4096, 8192)

_bench_lock = threading.Lock()


@dataclass(frozen=True)
class BenchRow:
    model_tag: str
    seq_len: int
    batch_size: int
    repeats: int
    total_seconds: float
    per_item_ms: float


@dataclass(frozen=True)
class ScalingFit:
    model_tag: str
    alpha: float
    r_squared: float


def time_encoder(
    model: Encoder,
    seq_lens: Sequence[int],
    batch_size: int = 1,
    repeats: int = 3,
    warmup: int = 1,
    model_tag: str | None = None,
    seed: int = 0,
) -> list[BenchRow]:
    """Time forward passes on random token sequences of exactly each length.

    Each length runs ``warmup`` untimed passes, then ``repeats`` timed ones.
    ``total_seconds`` is the median pass time times ``repeats``, so
    ``per_item_ms`` is the median cost of one sequence.  BLAS is pinned to one
    thread and no tape is recorded.
    """
    if warmup < 1:
        raise ContractError("warmup must be at least 1")
    if repeats < 3:
        raise ContractError("repeats must be at least 3")
    tag = model_tag or type(model).__name__
    cfg = model.config
    for L in seq_lens:
        if L < 2:
            raise ContractError(f"sequence length must be at least 2, got {L}")
        if L > cfg.max_seq_len:
            raise LengthError(f"benchmark length {L} exceeds model max_seq_len {cfg.max_seq_len}")
    if not _bench_lock.acquire(blocking=False):
        raise ContractError("another benchmark is already running in this process")
    rng = np.random.default_rng(seed)
    rows = []
    try:
        with threadpool_limits(limits=1), T.no_grad():
            for L in seq_lens:
                # L - 1 content tokens; encode_batch appends EOS
                batch = [rng.integers(0, 256, size=L - 1).tolist() for _ in range(batch_size)]
                for _ in range(warmup):
                    model.encode_batch(batch, max_len=L)
                times = []
                for _ in range(repeats):
                    t0 = time.perf_counter()
                    model.encode_batch(batch, max_len=L)
                    times.append(time.perf_counter() - t0)
                total = statistics.median(times) * repeats
                rows.append(BenchRow(tag, L, batch_size, repeats, total, 1000.0 * total / (batch_size * repeats)))
    finally:
        _bench_lock.release()
    return rows


def _points(rows) -> tuple[np.ndarray, np.ndarray]:
    pts = [(r.seq_len, r.per_item_ms) if isinstance(r, BenchRow) else tuple(r) for r in rows]
    lengths = np.array([p[0] for p in pts], dtype=np.float64)
    times = np.array([p[1] for p in pts], dtype=np.float64)
    return lengths, times


def fit_scaling(rows: Iterable, min_span: float = 4.0, model_tag: str = "") -> ScalingFit:
    """Least-squares slope (and R^2) of log time against log length.

    ``rows`` are BenchRows or (length, time) pairs.  Needs at least three
    distinct lengths whose max/min ratio is at least ``min_span``.
    """
    lengths, times = _points(list(rows))
    distinct = np.unique(lengths)
    if len(distinct) < 3 or distinct[-1] / distinct[0] < min_span:
        raise ContractError(f"need >= 3 distinct lengths spanning >= {min_span}x, got {distinct.tolist()}")
    if np.any(times <= 0):
        raise ContractError("times must be positive")
    x, y = np.log(lengths), np.log(times)
    xc = x - x.mean()
    alpha = float((xc * (y - y.mean())).sum() / (xc * xc).sum())
    resid = y - (y.mean() + alpha * xc)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0 else 1.0 - float((resid**2).sum()) / ss_tot
    return ScalingFit(model_tag, alpha, r2)


def fit_scaling_exponent(rows: Iterable, min_span: float = 4.0) -> float:
    return fit_scaling(rows, min_span).alpha


def bench_models(max_len: int = max(DEFAULT_LENGTHS), model_dim: int = 64, layers: int = 2, seed: int = 0):
    """Parameter-matched SSM and attention encoders sized for ``max_len``."""
    from .attention import AttentionEncoder, matched_attention_config
    from .ssm import EncoderConfig, SsmEncoder

    ssm_cfg = EncoderConfig(model_dim=model_dim, layers=layers, max_seq_len=max_len)
    attn_cfg = matched_attention_config(ssm_cfg)
    return SsmEncoder.init(ssm_cfg, seed), AttentionEncoder.init(attn_cfg, seed)


def write_rows_csv(rows: Sequence[BenchRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "seq_len", "batch", "repeats", "total_s", "per_item_ms"])
        for r in rows:
            w.writerow([r.model_tag, r.seq_len, r.batch_size, r.repeats, f"{r.total_seconds:.6f}", f"{r.per_item_ms:.6f}"])


def write_summary_csv(fits: Sequence[ScalingFit], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "alpha", "r_squared"])
        for f in fits:
            w.writerow([f.model_tag, f"{f.alpha:.6f}", f"{f.r_squared:.6f}"])
