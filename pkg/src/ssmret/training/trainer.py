"""Contrastive fine-tuning loop with in-batch negative sharing and Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .. import tensor as T
from ..errors import ContractError, TrainingDivergedError
from ..model import Encoder, tokenize
from .data import TrainingExample
from .loss import info_nce_matrix

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    temperature: float = 0.01
    batch_size: int = 16
    negatives_per_query_total: int = 63
    learning_rate: float = 1e-3
    epochs: int = 1
    seed: int = 0
    max_query_len: int = 32
    max_passage_len: int = 64
    max_steps: int | None = None
    time_budget_s: float | None = None
    grad_clip: float | None = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        if self.negatives_per_query_total < 1:
            raise ContractError("negatives_per_query_total must be at least 1")
        if self.batch_size < 1:
            raise ContractError("batch_size must be at least 1")


@dataclass
class TrainResult:
    model: Encoder
    losses: list[float] = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


class Adam:
    def __init__(self, params: Sequence[T.Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, scale: float = 1.0) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad * scale
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def assemble_shared_negatives(batch: Sequence[TrainingExample], cap: int | None = None) -> list[list[str]]:
    """Negative pool per query: own negatives first, then the rest of the batch.

    Other queries' positives and negatives join the pool; duplicates (by text)
    and anything equal to the query's own positive are dropped; pools are
    truncated to ``cap``.
    """
    if not batch:
        raise ContractError("batch must not be empty")
    pools = []
    for i, ex in enumerate(batch):
        pool: list[str] = []
        seen = {ex.positive}
        candidates = list(ex.negatives)
        for j, other in enumerate(batch):
            if j != i:
                candidates.append(other.positive)
                candidates.extend(other.negatives)
        for text in candidates:
            if text not in seen:
                seen.add(text)
                pool.append(text)
        pools.append(pool[:cap] if cap is not None else pool)
    return pools


def batch_loss(model: Encoder, batch: Sequence[TrainingExample], config: TrainConfig) -> T.Tensor:
    """InfoNCE for one batch; passages shared across queries are encoded once."""
    pools = assemble_shared_negatives(batch, config.negatives_per_query_total)
    passages: dict[str, int] = {}
    for ex, pool in zip(batch, pools):
        for text in (ex.positive, *pool):
            passages.setdefault(text, len(passages))
    q = model.encode_batch([tokenize(ex.query) for ex in batch], config.max_query_len)
    p = model.encode_batch([tokenize(t) for t in passages], config.max_passage_len)
    sims = q @ p.T
    positive = np.array([passages[ex.positive] for ex in batch])
    allowed = np.zeros((len(batch), len(passages)), dtype=bool)
    for i, (ex, pool) in enumerate(zip(batch, pools)):
        allowed[i, positive[i]] = True
        allowed[i, [passages[t] for t in pool]] = True
    return info_nce_matrix(sims, positive, allowed, config.temperature)


def train(config: TrainConfig, dataset: Sequence[TrainingExample], model: Encoder, on_step=None) -> TrainResult:
    """Optimise ``model`` in place; returns it with the per-step loss trace.

    Stops after ``epochs``, ``max_steps`` or ``time_budget_s``, whichever
    comes first.  Shuffling depends only on ``config.seed``.
    """
    import time

    if not dataset:
        raise ContractError("training dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    opt = Adam(params, config.learning_rate)
    result = TrainResult(model)
    start = time.perf_counter()
    step = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(dataset))
        for b0 in range(0, len(order), config.batch_size):
            batch = [dataset[i] for i in order[b0 : b0 + config.batch_size]]
            model.zero_grad()
            loss = batch_loss(model, batch, config)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(f"non-finite loss {value} at step {step}")
            T.backward(loss)
            scale = 1.0
            if config.grad_clip is not None:
                norm = math.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None))
                if norm > config.grad_clip:
                    scale = config.grad_clip / norm
            opt.step(scale)
            result.losses.append(value)
            step += 1
            if on_step is not None:
                on_step(step, value)
            if config.max_steps is not None and step >= config.max_steps:
                break
            if config.time_budget_s is not None and time.perf_counter() - start >= config.time_budget_s:
                break
        else:
            continue
        break
    result.steps = step
    result.seconds = time.perf_counter() - start
    log.info("trained %d steps in %.1fs, final loss %.4f", step, result.seconds, result.losses[-1])
    return result
