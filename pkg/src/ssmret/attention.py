"""Causal self-attention encoder used as the quadratic-time baseline.

Pre-norm decoder blocks with learned absolute positions.  Because the
position table has exactly ``max_seq_len`` rows, this encoder cannot be run
on longer inputs; ``with_max_len`` refuses to grow it.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, LengthError
from .model import BYTE_VOCAB_SIZE, EOS_TOKEN_ID, Encoder, rms_norm
from .tensor import Tensor

# query rows per block when attention runs without a tape
_NO_GRAD_QUERY_BLOCK = 512


@dataclass(frozen=True)
class AttnConfig:
    vocab_size: int = BYTE_VOCAB_SIZE
    model_dim: int = 64
    layers: int = 2
    heads: int = 4
    max_seq_len: int = 128
    eos_token_id: int = EOS_TOKEN_ID
    ffn_dim: int = 256

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ContractError(f"model_dim {self.model_dim} is not divisible by heads {self.heads}")
        if not self.eos_token_id < self.vocab_size:
            raise ContractError("eos_token_id must lie inside the vocabulary")
        if self.max_seq_len < 2:
            raise ContractError("max_seq_len must be at least 2")


def causal_mask(L: int) -> np.ndarray:
    """Boolean [L, L]; position t may attend to positions 0..t."""
    return np.tril(np.ones((L, L), dtype=bool))


def _attention_no_grad(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Blocked causal attention over [batch, heads, L, hd] arrays without a tape."""
    L, hd = q.shape[-2], q.shape[-1]
    out = np.empty_like(v)
    scale = 1.0 / np.sqrt(hd)
    for r0 in range(0, L, _NO_GRAD_QUERY_BLOCK):
        r1 = min(L, r0 + _NO_GRAD_QUERY_BLOCK)
        scores = np.matmul(q[..., r0:r1, :], np.swapaxes(k[..., :r1, :], -1, -2)) * scale
        rows = np.arange(r0, r1)[:, None]
        cols = np.arange(r1)[None, :]
        scores = np.where(cols <= rows, scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        np.exp(scores, out=scores)
        scores /= scores.sum(axis=-1, keepdims=True)
        out[..., r0:r1, :] = np.matmul(scores, v[..., :r1, :])
    return out


def multi_head_attention(x, wq, wk, wv, heads: int) -> Tensor:
    """Causal scaled dot-product attention before the output projection.

    ``x`` is [batch, L, D]; returns the concatenated head outputs [batch, L, D].
    """
    x = T.as_tensor(x)
    nb, L, D = x.shape
    hd = D // heads

    def split(t):
        return t.reshape(nb, L, heads, hd).transpose(0, 2, 1, 3)

    q, k, v = split(x @ wq), split(x @ wk), split(x @ wv)
    if not T.is_recording() or not any(t.requires_grad for t in (q, k, v)):
        ctx = Tensor._wrap(_attention_no_grad(q.data, k.data, v.data))
    else:
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(hd))
        weights = T.softmax_lastdim(scores, mask=causal_mask(L))
        ctx = weights @ v
    return ctx.transpose(0, 2, 1, 3).reshape(nb, L, D)


class AttentionEncoder(Encoder):
    MAGIC = b"ATNR1"

    @classmethod
    def config_class(cls):
        return AttnConfig

    def _param_specs(self):
        c = self.config
        d, f = c.model_dim, c.ffn_dim
        block = [
            ("norm1", (d,)),
            ("wq", (d, d)),
            ("wk", (d, d)),
            ("wv", (d, d)),
            ("wo", (d, d)),
            ("norm2", (d,)),
            ("w1", (d, f)),
            ("b1", (f,)),
            ("w2", (f, d)),
            ("b2", (d,)),
        ]
        specs = [("embed", (c.vocab_size, d)), ("pos", (c.max_seq_len, d))]
        for i in range(c.layers):
            specs += [(f"layers.{i}.{k}", s) for k, s in block]
        specs.append(("final_norm", (d,)))
        return specs

    @classmethod
    def init(cls, config: AttnConfig, seed: int = 0) -> "AttentionEncoder":
        rng = np.random.default_rng(seed)
        model = cls.__new__(cls)
        model.config = config
        d, f = config.model_dim, config.ffn_dim
        out_scale = 1.0 / np.sqrt(2 * config.layers)
        params = {}
        for name, shape in model._param_specs():
            key = name.rsplit(".", 1)[-1]
            if key == "embed":
                val = rng.normal(0.0, 1.0, shape)
            elif key == "pos":
                val = rng.normal(0.0, 0.1, shape)
            elif key.startswith("norm") or key == "final_norm":
                val = np.ones(shape)
            elif key in ("wq", "wk", "wv", "w1"):
                val = rng.normal(0.0, d**-0.5, shape)
            elif key == "wo":
                val = rng.normal(0.0, d**-0.5 * out_scale, shape)
            elif key == "w2":
                val = rng.normal(0.0, f**-0.5 * out_scale, shape)
            elif key in ("b1", "b2"):
                val = np.zeros(shape)
            else:  # pragma: no cover
                raise KeyError(name)
            params[name] = Tensor(val, requires_grad=True)
        model.params = params
        return model

    def with_max_len(self, max_seq_len: int) -> "AttentionEncoder":
        """Shrink the usable length; growing past the trained position table is a LengthError."""
        if max_seq_len > self.config.max_seq_len:
            raise LengthError(
                f"attention encoder has {self.config.max_seq_len} learned positions; cannot run at {max_seq_len}"
            )
        model = AttentionEncoder.__new__(AttentionEncoder)
        model.config = self.config
        model.params = self.params
        return model

    def block_forward(self, x, i: int) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[1] > self.config.max_seq_len:
            raise LengthError(f"sequence length {x.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        if x.shape[-1] != self.config.model_dim:
            raise DimensionError(f"expected width {self.config.model_dim}, got {x.shape}")
        p = {k.rsplit(".", 1)[-1]: v for k, v in self.params.items() if k.startswith(f"layers.{i}.")}
        h = rms_norm(x, p["norm1"])
        x = x + multi_head_attention(h, p["wq"], p["wk"], p["wv"], self.config.heads) @ p["wo"]
        h = rms_norm(x, p["norm2"])
        return x + T.silu(h @ p["w1"] + p["b1"]) @ p["w2"] + p["b2"]

    def hidden_states(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        L = ids.shape[1]
        if L > self.config.max_seq_len:
            raise LengthError(f"sequence length {L} exceeds max_seq_len {self.config.max_seq_len}")
        x = self.params["embed"][ids] + self.params["pos"][:L]
        for i in range(self.config.layers):
            x = self.block_forward(x, i)
        return rms_norm(x, self.params["final_norm"])


def encode_baseline(tokens, model: AttentionEncoder, max_len: int | None = None) -> np.ndarray:
    return model.encode(tokens, max_len)


def matched_attention_config(ssm_config, heads: int = 4, tolerance: float = 0.10) -> AttnConfig:
    """Attention config whose parameter count is within ``tolerance`` of the SSM's.

    Searches model width (a multiple of ``heads``) and feed-forward width; the
    position table grows with ``max_seq_len``, so long configs get narrower
    attention models.
    """
    from .ssm import SsmEncoder

    target = SsmEncoder.__new__(SsmEncoder)
    target.config = ssm_config
    goal = target.num_parameters()
    best = None
    for d in range(heads, 4 * ssm_config.model_dim + 1, heads):
        for mult in (4, 3, 2, 1):
            cfg = AttnConfig(
                vocab_size=ssm_config.vocab_size,
                model_dim=d,
                layers=ssm_config.layers,
                heads=heads,
                max_seq_len=ssm_config.max_seq_len,
                eos_token_id=ssm_config.eos_token_id,
                ffn_dim=mult * d,
            )
            probe = AttentionEncoder.__new__(AttentionEncoder)
            probe.config = cfg
            gap = abs(probe.num_parameters() - goal) / goal
            if best is None or gap < best[0]:
                best = (gap, cfg)
    if best[0] > tolerance:
        raise ContractError(f"no attention config within {tolerance:.0%} of {goal} parameters")
    return best[1]
