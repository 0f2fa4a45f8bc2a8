"""Selective state space encoder.

Each block expands the stream, runs a short causal depthwise convolution,
then a diagonal SSM whose step size, input and readout vectors are computed
from the current token:

    delta_t = softplus(W_delta u_t + b_delta)      (per channel)
    B_t = W_B u_t,  C_t = W_C u_t                  (shared across channels)
    A_bar = exp(delta A)
    B_bar = (delta A)^-1 (exp(delta A) - 1) delta B
    h_t = A_bar h_{t-1} + B_bar u_t,   y_t = C_t . h_t

The recurrence is a single tape primitive with a hand-written reverse pass,
which keeps the tape O(layers) instead of O(layers * length).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, LengthError
from .model import BYTE_VOCAB_SIZE, EOS_TOKEN_ID, Encoder, rms_norm
from .tensor import Tensor

LIMIT_THRESHOLD = 1e-8
_SERIES_THRESHOLD = 1e-4
SCAN_CHUNK = 256


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int = BYTE_VOCAB_SIZE
    model_dim: int = 64
    layers: int = 2
    state_size: int = 16
    conv_width: int = 4
    expansion_factor: int = 2
    max_seq_len: int = 128
    eos_token_id: int = EOS_TOKEN_ID

    def __post_init__(self):
        if not self.eos_token_id < self.vocab_size:
            raise ContractError("eos_token_id must lie inside the vocabulary")
        if self.max_seq_len < 2:
            raise ContractError("max_seq_len must be at least 2")

    @property
    def inner_dim(self) -> int:
        return self.model_dim * self.expansion_factor


@dataclass
class SsmParams:
    """The selective-SSM part of one block; ``A`` is kept as ``-exp(a_log)``."""

    a_log: Tensor  # [d, N]
    w_delta: Tensor  # [d, d]
    b_delta: Tensor  # [d]
    w_b: Tensor  # [d, N]
    w_c: Tensor  # [d, N]

    @property
    def A(self) -> Tensor:
        return -T.exp(self.a_log)

    @property
    def d(self) -> int:
        return self.a_log.shape[0]

    @property
    def N(self) -> int:
        return self.a_log.shape[1]


# -- discretization ------------------------------------------------------------------


def _expm1_ratio(z: np.ndarray) -> np.ndarray:
    """(exp(z) - 1) / z, equal to 1 where |z| is below the limit threshold."""
    small = np.abs(z) < LIMIT_THRESHOLD
    safe = np.where(small, 1.0, z)
    return np.where(small, 1.0, np.expm1(safe) / safe)


def _expm1_ratio_deriv(z: np.ndarray) -> np.ndarray:
    """d/dz of (exp(z) - 1) / z."""
    small = np.abs(z) < _SERIES_THRESHOLD
    safe = np.where(small, 1.0, z)
    exact = (safe * np.exp(safe) - np.expm1(safe)) / (safe * safe)
    series = 0.5 + z / 3.0 + z * z / 8.0
    return np.where(small, series, exact)


def discretize_np(A: np.ndarray, B: np.ndarray, delta: np.ndarray):
    """Broadcasting core: A [d,N], B [..., N], delta [..., d] -> (A_bar, B_bar) [..., d, N]."""
    z = delta[..., :, None] * A
    a_bar = np.exp(z)
    b_bar = _expm1_ratio(z) * delta[..., :, None] * B[..., None, :]
    return a_bar, b_bar


def discretize(A, B, delta):
    """Zero-order-hold discretization of a diagonal SSM for one token.

    ``A`` is [d, N], ``B`` is [N] and ``delta`` is [d] (scalars broadcast).
    Returns ``(A_bar, B_bar)`` as [d, N] arrays.
    """
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_1d(np.asarray(B, dtype=np.float64))
    delta = np.atleast_1d(np.asarray(delta, dtype=np.float64))
    if np.any(delta <= 0):
        raise ContractError("discretization step delta must be strictly positive")
    if B.shape[-1] != A.shape[1] or delta.shape[-1] not in (1, A.shape[0]):
        raise DimensionError(f"incompatible shapes A={A.shape}, B={B.shape}, delta={delta.shape}")
    delta = np.broadcast_to(delta, delta.shape[:-1] + (A.shape[0],))
    return discretize_np(A, B, delta)


# -- the scan primitive --------------------------------------------------------------


def _scan_states(u, delta, A, Bm, Cm, keep: bool):
    """Run the recurrence; returns y and (if ``keep``) every state h_t."""
    nb, L, d = u.shape
    N = A.shape[1]
    h = np.zeros((nb, d, N))
    y = np.empty((nb, L, d))
    hs = np.empty((nb, L, d, N)) if keep else None
    for c0 in range(0, L, SCAN_CHUNK):
        c1 = min(L, c0 + SCAN_CHUNK)
        a_bar, b_bar = discretize_np(A, Bm[:, c0:c1], delta[:, c0:c1])
        inject = b_bar * u[:, c0:c1, :, None]
        chunk = hs[:, c0:c1] if keep else np.empty((nb, c1 - c0, d, N))
        for t in range(c1 - c0):
            h = a_bar[:, t] * h + inject[:, t]
            chunk[:, t] = h
        y[:, c0:c1] = np.einsum("btdn,btn->btd", chunk, Cm[:, c0:c1])
    return y, hs


def selective_scan(u, delta, A, Bm, Cm) -> Tensor:
    """Sequential selective scan from h_0 = 0.

    Shapes: ``u``, ``delta`` [batch, L, d]; ``A`` [d, N]; ``Bm``, ``Cm``
    [batch, L, N].  Unbatched [L, d] / [L, N] inputs are accepted too.
    Returns y [batch, L, d] (or [L, d]).
    """
    u, delta, A, Bm, Cm = (T.as_tensor(v) for v in (u, delta, A, Bm, Cm))
    squeeze = u.ndim == 2
    ud, dd, bd, cd = (v.data[None] if squeeze else v.data for v in (u, delta, Bm, Cm))
    ad = A.data
    if ud.ndim != 3 or dd.shape != ud.shape or ad.shape[0] != ud.shape[2]:
        raise DimensionError(f"scan shapes u={u.shape}, delta={delta.shape}, A={A.shape}")
    if bd.shape != ud.shape[:2] + (ad.shape[1],) or cd.shape != bd.shape:
        raise DimensionError(f"scan shapes B={Bm.shape}, C={Cm.shape} do not match u={u.shape}, A={A.shape}")
    if ud.shape[1] < 1:
        raise DimensionError("scan needs at least one position")

    keep = T.is_recording() and any(v.requires_grad for v in (u, delta, A, Bm, Cm))
    y, hs = _scan_states(ud, dd, ad, bd, cd, keep)

    def bw(gy):
        if squeeze:
            gy = gy[None]
        a_bar, b_bar = discretize_np(ad, bd, dd)
        # gradient reaching each h_t, accumulated backwards through A_bar
        direct = gy[..., None] * cd[:, :, None, :]
        gh = np.empty_like(direct)
        carry = np.zeros_like(direct[:, 0])
        L = ud.shape[1]
        for t in range(L - 1, -1, -1):
            carry = direct[:, t] + carry
            gh[:, t] = carry
            carry = a_bar[:, t] * carry
        h_prev = np.concatenate([np.zeros_like(hs[:, :1]), hs[:, :-1]], axis=1)
        g_abar = gh * h_prev
        g_bbar = gh * ud[..., None]

        z = dd[..., None] * ad
        g_u = (gh * b_bar).sum(-1)
        g_cm = np.einsum("btd,btdn->btn", gy, hs)
        g_bm = np.einsum("btdn,btd->btn", g_bbar * _expm1_ratio(z), dd)
        # d B_bar / d delta = B exp(delta A);  d A_bar / d delta = A A_bar
        g_delta = (g_bbar * bd[:, :, None, :] * a_bar).sum(-1) + (g_abar * a_bar * ad).sum(-1)
        g_a = (g_abar * a_bar * dd[..., None]).sum((0, 1)) + (
            g_bbar * bd[:, :, None, :] * (dd * dd)[..., None] * _expm1_ratio_deriv(z)
        ).sum((0, 1))
        if squeeze:
            g_u, g_delta, g_bm, g_cm = g_u[0], g_delta[0], g_bm[0], g_cm[0]
        return g_u, g_delta, g_a, g_bm, g_cm

    return T.Tensor.from_op(y[0] if squeeze else y, (u, delta, A, Bm, Cm), bw)


def selection_params(x, params: SsmParams):
    """Token-dependent (delta, B, C) for inputs [..., d]."""
    x = T.as_tensor(x)
    if x.shape[-1] != params.d:
        raise DimensionError(f"selection expects width {params.d}, got {x.shape}")
    if x.ndim == 1:
        delta, b, c = selection_params(x.reshape(1, -1), params)
        return delta.reshape(-1), b.reshape(-1), c.reshape(-1)
    delta = T.softplus(x @ params.w_delta + params.b_delta)
    return delta, x @ params.w_b, x @ params.w_c


def ssm_forward(u, params: SsmParams) -> Tensor:
    """Selective SSM over u [batch, L, d] (or [L, d]) with selection from ``params``."""
    delta, Bm, Cm = selection_params(u, params)
    return selective_scan(u, delta, params.A, Bm, Cm)


# -- causal depthwise convolution ---------------------------------------------------


def causal_conv1d(x, weight, bias) -> Tensor:
    """Depthwise causal convolution: out[t] = bias + sum_k weight[:, k] * x[t - K + 1 + k]."""
    x, weight, bias = T.as_tensor(x), T.as_tensor(weight), T.as_tensor(bias)
    nb, L, c = x.shape
    K = weight.shape[1]
    padded = np.concatenate([np.zeros((nb, K - 1, c)), x.data], axis=1)
    out = np.broadcast_to(bias.data, (nb, L, c)).copy()
    for k in range(K):
        out += padded[:, k : k + L] * weight.data[:, k]

    def bw(g):
        gpad = np.zeros_like(padded)
        gw = np.empty_like(weight.data)
        for k in range(K):
            gpad[:, k : k + L] += g * weight.data[:, k]
            gw[:, k] = (g * padded[:, k : k + L]).sum((0, 1))
        return gpad[:, K - 1 :], gw, g.sum((0, 1))

    return T.Tensor.from_op(out, (x, weight, bias), bw)


# -- encoder -------------------------------------------------------------------------------

_BLOCK_PARAMS = ("norm", "in_proj", "conv_w", "conv_b", "a_log", "w_delta", "b_delta", "w_b", "w_c", "out_proj")


class SsmEncoder(Encoder):
    MAGIC = b"SSMR1"

    @classmethod
    def config_class(cls):
        return EncoderConfig

    def _param_specs(self):
        c = self.config
        d, e, n = c.model_dim, c.inner_dim, c.state_size
        shapes = {
            "norm": (d,),
            "in_proj": (d, 2 * e),
            "conv_w": (e, c.conv_width),
            "conv_b": (e,),
            "a_log": (e, n),
            "w_delta": (e, e),
            "b_delta": (e,),
            "w_b": (e, n),
            "w_c": (e, n),
            "out_proj": (e, d),
        }
        specs = [("embed", (c.vocab_size, d))]
        for i in range(c.layers):
            specs += [(f"layers.{i}.{k}", shapes[k]) for k in _BLOCK_PARAMS]
        specs.append(("final_norm", (d,)))
        return specs

    @classmethod
    def init(cls, config: EncoderConfig, seed: int = 0) -> "SsmEncoder":
        rng = np.random.default_rng(seed)
        model = cls.__new__(cls)
        model.config = config
        d, e, n = config.model_dim, config.inner_dim, config.state_size
        out_scale = 1.0 / np.sqrt(e * 2 * config.layers)
        params = {}
        for name, shape in model._param_specs():
            key = name.rsplit(".", 1)[-1]
            if key == "embed":
                val = rng.normal(0.0, 1.0, shape)
            elif key in ("norm", "final_norm"):
                val = np.ones(shape)
            elif key == "in_proj":
                val = rng.normal(0.0, d**-0.5, shape)
            elif key == "conv_w":
                val = rng.uniform(-1.0, 1.0, shape) / np.sqrt(config.conv_width)
            elif key == "conv_b":
                val = np.zeros(shape)
            elif key == "a_log":
                # A[:, n] = -(n + 1)
                val = np.log(np.broadcast_to(np.arange(1, n + 1, dtype=np.float64), shape))
            elif key == "w_delta":
                val = rng.normal(0.0, 0.1 * e**-0.5, shape)
            elif key == "b_delta":
                dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), shape))
                val = dt + np.log(-np.expm1(-dt))  # inverse softplus
            elif key in ("w_b", "w_c"):
                val = rng.normal(0.0, e**-0.5, shape)
            elif key == "out_proj":
                val = rng.normal(0.0, out_scale, shape)
            else:  # pragma: no cover
                raise KeyError(name)
            params[name] = Tensor(val, requires_grad=True)
        model.params = params
        return model

    def with_max_len(self, max_seq_len: int) -> "SsmEncoder":
        """Same weights, different length limit; the SSM has no positional parameters."""
        model = SsmEncoder.__new__(SsmEncoder)
        model.config = replace(self.config, max_seq_len=max_seq_len)
        model.params = self.params
        return model

    def layer_params(self, i: int) -> SsmParams:
        p = self.params
        return SsmParams(
            a_log=p[f"layers.{i}.a_log"],
            w_delta=p[f"layers.{i}.w_delta"],
            b_delta=p[f"layers.{i}.b_delta"],
            w_b=p[f"layers.{i}.w_b"],
            w_c=p[f"layers.{i}.w_c"],
        )

    def block_forward(self, x, i: int) -> Tensor:
        """One residual block over x [batch, L, model_dim] (or [L, model_dim])."""
        x = T.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = x.reshape(1, *x.shape)
        if x.shape[1] > self.config.max_seq_len:
            raise LengthError(f"sequence length {x.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        p = self.params
        e = self.config.inner_dim
        h = rms_norm(x, p[f"layers.{i}.norm"])
        xz = h @ p[f"layers.{i}.in_proj"]
        u = T.silu(causal_conv1d(xz[..., :e], p[f"layers.{i}.conv_w"], p[f"layers.{i}.conv_b"]))
        y = ssm_forward(u, self.layer_params(i))
        y = y * T.silu(xz[..., e:])
        out = x + y @ p[f"layers.{i}.out_proj"]
        return out.reshape(*out.shape[1:]) if squeeze else out

    def hidden_states(self, ids: np.ndarray) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.shape[1] > self.config.max_seq_len:
            raise LengthError(f"sequence length {ids.shape[1]} exceeds max_seq_len {self.config.max_seq_len}")
        x = self.params["embed"][ids]
        for i in range(self.config.layers):
            x = self.block_forward(x, i)
        return rms_norm(x, self.params["final_norm"])


def encode(tokens, model: Encoder, max_len: int | None = None) -> np.ndarray:
    """Unit-norm embedding of one token list (EOS appended, last position pooled)."""
    return model.encode(tokens, max_len)
