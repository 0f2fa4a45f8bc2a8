"""InfoNCE contrastive loss over cosine similarities."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import tensor as T
from ..errors import ContractError
from ..tensor import Tensor


def info_nce(sim_pos, sim_negs: Sequence | Tensor, tau: float = 0.01) -> Tensor:
    """-log softmax of the positive among {positive} + negatives, at temperature ``tau``.

    Scores may be floats or tape tensors; the result is a scalar tensor.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    pos = T.as_tensor(sim_pos).reshape(1)
    if isinstance(sim_negs, Tensor):
        negs = sim_negs.reshape(-1)
    else:
        if len(sim_negs) == 0:
            raise ContractError("InfoNCE needs at least one negative")
        negs = T.concat([T.as_tensor(s).reshape(1) for s in sim_negs])
    if negs.shape[0] == 0:
        raise ContractError("InfoNCE needs at least one negative")
    logits = T.concat([pos, negs]) * (1.0 / tau)
    return T.logsumexp(logits, axis=-1) - logits[0]


def info_nce_matrix(sims: Tensor, positive: np.ndarray, allowed: np.ndarray, tau: float) -> Tensor:
    """Mean InfoNCE over queries from a [queries, passages] similarity matrix.

    ``positive[i]`` is the column of query i's positive; ``allowed[i]`` marks
    the columns (positive included) that enter its denominator.
    """
    if tau <= 0:
        raise ContractError(f"temperature must be positive, got {tau}")
    allowed = np.asarray(allowed, dtype=bool)
    rows = np.arange(sims.shape[0])
    if not allowed[rows, positive].all():
        raise ContractError("each query's positive column must be allowed")
    if (allowed.sum(axis=1) < 2).any():
        raise ContractError("InfoNCE needs at least one negative per query")
    logits = sims * (1.0 / tau)
    per_query = T.logsumexp(logits, axis=-1, mask=allowed) - logits[rows, positive]
    return per_query.mean()
