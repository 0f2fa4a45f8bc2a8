"""Binary-relevance ranking metrics: MRR@k, Recall@k, nDCG@k."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from ..errors import EvaluationError

Rankings = Mapping[str, Sequence[str]]
Qrels = Mapping[str, "set[str] | Sequence[str]"]


def _relevant(qrels: Qrels, qid: str) -> set[str]:
    if qid not in qrels:
        raise EvaluationError(f"query {qid!r} has no entry in qrels")
    rel = set(qrels[qid])
    if not rel:
        raise EvaluationError(f"query {qid!r} has no relevant documents")
    return rel


def _per_query_rr(ranking: Sequence[str], rel: set[str], k: int) -> float:
    for rank, doc_id in enumerate(ranking[:k], 1):
        if doc_id in rel:
            return 1.0 / rank
    return 0.0


def _per_query_recall(ranking: Sequence[str], rel: set[str], k: int) -> float:
    return len(rel.intersection(ranking[:k])) / len(rel)


def _per_query_ndcg(ranking: Sequence[str], rel: set[str], k: int) -> float:
    dcg = sum(1.0 / math.log2(rank + 1) for rank, d in enumerate(ranking[:k], 1) if d in rel)
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, len(rel)) + 1))
    return dcg / ideal


def _mean(rankings: Rankings, qrels: Qrels, k: int, fn) -> float:
    if not rankings:
        raise EvaluationError("no rankings to evaluate")
    return sum(fn(r, _relevant(qrels, q), k) for q, r in rankings.items()) / len(rankings)


def mrr_at_k(rankings: Rankings, qrels: Qrels, k: int = 10) -> float:
    return _mean(rankings, qrels, k, _per_query_rr)


def recall_at_k(rankings: Rankings, qrels: Qrels, k: int = 1000) -> float:
    return _mean(rankings, qrels, k, _per_query_recall)


def ndcg_at_k(rankings: Rankings, qrels: Qrels, k: int = 10) -> float:
    return _mean(rankings, qrels, k, _per_query_ndcg)


@dataclass
class EvalResult:
    mrr_at_10: float
    recall_at_k: float
    ndcg_at_10: float
    k: int
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "mrr_at_10": self.mrr_at_10,
            "recall_at_k": self.recall_at_k,
            "ndcg_at_10": self.ndcg_at_10,
            "k": self.k,
            "per_query": self.per_query,
        }


def evaluate(rankings: Rankings, qrels: Qrels, k: int = 1000) -> EvalResult:
    per_query = {}
    for qid, ranking in rankings.items():
        rel = _relevant(qrels, qid)
        per_query[qid] = {
            "rr_at_10": _per_query_rr(ranking, rel, 10),
            "recall_at_k": _per_query_recall(ranking, rel, k),
            "ndcg_at_10": _per_query_ndcg(ranking, rel, 10),
        }
    return EvalResult(
        mrr_at_10=mrr_at_k(rankings, qrels, 10),
        recall_at_k=recall_at_k(rankings, qrels, k),
        ndcg_at_10=ndcg_at_k(rankings, qrels, 10),
        k=k,
        per_query=per_query,
    )
