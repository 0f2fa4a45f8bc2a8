"""Okapi BM25 over whitespace tokens, used to mine hard negatives."""

from __future__ import annotations

import logging
import math
from collections import Counter
from typing import Sequence

log = logging.getLogger(__name__)


def bm25_tokens(text: str) -> list[str]:
    return text.lower().split()


class BM25:
    def __init__(self, corpus: Sequence[tuple[str, str]], k1: float = 0.9, b: float = 0.4):
        self.k1 = k1
        self.b = b
        self.doc_ids = [doc_id for doc_id, _ in corpus]
        self.tf = [Counter(bm25_tokens(text)) for _, text in corpus]
        self.lengths = [sum(tf.values()) for tf in self.tf]
        self.N = len(self.doc_ids)
        self.avgdl = sum(self.lengths) / self.N if self.N else 0.0
        self.df: Counter = Counter()
        for tf in self.tf:
            self.df.update(tf.keys())

    def idf(self, term: str) -> float:
        df = self.df.get(term, 0)
        return math.log((self.N - df + 0.5) / (df + 0.5) + 1.0)

    def scores(self, query: str) -> list[float]:
        terms = bm25_tokens(query)
        idf = {t: self.idf(t) for t in set(terms)}
        out = []
        for tf, dl in zip(self.tf, self.lengths):
            norm = self.k1 * (1.0 - self.b + self.b * dl / self.avgdl) if self.avgdl else self.k1
            s = 0.0
            for t in terms:
                f = tf.get(t)
                if f:
                    s += idf[t] * f * (self.k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def rank(self, query: str, exclude: Sequence[str] = ()) -> list[tuple[str, float]]:
        """All documents by descending score, ties by ascending id."""
        skip = set(exclude)
        pairs = [(d, s) for d, s in zip(self.doc_ids, self.scores(query)) if d not in skip]
        pairs.sort(key=lambda p: (-p[1], p[0]))
        return pairs


def mine_negatives_bm25(query: str, corpus, n: int, exclude: str | None = None, bm25: BM25 | None = None) -> list[str]:
    """Ids of the ``n`` highest-scoring documents other than ``exclude``.

    ``corpus`` is a sequence of (id, text); pass a prebuilt ``bm25`` to avoid
    re-indexing for every query.
    """
    bm25 = bm25 or BM25(corpus)
    available = bm25.N - (1 if exclude in bm25.doc_ids else 0)
    if n > available:
        log.warning("requested %d negatives but only %d candidates exist; clamping", n, available)
        n = available
    return [d for d, _ in bm25.rank(query, exclude=[exclude] if exclude is not None else [])[:n]]
