"""Synthetic retrieval collections and their on-disk formats.

Each document hides a unique combination of "key" words among filler drawn
from a Zipfian vocabulary; its query restates the key words in shuffled
order with a few filler distractors.  Relevance is exactly the generating
pairing.  Long mode pads documents with filler up to a target character
count and drops the key phrase at a uniformly random word offset.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import ContractError, IngestionError

_CONSONANTS = "bcdfghjklmnprstvwz"
_VOWELS = "aeiou"


@dataclass(frozen=True)
class VocabProfile:
    filler_words: int = 400
    key_words: int = 32
    key_len: int = 3
    zipf_exponent: float = 1.1
    distractors: int = 2
    doc_chars: int = 56
    long_mode: bool = False
    target_chars: int = 8192


@dataclass(frozen=True)
class TrainingExample:
    query: str
    positive: str
    negatives: tuple[str, ...]
    negative_source: str = "bm25"

    def __post_init__(self):
        if self.positive in self.negatives:
            raise ContractError("the positive passage cannot also be a negative")
        if self.negative_source not in ("bm25", "random"):
            raise ContractError(f"unknown negative source {self.negative_source!r}")


@dataclass
class SyntheticDataset:
    corpus: list[tuple[str, str]]
    queries: list[tuple[str, str]]
    qrels: dict[str, set[str]]
    key_phrases: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def doc_text(self) -> dict[str, str]:
        return dict(self.corpus)

    def split(self, n_train: int) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
        """First ``n_train`` queries for training, the rest held out."""
        return self.queries[:n_train], self.queries[n_train:]


def _pseudo_words(rng: np.random.Generator, count: int, min_syl: int, max_syl: int, taken: set[str]) -> list[str]:
    words: list[str] = []
    while len(words) < count:
        syl = int(rng.integers(min_syl, max_syl + 1))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syl))
        if w not in taken:
            taken.add(w)
            words.append(w)
    return words


def _zipf_probs(n: int, s: float) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def generate_synthetic_dataset(
    seed: int,
    n_docs: int,
    n_queries: int,
    vocab_profile: VocabProfile | None = None,
) -> SyntheticDataset:
    prof = vocab_profile or VocabProfile()
    if n_queries > n_docs:
        raise ContractError(f"n_queries ({n_queries}) cannot exceed n_docs ({n_docs})")
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    filler = _pseudo_words(rng, prof.filler_words, 1, 3, taken)
    keys = _pseudo_words(rng, prof.key_words, 3, 4, taken)
    probs = _zipf_probs(len(filler), prof.zipf_exponent)

    def draw_filler(n: int) -> list[str]:
        return [filler[i] for i in rng.choice(len(filler), size=n, p=probs)]

    combos: set[frozenset[int]] = set()
    corpus, key_phrases = [], {}
    target_len = prof.target_chars if prof.long_mode else prof.doc_chars
    for i in range(n_docs):
        while True:
            pick = rng.choice(len(keys), size=prof.key_len, replace=False)
            if frozenset(pick.tolist()) not in combos:
                combos.add(frozenset(pick.tolist()))
                break
        phrase = tuple(keys[j] for j in pick)
        words: list[str] = []
        budget = target_len - len(" ".join(phrase))
        while len(" ".join(words)) < budget:
            words.extend(draw_filler(8))
        # trim back to the budget, then insert the key phrase at a random word slot
        while words and len(" ".join(words)) > budget:
            words.pop()
        slot = int(rng.integers(0, len(words) + 1))
        text = " ".join(words[:slot] + list(phrase) + words[slot:])
        if prof.long_mode:
            while len(text) < prof.target_chars:
                text += " " + draw_filler(1)[0]
        doc_id = f"d{i:05d}"
        corpus.append((doc_id, text))
        key_phrases[doc_id] = phrase

    targets = rng.permutation(n_docs)[:n_queries]
    queries, qrels = [], {}
    for qi, di in enumerate(targets):
        doc_id = corpus[di][0]
        words = list(key_phrases[doc_id]) + draw_filler(prof.distractors)
        rng.shuffle(words)
        qid = f"q{qi:05d}"
        queries.append((qid, " ".join(words)))
        qrels[qid] = {doc_id}
    return SyntheticDataset(corpus, queries, qrels, key_phrases)


def make_training_examples(
    queries: Sequence[tuple[str, str]],
    qrels: dict[str, set[str]],
    corpus: Sequence[tuple[str, str]],
    n_negatives: int,
    source: str = "bm25",
    seed: int = 0,
) -> list[TrainingExample]:
    """Pair each query with its positive passage and ``n_negatives`` mined negatives."""
    from .bm25 import BM25, mine_negatives_bm25

    texts = dict(corpus)
    doc_ids = [d for d, _ in corpus]
    rng = np.random.default_rng(seed)
    bm25 = BM25(corpus) if source == "bm25" else None
    out = []
    for qid, qtext in queries:
        pos_id = sorted(qrels[qid])[0]
        if source == "bm25":
            neg_ids = mine_negatives_bm25(qtext, corpus, n_negatives, exclude=pos_id, bm25=bm25)
        elif source == "random":
            pool = [d for d in doc_ids if d not in qrels[qid]]
            neg_ids = [pool[i] for i in rng.choice(len(pool), size=min(n_negatives, len(pool)), replace=False)]
        else:
            raise ContractError(f"unknown negative source {source!r}")
        negs = tuple(texts[d] for d in neg_ids if texts[d] != texts[pos_id])
        out.append(TrainingExample(qtext, texts[pos_id], negs, source))
    return out


# -- file formats ---------------------------------------------------------------------


def write_jsonl(path: str | os.PathLike, rows: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rid, text in rows:
            fh.write(json.dumps({"id": rid, "text": text}, ensure_ascii=False) + "\n")


def read_jsonl_pairs(path: str | os.PathLike) -> list[tuple[str, str]]:
    from ..index import read_jsonl

    return list(read_jsonl(path))


def write_qrels(path: str | os.PathLike, qrels: dict[str, set[str]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(qrels):
            for doc_id in sorted(qrels[qid]):
                fh.write(f"{qid}\t{doc_id}\t1\n")


def read_qrels(path: str | os.PathLike) -> dict[str, set[str]]:
    """Relevant (relevance 1) document ids per query; relevance-0 rows register the query only."""
    qrels: dict[str, set[str]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or parts[2] not in ("0", "1"):
            raise IngestionError(f"{path}:{lineno}: expected query_id<TAB>doc_id<TAB>0|1")
        entry = qrels.setdefault(parts[0], set())
        if parts[2] == "1":
            entry.add(parts[1])
    return qrels
