"""Exact cosine top-k over a flat matrix of unit-norm embeddings."""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ContractError, DimMismatchError, IngestionError, MagicError, TruncatedFileError
from .model import Encoder, atomic_write

INDEX_MAGIC = b"EIDX1"


@dataclass(frozen=True)
class ScoredHit:
    doc_id: str
    score: float


@dataclass
class EmbeddingIndex:
    dim: int
    ids: list[str] = field(default_factory=list)
    vectors: np.ndarray | None = None

    def __post_init__(self):
        if self.vectors is None:
            self.vectors = np.zeros((0, self.dim))
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.shape != (len(self.ids), self.dim):
            raise DimMismatchError(f"vectors {self.vectors.shape} do not match {len(self.ids)} ids x dim {self.dim}")
        if len(set(self.ids)) != len(self.ids):
            raise IngestionError("index ids must be unique")
        # position of every row in ascending-id order, used for tie-breaks
        order = sorted(range(len(self.ids)), key=self.ids.__getitem__)
        self._id_rank = np.empty(len(self.ids), dtype=np.int64)
        self._id_rank[order] = np.arange(len(self.ids))

    @property
    def count(self) -> int:
        return len(self.ids)


def similarity(e_q, e_p) -> float:
    """Cosine similarity of two nonzero vectors."""
    e_q = np.asarray(e_q, dtype=np.float64)
    e_p = np.asarray(e_p, dtype=np.float64)
    if e_q.shape != e_p.shape:
        raise ContractError(f"dimension mismatch {e_q.shape} vs {e_p.shape}")
    nq, np_ = np.linalg.norm(e_q), np.linalg.norm(e_p)
    if nq == 0 or np_ == 0:
        raise ContractError("cosine similarity is undefined for a zero vector")
    return float(e_p @ e_q / (np_ * nq))


def read_jsonl(path: str | os.PathLike) -> Iterator[tuple[str, str]]:
    """Yield (id, text) pairs from a JSON-lines file with "id" and "text" fields."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                yield str(obj["id"]), obj["text"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise IngestionError(f"{path}:{lineno}: expected an object with 'id' and 'text'") from exc


def build_index(
    corpus: Iterable[tuple[str, str]],
    encoder: Encoder,
    batch_size: int = 32,
    max_len: int | None = None,
) -> EmbeddingIndex:
    ids, texts, seen = [], [], set()
    for doc_id, text in corpus:
        if doc_id in seen:
            raise IngestionError(f"duplicate document id {doc_id!r}")
        seen.add(doc_id)
        ids.append(doc_id)
        texts.append(text)
    vectors = encoder.embed_texts(texts, max_len=max_len, batch_size=batch_size)
    return EmbeddingIndex(encoder.config.model_dim, ids, vectors)


def search_vector(query_vec, index: EmbeddingIndex, k: int) -> list[ScoredHit]:
    """Exact top-k by dot product against the stored unit rows."""
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    if index.count == 0:
        return []
    q = np.asarray(query_vec, dtype=np.float64)
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ContractError("query vector is zero")
    scores = index.vectors @ (q / norm)
    order = np.lexsort((index._id_rank, -scores))[: min(k, index.count)]
    return [ScoredHit(index.ids[i], float(scores[i])) for i in order]


def top_k(query_text: str, index: EmbeddingIndex, k: int, encoder: Encoder, max_len: int | None = None) -> list[ScoredHit]:
    if k < 1:
        raise ContractError(f"k must be at least 1, got {k}")
    q = encoder.embed_texts([query_text], max_len=max_len)[0]
    return search_vector(q, index, k)


# -- persistence ----------------------------------------------------------------------


def index_to_bytes(index: EmbeddingIndex) -> bytes:
    parts = [INDEX_MAGIC, struct.pack("<II", index.dim, index.count)]
    for doc_id in index.ids:
        raw = doc_id.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise IngestionError(f"document id longer than 65535 bytes: {doc_id[:40]!r}...")
        parts.append(struct.pack("<H", len(raw)) + raw)
    parts.append(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
    return b"".join(parts)


def save_index(index: EmbeddingIndex, path: str | os.PathLike) -> None:
    atomic_write(path, index_to_bytes(index))


def index_from_bytes(blob: bytes, expected_dim: int | None = None) -> EmbeddingIndex:
    if not blob.startswith(INDEX_MAGIC):
        raise MagicError("not an EIDX1 index file")
    pos = len(INDEX_MAGIC)
    if len(blob) < pos + 8:
        raise TruncatedFileError("index header is truncated")
    dim, count = struct.unpack_from("<II", blob, pos)
    pos += 8
    if expected_dim is not None and dim != expected_dim:
        raise DimMismatchError(f"index dim {dim} does not match expected {expected_dim}")
    ids = []
    for _ in range(count):
        if len(blob) < pos + 2:
            raise TruncatedFileError("id table is truncated")
        (n,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        if len(blob) < pos + n:
            raise TruncatedFileError("id table is truncated")
        ids.append(blob[pos : pos + n].decode("utf-8"))
        pos += n
    need = 4 * dim * count
    if len(blob) < pos + need:
        raise TruncatedFileError(f"vector block has {len(blob) - pos} bytes, header needs {need}")
    if len(blob) > pos + need:
        raise DimMismatchError(f"{len(blob) - pos - need} trailing bytes after the vector block")
    vectors = np.frombuffer(blob, dtype="<f4", count=dim * count, offset=pos).astype(np.float64)
    return EmbeddingIndex(dim, ids, vectors.reshape(count, dim))


def load_index(path: str | os.PathLike, expected_dim: int | None = None) -> EmbeddingIndex:
    return index_from_bytes(Path(path).read_bytes(), expected_dim)


def run_queries(
    queries, index: EmbeddingIndex, encoder: Encoder, k: int, max_len: int | None = None, batch_size: int = 32
) -> dict[str, list[ScoredHit]]:
    """Top-k hits for every (qid, text) pair."""
    queries = list(queries)
    vecs = encoder.embed_texts([t for _, t in queries], max_len=max_len, batch_size=batch_size)
    return {qid: search_vector(v, index, k) for (qid, _), v in zip(queries, vecs)}
