import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmret.errors import (
    ContractError,
    DimMismatchError,
    IngestionError,
    MagicError,
    TruncatedFileError,
)
from ssmret.index import (
    EmbeddingIndex,
    build_index,
    index_from_bytes,
    index_to_bytes,
    load_index,
    read_jsonl,
    save_index,
    search_vector,
    similarity,
    top_k,
)
from ssmret.model import tokenize
from ssmret.ssm import EncoderConfig, SsmEncoder


@pytest.fixture(scope="module")
def encoder():
    return SsmEncoder.init(EncoderConfig(model_dim=8, state_size=4, max_seq_len=32), seed=3)


def unit_rows(rng, n, d):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestSimilarity:
    def test_self(self):
        v = np.array([3.0, -1.0, 2.0])
        assert abs(similarity(v, v) - 1.0) < 1e-15

    def test_orthogonal(self):
        assert similarity([1.0, 0.0], [0.0, 1.0]) == 0.0

    def test_scale_invariant(self):
        rng = np.random.default_rng(0)
        q, p = rng.normal(size=5), rng.normal(size=5)
        assert abs(similarity(2 * q, p) - similarity(q, p)) < 1e-12

    def test_zero_vector(self):
        with pytest.raises(ContractError):
            similarity([0.0, 0.0], [1.0, 0.0])


class TestBuild:
    def test_empty_corpus(self, encoder, tmp_path):
        idx = build_index([], encoder)
        assert idx.count == 0
        save_index(idx, tmp_path / "e.eidx")
        assert load_index(tmp_path / "e.eidx").count == 0

    def test_rows_match_single_encodes(self, encoder):
        corpus = [("a", "first doc"), ("b", ""), ("c", "a somewhat longer third document")]
        idx = build_index(corpus, encoder, batch_size=2)
        assert idx.count == 3
        for row, (_, text) in zip(idx.vectors, corpus):
            assert np.max(np.abs(row - encoder.encode(tokenize(text)))) < 1e-9

    def test_deterministic_files(self, encoder, tmp_path):
        corpus = [(f"d{i}", f"text number {i}") for i in range(5)]
        save_index(build_index(corpus, encoder), tmp_path / "1.eidx")
        save_index(build_index(corpus, encoder), tmp_path / "2.eidx")
        assert (tmp_path / "1.eidx").read_bytes() == (tmp_path / "2.eidx").read_bytes()

    def test_duplicate_id(self, encoder):
        with pytest.raises(IngestionError, match="'x'"):
            build_index([("x", "a"), ("x", "b")], encoder)

    def test_jsonl_ingestion(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text(json.dumps({"id": "1", "text": "hi"}) + "\n\n" + json.dumps({"id": 2, "text": "yo"}) + "\n")
        assert list(read_jsonl(path)) == [("1", "hi"), ("2", "yo")]
        path.write_text('{"id": "1"}\n')
        with pytest.raises(IngestionError):
            list(read_jsonl(path))


class TestTopK:
    def test_self_retrieval(self, encoder):
        corpus = [("a", "alpha beta"), ("b", "gamma delta"), ("c", "epsilon")]
        idx = build_index(corpus, encoder)
        hits = top_k("gamma delta", idx, 1, encoder)
        assert hits[0].doc_id == "b" and abs(hits[0].score - 1.0) < 1e-9

    def test_clamp(self, encoder):
        idx = build_index([("a", "x"), ("b", "y")], encoder)
        assert len(top_k("x", idx, 10, encoder)) == 2

    def test_k_must_be_positive(self, encoder):
        idx = build_index([("a", "x")], encoder)
        with pytest.raises(ContractError):
            top_k("x", idx, 0, encoder)

    def test_full_scan_oracle(self):
        rng = np.random.default_rng(1)
        idx = EmbeddingIndex(6, [f"doc{i:02d}" for i in range(50)], unit_rows(rng, 50, 6))
        q = rng.normal(size=6)
        scores = []
        for doc_id, row in zip(idx.ids, idx.vectors):
            s = sum(a * b for a, b in zip(row, q / np.linalg.norm(q)))
            scores.append((doc_id, s))
        oracle = sorted(scores, key=lambda p: (-p[1], p[0]))
        hits = search_vector(q, idx, 50)
        assert [h.doc_id for h in hits] == [d for d, _ in oracle]
        assert np.allclose([h.score for h in hits], [s for _, s in oracle], atol=1e-12)

    def test_ties_by_ascending_id(self):
        v = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        idx = EmbeddingIndex(2, ["zeta", "alpha", "mid"], v)
        assert [h.doc_id for h in search_vector([1.0, 0.0], idx, 3)] == ["alpha", "zeta", "mid"]

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 100.0))
    def test_scaling_and_range(self, seed, scale):
        rng = np.random.default_rng(seed)
        idx = EmbeddingIndex(4, [str(i) for i in range(20)], unit_rows(rng, 20, 4))
        q = rng.normal(size=4)
        a = search_vector(q, idx, 20)
        b = search_vector(scale * q, idx, 20)
        assert [h.doc_id for h in a] == [h.doc_id for h in b]
        assert all(-1 - 1e-9 <= h.score <= 1 + 1e-9 for h in a)


class TestPersistence:
    def test_round_trip_idempotent(self, tmp_path):
        rng = np.random.default_rng(2)
        idx = EmbeddingIndex(5, ["a", "béta", "c"], unit_rows(rng, 3, 5))
        save_index(idx, tmp_path / "i.eidx")
        again = load_index(tmp_path / "i.eidx")
        save_index(again, tmp_path / "j.eidx")
        assert (tmp_path / "i.eidx").read_bytes() == (tmp_path / "j.eidx").read_bytes()
        assert again.ids == idx.ids

    def test_thousand_vectors_zero_ulp(self):
        rng = np.random.default_rng(3)
        vecs = unit_rows(rng, 1000, 16).astype(np.float32).astype(np.float64)
        idx = EmbeddingIndex(16, [f"d{i}" for i in range(1000)], vecs)
        loaded = index_from_bytes(index_to_bytes(idx))
        assert loaded.vectors.tobytes() == vecs.tobytes()
        assert np.all(np.abs(np.linalg.norm(loaded.vectors, axis=1) - 1) < 1e-6)

    def test_layout(self):
        idx = EmbeddingIndex(2, ["ab"], np.array([[0.6, 0.8]]))
        blob = index_to_bytes(idx)
        assert blob[:5] == b"EIDX1"
        assert blob[5:13] == (2).to_bytes(4, "little") + (1).to_bytes(4, "little")
        assert blob[13:17] == b"\x02\x00ab"
        assert np.frombuffer(blob[17:], dtype="<f4").tolist() == pytest.approx([0.6, 0.8])

    def test_errors_are_typed(self):
        rng = np.random.default_rng(4)
        blob = index_to_bytes(EmbeddingIndex(3, ["a", "b"], unit_rows(rng, 2, 3)))
        with pytest.raises(MagicError):
            index_from_bytes(b"NOPE1" + blob[5:])
        with pytest.raises(TruncatedFileError):
            index_from_bytes(blob[:-3])
        with pytest.raises(TruncatedFileError):
            index_from_bytes(blob[:9])
        with pytest.raises(DimMismatchError):
            index_from_bytes(blob, expected_dim=4)
        with pytest.raises(DimMismatchError):
            index_from_bytes(blob + b"\x00" * 4)
