import numpy as np
import pytest

from ssmret import tensor as T
from ssmret.attention import (
    AttentionEncoder,
    AttnConfig,
    causal_mask,
    encode_baseline,
    matched_attention_config,
    multi_head_attention,
)
from ssmret.errors import ContractError, LengthError, MagicError
from ssmret.model import load_encoder
from ssmret.ssm import EncoderConfig, SsmEncoder


def double_loop_attention(x, wq, wk, wv, heads):
    """Direct per-position, per-head causal attention."""
    L, D = x.shape
    hd = D // heads
    q, k, v = x @ wq, x @ wk, x @ wv
    out = np.zeros((L, D))
    for h in range(heads):
        sl = slice(h * hd, (h + 1) * hd)
        for t in range(L):
            scores = np.array([q[t, sl] @ k[s, sl] / np.sqrt(hd) for s in range(t + 1)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            for s in range(t + 1):
                out[t, sl] += w[s] * v[s, sl]
    return out


def small_attn(**kw):
    cfg = AttnConfig(**{"model_dim": 8, "heads": 2, "layers": 2, "max_seq_len": 16, "ffn_dim": 16, **kw})
    return AttentionEncoder.init(cfg, seed=2)


def weights(rng, D=8):
    return [rng.normal(size=(D, D)) for _ in range(3)]


class TestCausalAttention:
    def test_single_position_returns_value(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(1, 1, 8))
        wq, wk, wv = weights(rng)
        out = multi_head_attention(x, wq, wk, wv, 2).data
        assert np.allclose(out[0], x[0] @ wv, atol=1e-14)

    def test_equal_scores_give_uniform_weights(self):
        # zero query projection: every allowed score is 0, so position t averages v[0..t]
        rng = np.random.default_rng(1)
        x = rng.normal(size=(1, 6, 8))
        _, wk, wv = weights(rng)
        out = multi_head_attention(x, np.zeros((8, 8)), wk, wv, 2).data[0]
        v = x[0] @ wv
        expected = np.cumsum(v, axis=0) / np.arange(1, 7)[:, None]
        assert np.allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("recording", [True, False])
    def test_against_double_loop(self, recording):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(11, 8))
        ws = weights(rng)
        if recording:
            wq = T.Tensor(ws[0], requires_grad=True)
            out = multi_head_attention(x[None], wq, ws[1], ws[2], 2).data[0]
        else:
            with T.no_grad():
                out = multi_head_attention(x[None], *ws, 2).data[0]
        assert np.max(np.abs(out - double_loop_attention(x, *ws, 2))) < 1e-10

    def test_blocked_path_long_sequence(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(600, 8))
        ws = weights(rng)
        with T.no_grad():
            fast = multi_head_attention(x[None], *ws, 2).data[0]
        slow = multi_head_attention(x[None], T.Tensor(ws[0], requires_grad=True), ws[1], ws[2], 2).data[0]
        assert np.max(np.abs(fast - slow)) < 1e-10

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(4)
        scores = rng.normal(size=(3, 9, 9))
        p = T.softmax_lastdim(scores, mask=causal_mask(9)).data
        assert np.all(np.abs(p.sum(-1) - 1.0) < 1e-12)
        assert np.all(p[:, np.triu_indices(9, 1)[0], np.triu_indices(9, 1)[1]] == 0)

    def test_gradients(self):
        m = small_attn()
        rng = np.random.default_rng(0)
        seqs = [rng.integers(0, 256, size=n).tolist() for n in (6, 3)]
        w = rng.normal(size=(2, 8))
        names = ["layers.0.wq", "layers.0.wk", "layers.1.w1", "pos", "embed"]
        assert T.gradcheck(lambda: (m.encode_batch(seqs) * w).sum(), [m.params[n] for n in names]) < 1e-3


class TestEncodeBaseline:
    def test_empty_text(self):
        assert abs(np.linalg.norm(encode_baseline([], small_attn())) - 1.0) < 1e-9

    def test_deterministic(self):
        m = small_attn()
        assert np.array_equal(m.encode([1, 2, 3]), m.encode([1, 2, 3]))

    def test_last_token_matters(self):
        m = small_attn()
        assert not np.array_equal(m.encode([1, 2, 3]), m.encode([1, 2, 4]))

    def test_causal_hidden_states(self):
        m = small_attn()
        ids = np.random.default_rng(5).integers(0, 256, size=(1, 12))
        with T.no_grad():
            base = m.hidden_states(ids).data
            ids[0, 7] = (ids[0, 7] + 1) % 256
            out = m.hidden_states(ids).data
        assert np.array_equal(out[:, :7], base[:, :7])

    def test_single_vs_batch(self):
        m = small_attn()
        seqs = [[], [4, 5], list(range(10))]
        with T.no_grad():
            batch = m.encode_batch(seqs).data
        for s, row in zip(seqs, batch):
            assert np.max(np.abs(m.encode(s) - row)) < 1e-9

    def test_cannot_grow_positions(self):
        m = small_attn(max_seq_len=16)
        with pytest.raises(LengthError):
            m.with_max_len(32)
        with pytest.raises(LengthError):
            m.encode([1, 2], max_len=32)
        with pytest.raises(LengthError):
            m.hidden_states(np.zeros((1, 17), dtype=int))

    def test_heads_must_divide(self):
        with pytest.raises(ContractError):
            AttnConfig(model_dim=10, heads=4)


class TestParity:
    @pytest.mark.parametrize("dim,max_len", [(32, 64), (64, 512), (64, 8192), (128, 1024)])
    def test_within_ten_percent(self, dim, max_len):
        ssm_cfg = EncoderConfig(model_dim=dim, max_seq_len=max_len)
        ssm_n = SsmEncoder.init(ssm_cfg).num_parameters()
        attn_cfg = matched_attention_config(ssm_cfg)
        attn_n = AttentionEncoder.init(attn_cfg).num_parameters()
        assert abs(attn_n - ssm_n) / ssm_n <= 0.10

    def test_counting_routine(self):
        m = small_attn()
        assert m.num_parameters() == sum(p.data.size for p in m.parameters())
        s = SsmEncoder.init(EncoderConfig(model_dim=8, state_size=4))
        assert s.num_parameters() == sum(p.data.size for p in s.parameters())


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        m = small_attn()
        m.save(tmp_path / "a.atnr")
        loaded = load_encoder(tmp_path / "a.atnr")
        assert isinstance(loaded, AttentionEncoder)
        assert loaded.to_bytes() == m.to_bytes()
        assert (tmp_path / "a.atnr").read_bytes()[:5] == b"ATNR1"

    def test_wrong_kind(self):
        blob = small_attn().to_bytes()
        with pytest.raises(MagicError):
            SsmEncoder.from_bytes(blob)
