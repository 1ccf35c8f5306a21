import numpy as np
import pytest

from sctn import autodiff as ad
from sctn import blocks
from sctn.autodiff import Tensor
from sctn.blocks import (AttentionConfig, FeedForwardWeights, MultiHeadWeights,
                         causal_mask)
from sctn.errors import ConfigError, MaskError


def t(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


def identity_mha(d):
    w = MultiHeadWeights()
    w.w_q = [t(np.eye(d))]
    w.w_k = [t(np.eye(d))]
    w.w_v = [t(np.eye(d))]
    w.w_o = t(np.eye(d))
    return w


class TestAttentionConfig:
    def test_defaults(self):
        cfg = AttentionConfig()
        assert cfg.model_dim == 512 and cfg.num_heads == 8
        assert cfg.head_dim == 64
        assert cfg.ffn_dim == 2048

    def test_divisibility(self):
        with pytest.raises(ConfigError):
            AttentionConfig(model_dim=10, num_heads=3)


class TestScaledDotAttention:
    def test_single_key_returns_value(self):
        q = t([[1.0, 2.0]])
        v = t([[5.0, -3.0]])
        out = blocks.scaled_dot_attention(q, q, v)
        np.testing.assert_allclose(out.data, v.data)

    def test_orthogonal_scores_give_value_mean(self):
        q = t([[1.0, 0.0]])
        k = t([[0.0, 1.0], [0.0, -1.0], [0.0, 2.0]])
        v = t([[3.0, 0.0], [0.0, 3.0], [6.0, 6.0]])
        out = blocks.scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, v.data.mean(axis=0, keepdims=True))

    def test_hand_derived_two_key_case(self):
        # raw scores [2, 0] at d_k = 4 scale to [1, 0]
        q = t([[1.0, 0.0, 0.0, 0.0]])
        k = t([[2.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
        v = t([[1.0, 0.0], [0.0, 1.0]])
        e = np.e
        expected = [[e / (e + 1), 1 / (e + 1)]]
        out = blocks.scaled_dot_attention(q, k, v)
        np.testing.assert_allclose(out.data, expected, atol=1e-4)
        assert out.data[0, 0] == pytest.approx(0.7311, abs=1e-4)

    def test_fully_masked_row_rejected(self):
        q = t(np.zeros((2, 2)))
        mask = np.array([[True, True], [False, False]])
        with pytest.raises(MaskError):
            blocks.scaled_dot_attention(q, q, q, mask=mask)

    def test_joint_kv_permutation_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = t(rng.normal(size=(3, 4)))
            k = rng.normal(size=(5, 4))
            v = rng.normal(size=(5, 4))
            perm = rng.permutation(5)
            base = blocks.scaled_dot_attention(q, t(k), t(v)).data
            perm_out = blocks.scaled_dot_attention(q, t(k[perm]), t(v[perm])).data
            np.testing.assert_allclose(perm_out, base, atol=1e-6)

    def test_causal_mask_blocks_future(self):
        rng = np.random.default_rng(1)
        q = t(rng.normal(size=(4, 4)))
        k = rng.normal(size=(4, 4))
        v = rng.normal(size=(4, 4))
        mask = causal_mask(4)
        base = blocks.scaled_dot_attention(q, t(k), t(v), mask=mask).data
        k2, v2 = k.copy(), v.copy()
        k2[3] += 100.0
        v2[3] -= 50.0
        changed = blocks.scaled_dot_attention(q, t(k2), t(v2), mask=mask).data
        np.testing.assert_allclose(changed[:3], base[:3], atol=1e-6)


class TestMultiHead:
    def test_single_identity_head_reduces(self):
        cfg = AttentionConfig(model_dim=4, num_heads=1)
        rng = np.random.default_rng(2)
        x = t(rng.normal(size=(5, 4)))
        out = blocks.multi_head_attention(x, x, identity_mha(4), cfg)
        direct = blocks.scaled_dot_attention(x, x, x)
        np.testing.assert_allclose(out.data, direct.data, atol=1e-6)

    def test_paper_dims_head_width(self):
        cfg = AttentionConfig(model_dim=512, num_heads=8)
        assert cfg.head_dim == 64

    def test_shape_preserved(self):
        cfg = AttentionConfig(model_dim=16, num_heads=4)
        rng = np.random.default_rng(3)
        w = MultiHeadWeights()
        for _ in range(4):
            w.w_q.append(t(rng.normal(size=(16, 4))))
            w.w_k.append(t(rng.normal(size=(16, 4))))
            w.w_v.append(t(rng.normal(size=(16, 4))))
        w.w_o = t(rng.normal(size=(16, 16)))
        x = t(rng.normal(size=(15, 16)))
        assert blocks.multi_head_attention(x, x, w, cfg).shape == (15, 16)

    def test_batched_matches_per_channel(self):
        cfg = AttentionConfig(model_dim=8, num_heads=2)
        rng = np.random.default_rng(4)
        w = MultiHeadWeights()
        for _ in range(2):
            w.w_q.append(t(rng.normal(size=(8, 4))))
            w.w_k.append(t(rng.normal(size=(8, 4))))
            w.w_v.append(t(rng.normal(size=(8, 4))))
        w.w_o = t(rng.normal(size=(8, 8)))
        x = rng.normal(size=(3, 6, 8))
        batched = blocks.multi_head_attention(t(x), t(x), w, cfg).data
        for c in range(3):
            single = blocks.multi_head_attention(t(x[c]), t(x[c]), w, cfg).data
            np.testing.assert_allclose(batched[c], single, atol=1e-10)


class TestFeedForward:
    def test_zero_first_layer_gives_b2(self):
        w = FeedForwardWeights(w1=t(np.zeros((4, 8))), b1=t(np.zeros(8)),
                               w2=t(np.zeros((8, 4))), b2=t([1.0, 2.0, 3.0, 4.0]))
        out = blocks.feed_forward(t(np.random.default_rng(5).normal(size=(3, 4))), w)
        np.testing.assert_allclose(out.data, np.broadcast_to(w.b2.data, (3, 4)))

    def test_relu_kill_gives_b2(self):
        rng = np.random.default_rng(6)
        w = FeedForwardWeights(w1=t(rng.normal(size=(4, 8))), b1=t(np.full(8, -100.0)),
                               w2=t(rng.normal(size=(8, 4))), b2=t(rng.normal(size=4)))
        x = t(rng.uniform(-0.5, 0.5, size=(3, 4)))
        out = blocks.feed_forward(x, w)
        np.testing.assert_allclose(out.data, np.broadcast_to(w.b2.data, (3, 4)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(7)
        w = FeedForwardWeights(w1=t(rng.normal(size=(3, 5))), b1=t(rng.normal(size=5)),
                               w2=t(rng.normal(size=(5, 3))), b2=t(rng.normal(size=3)))
        x = rng.normal(size=(4, 3))
        out = blocks.feed_forward(t(x), w).data
        expected = np.zeros((4, 3))
        for i in range(4):
            hidden = np.zeros(5)
            for j in range(5):
                acc = w.b1.data[j]
                for d in range(3):
                    acc += x[i, d] * w.w1.data[d, j]
                hidden[j] = max(0.0, acc)
            for o in range(3):
                acc = w.b2.data[o]
                for j in range(5):
                    acc += hidden[j] * w.w2.data[j, o]
                expected[i, o] = acc
        np.testing.assert_allclose(out, expected, atol=1e-9)


class TestResidualSublayer:
    def test_zero_branch_is_layer_norm(self):
        rng = np.random.default_rng(8)
        x = t(rng.normal(size=(3, 4)))
        gain, bias = t(np.ones(4)), t(np.zeros(4))
        out = blocks.residual_sublayer(x, t(np.zeros((3, 4))), gain, bias)
        np.testing.assert_allclose(out.data, ad.layer_norm(x, gain, bias).data)

    def test_zero_everything_gives_bias(self):
        b = np.array([1.0, -2.0, 0.5, 3.0])
        out = blocks.residual_sublayer(t(np.zeros((2, 4))), t(np.zeros((2, 4))),
                                       t(np.zeros(4)), t(b))
        np.testing.assert_allclose(out.data, np.broadcast_to(b, (2, 4)))

    def test_gradient_passes_finite_difference(self):
        rng = np.random.default_rng(9)
        x = t(rng.normal(size=(3, 4)), grad=True)
        gain, bias = t(np.ones(4)), t(np.zeros(4))
        w = FeedForwardWeights(w1=t(rng.normal(size=(4, 6))), b1=t(rng.normal(size=6)),
                               w2=t(rng.normal(size=(6, 4))), b2=t(rng.normal(size=4)))

        def f(p):
            out = blocks.residual_sublayer(p, blocks.feed_forward(p, w), gain, bias)
            return ad.mean(ad.mul(out, out))

        assert ad.finite_difference_check(f, x) < 1e-4
