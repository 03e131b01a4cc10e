import math

import numpy as np
import pytest

import gsvit.ops as ops
from gsvit import ConfigError, ShapeError, Tensor
from gsvit.layers import (AttentionHead, BatchNorm2d, LayerNorm, Linear,
                          MlpBlock, SEBlock, attention)
from conftest import fd_gradcheck


def attention_oracle(q, k, v, scale):
    """Brute-force double loop: weights row by row, then weighted value sums."""
    n, d = q.shape
    out = np.zeros_like(v)
    for i in range(n):
        logits = np.array([np.dot(q[i], k[j]) * scale for j in range(k.shape[0])])
        logits -= logits.max()
        w = np.exp(logits)
        w /= w.sum()
        for j in range(k.shape[0]):
            out[i] += w[j] * v[j]
    return out


class TestAttention:
    def test_single_token_is_value(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            q = Tensor(rng.normal(size=(1, 8)).astype(np.float32))
            k = Tensor(rng.normal(size=(1, 8)).astype(np.float32))
            v = Tensor(rng.normal(size=(1, 8)).astype(np.float32))
            out = attention(q, k, v)
            assert np.allclose(out.data, v.data, atol=1e-7)

    def test_identical_keys_give_column_mean(self):
        rng = np.random.default_rng(1)
        q = Tensor(rng.normal(size=(3, 4)).astype(np.float32))
        k = Tensor(np.tile(rng.normal(size=(1, 4)), (5, 1)).astype(np.float32))
        v = Tensor(rng.normal(size=(5, 4)).astype(np.float32))
        out = attention(q, k, v)
        assert np.allclose(out.data, v.data.mean(axis=0), atol=1e-6)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            n = int(rng.integers(1, 9))
            d = int(rng.integers(1, 17))
            q = rng.normal(size=(n, d)).astype(np.float32)
            k = rng.normal(size=(n, d)).astype(np.float32)
            v = rng.normal(size=(n, d)).astype(np.float32)
            got = attention(Tensor(q), Tensor(k), Tensor(v)).data
            want = attention_oracle(q, k, v, 1.0 / math.sqrt(d))
            assert np.abs(got - want).max() < 1e-5

    def test_fixed_case_against_oracle(self):
        rng = np.random.default_rng(3)
        q = rng.normal(size=(4, 8))
        k = rng.normal(size=(4, 8))
        v = rng.normal(size=(4, 8))
        got = attention(Tensor(q), Tensor(k), Tensor(v)).data
        want = attention_oracle(q, k, v, 1.0 / math.sqrt(8))
        assert np.abs(got - want).max() < 1e-5

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))))
        with pytest.raises(ShapeError):
            attention(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))

    def test_head_projections(self):
        rng = np.random.Generator(np.random.PCG64(4))
        head = AttentionHead(6, 3, rng)
        x = Tensor(np.random.default_rng(5).normal(size=(4, 6)).astype(np.float32))
        out = head(x)
        q = x.data @ head.wq.data
        k = x.data @ head.wk.data
        v = x.data @ head.wv.data + head.bv.data
        want = attention_oracle(q, k, v, head.scale)
        assert np.abs(out.data - want).max() < 1e-5


def se_oracle(x, wr, br, we, be):
    """Per-channel loop: pool, two FC layers, sigmoid gate, rescale."""
    c = x.shape[0]
    pooled = np.array([x[ch].mean() for ch in range(c)])
    hidden = np.maximum(pooled @ wr + br, 0.0)
    gate = 1.0 / (1.0 + np.exp(-(hidden @ we + be)))
    out = np.empty_like(x)
    for ch in range(c):
        out[ch] = x[ch] * gate[ch]
    return out


class TestSEBlock:
    def _block(self, channels=8, seed=0):
        return SEBlock(channels, np.random.Generator(np.random.PCG64(seed)))

    def test_saturated_gate_is_identity(self):
        se = self._block()
        se.expand.w.data[...] = 0.0
        se.expand.b.data[...] = 30.0          # sigmoid(30) == 1 to float precision
        x = Tensor(np.random.default_rng(1).normal(size=(8, 5, 5)).astype(np.float32))
        assert np.allclose(se(x).data, x.data, atol=1e-6)

    def test_zero_logit_gate_halves(self):
        se = self._block()
        se.expand.w.data[...] = 0.0
        se.expand.b.data[...] = 0.0
        x = Tensor(np.random.default_rng(2).normal(size=(8, 3, 4)).astype(np.float32))
        assert np.allclose(se(x).data, 0.5 * x.data, atol=1e-7)

    def test_matches_loop_oracle(self):
        se = self._block(seed=3)
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = rng.normal(size=(8, 4, 6)).astype(np.float32)
            got = se(Tensor(x)).data
            want = se_oracle(x, se.reduce.w.data, se.reduce.b.data,
                             se.expand.w.data, se.expand.b.data)
            assert np.abs(got - want).max() < 1e-6

    def test_gate_shrinks_magnitudes(self):
        se = self._block(seed=5)
        x = np.random.default_rng(6).normal(size=(8, 4, 4)).astype(np.float32)
        out = se(Tensor(x)).data
        assert out.shape == x.shape
        assert (np.abs(out) <= np.abs(x) + 1e-7).all()

    def test_indivisible_channels_rejected(self):
        with pytest.raises(ConfigError):
            SEBlock(6, np.random.default_rng(0), reduction=4)

    def test_gradcheck(self):
        rng = np.random.Generator(np.random.PCG64(7))
        se = SEBlock(4, rng, reduction=4, dtype=np.float64)
        x = Tensor(np.random.default_rng(8).normal(size=(4, 3, 3)), requires_grad=True,
                   dtype=np.float64)
        w = Tensor(np.random.default_rng(9).uniform(-1, 1, (4, 3, 3)), dtype=np.float64)
        fd_gradcheck(lambda: ops.sum(ops.mul(se(x), w)),
                     [x, se.reduce.w, se.reduce.b, se.expand.w, se.expand.b])


class TestMlpBlock:
    def test_zero_second_layer_gives_zero(self):
        mlp = MlpBlock(4, 8, np.random.default_rng(0))
        mlp.fc2.w.data[...] = 0.0
        mlp.fc2.b.data[...] = 0.0
        x = Tensor(np.random.default_rng(1).normal(size=(3, 4)).astype(np.float32))
        assert np.array_equal(mlp(x).data, np.zeros((3, 4), dtype=np.float32))

    def test_identity_layers_give_activation(self):
        mlp = MlpBlock(4, 4, np.random.default_rng(0), activation="gelu")
        mlp.fc1.w.data[...] = np.eye(4, dtype=np.float32)
        mlp.fc1.b.data[...] = 0.0
        mlp.fc2.w.data[...] = np.eye(4, dtype=np.float32)
        mlp.fc2.b.data[...] = 0.0
        x = Tensor(np.random.default_rng(2).normal(size=(5, 4)).astype(np.float32))
        assert np.allclose(mlp(x).data, ops.gelu(x).data, atol=1e-7)

    def test_width_mismatch(self):
        mlp = MlpBlock(4, 8, np.random.default_rng(0))
        with pytest.raises(ShapeError):
            mlp(Tensor(np.ones((2, 5))))

    def test_unknown_activation(self):
        with pytest.raises(ConfigError):
            MlpBlock(4, 8, np.random.default_rng(0), activation="swish")

    def test_gradcheck(self):
        rng = np.random.Generator(np.random.PCG64(1))
        mlp = MlpBlock(3, 5, rng, dtype=np.float64)
        x = Tensor(np.random.default_rng(2).normal(size=(4, 3)), requires_grad=True,
                   dtype=np.float64)
        leaves = [x, mlp.fc1.w, mlp.fc1.b, mlp.fc2.w, mlp.fc2.b]
        w = Tensor(np.random.default_rng(3).uniform(-1, 1, (4, 3)), dtype=np.float64)
        fd_gradcheck(lambda: ops.sum(ops.mul(mlp(x), w)), leaves)


class TestLinearAndNorms:
    def test_linear_forward(self):
        lin = Linear(3, 2, np.random.default_rng(0))
        x = np.random.default_rng(1).normal(size=(4, 3)).astype(np.float32)
        assert np.allclose(lin(Tensor(x)).data, x @ lin.w.data + lin.b.data, atol=1e-7)

    def test_linear_vector_input(self):
        lin = Linear(3, 2, np.random.default_rng(0))
        x = np.array([1.0, 2.0, 3.0], dtype=np.float32)
        out = lin(Tensor(x))
        assert out.shape == (2,)
        assert np.allclose(out.data, x @ lin.w.data + lin.b.data, atol=1e-7)

    def test_linear_no_bias(self):
        lin = Linear(3, 2, np.random.default_rng(0), bias=False)
        assert lin.b is None
        assert len(lin.params()) == 1

    def test_layernorm_layer(self):
        ln = LayerNorm(5)
        x = Tensor(np.random.default_rng(2).normal(2.0, 3.0, size=(4, 5)).astype(np.float32))
        out = ln(x).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)

    def test_batchnorm_eval_identity_invariant(self):
        bn = BatchNorm2d(3)
        x = Tensor(np.random.default_rng(3).normal(size=(3, 4, 4)).astype(np.float32))
        out = bn(x, training=False)
        assert np.allclose(out.data, x.data, atol=1e-4)

    def test_batchnorm_running_stats_are_buffers(self):
        bn = BatchNorm2d(3)
        kinds = {n: t.requires_grad for n, t in bn.params()}
        assert kinds["gamma"] and kinds["beta"]
        assert not kinds["running_mean"] and not kinds["running_var"]
