import numpy as np
import pytest

import gsvit.ops as ops
from gsvit import NumericsError, ConfigError, ShapeError, Tensor, backward, no_grad
from gsvit.tensor import active_tape, clear_tape


class TestTensorBasics:
    def test_shape_data_invariant(self):
        t = Tensor(np.arange(6).reshape(2, 3))
        assert t.shape == (2, 3)
        assert t.size == 6
        assert t.data.dtype == np.float32
        assert t.data.flags["C_CONTIGUOUS"]

    def test_scalar_tensor(self):
        t = Tensor(3.5)
        assert t.shape == ()
        assert t.item() == 3.5

    def test_dtype_override(self):
        t = Tensor([1.0, 2.0], dtype=np.float64)
        assert t.data.dtype == np.float64

    def test_grad_starts_none(self):
        t = Tensor([1.0], requires_grad=True)
        assert t.grad is None


class TestMatmul:
    def test_identity(self):
        a = Tensor(np.eye(2))
        b = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = ops.matmul(a, b)
        assert np.array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_ones_inner(self):
        a = Tensor(np.ones((1, 3)))
        b = Tensor(np.ones((3, 1)))
        assert np.array_equal(ops.matmul(a, b).data, [[3.0]])

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_grad_pattern(self):
        # loss = sum(A @ B) with B fixed: dA[i,j] = sum_k B[j,k]
        a = Tensor(np.eye(2), requires_grad=True)
        b = Tensor([[2.0, 0.0], [0.0, 3.0]])
        backward(ops.sum(ops.matmul(a, b)))
        assert np.allclose(a.grad.data, [[2.0, 3.0], [2.0, 3.0]])


class TestSoftmax:
    def test_uniform(self):
        out = ops.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])

    def test_stability_extreme(self):
        out = ops.softmax(Tensor([1000.0, 0.0]))
        assert abs(out.data[0] - 1.0) < 1e-12
        assert out.data[1] < 1e-12

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for shape, axis in [((5,), -1), ((4, 7), 1), ((3, 4, 5), 0), ((2, 6), -1)]:
            x = Tensor(rng.normal(0, 50, shape).astype(np.float32))
            s = ops.softmax(x, axis=axis).data.sum(axis=axis)
            assert np.allclose(s, 1.0, atol=1e-6)

    def test_nan_rejected(self):
        with pytest.raises(NumericsError):
            ops.softmax(Tensor([1.0, np.nan]))


class TestLayerNorm:
    def test_constant_row(self):
        g = Tensor(np.ones(3))
        b = Tensor(np.zeros(3))
        out = ops.layer_norm(Tensor([5.0, 5.0, 5.0]), g, b)
        assert np.allclose(out.data, 0.0)

    def test_known_values(self):
        g = Tensor(np.ones(3))
        b = Tensor(np.zeros(3))
        out = ops.layer_norm(Tensor([1.0, 2.0, 3.0]), g, b, eps=1e-12)
        assert np.allclose(out.data, [-1.2247, 0.0, 1.2247], atol=1e-3)

    def test_bad_eps(self):
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        with pytest.raises(ConfigError):
            ops.layer_norm(Tensor([1.0, 2.0]), g, b, eps=0.0)

    def test_affine_shape_check(self):
        with pytest.raises(ShapeError):
            ops.layer_norm(Tensor([1.0, 2.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
        backward(ops.sum(x))
        assert np.array_equal(x.grad.data, np.ones((3, 4), dtype=np.float32))

    def test_elementwise_square(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, x)))
        assert np.allclose(x.grad.data, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = ops.mul(x, 2.0)
        with pytest.raises(ShapeError):
            backward(y)
        clear_tape()

    def test_empty_tape_rejected(self):
        clear_tape()
        with pytest.raises(RuntimeError):
            backward(Tensor(1.0, requires_grad=True))

    def test_no_grad_without_flag(self):
        x = Tensor([1.0, 2.0])           # requires_grad=False
        w = Tensor([3.0, 4.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, w)))
        assert x.grad is None
        assert w.grad is not None

    def test_grad_accumulates_across_backward(self):
        x = Tensor([1.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, 3.0)))
        backward(ops.sum(ops.mul(x, 2.0)))
        assert np.allclose(x.grad.data, [5.0])

    def test_tape_cleared_after_backward(self):
        x = Tensor([1.0], requires_grad=True)
        backward(ops.sum(ops.mul(x, x)))
        assert len(active_tape()) == 0

    def test_tape_topological_order(self):
        clear_tape()
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = ops.mul(x, x)
        z = ops.add(y, x)
        _ = ops.sum(z)
        nodes = active_tape().nodes
        seen = set()
        for node in nodes:
            for inp in node.inputs:
                if inp is not None and id(inp) in {id(n.output) for n in nodes}:
                    assert id(inp) in seen, "input recorded after its consumer"
            seen.add(id(node.output))
        clear_tape()

    def test_no_grad_context(self):
        clear_tape()
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = ops.mul(x, x)
        assert not y.requires_grad
        assert active_tape() is None or len(active_tape()) == 0


class TestShapeOps:
    def test_reshape_transpose_roundtrip_bitexact(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(3, 4, 5)).astype(np.float32))
        back = ops.reshape(ops.reshape(x, (12, 5)), (3, 4, 5))
        assert np.array_equal(back.data, x.data)
        twice = ops.transpose(ops.transpose(x, (2, 0, 1)), (1, 2, 0))
        assert np.array_equal(twice.data, x.data)

    def test_concat_split_inverse(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(4, 6)).astype(np.float32))
        parts = ops.split(x, 3, axis=1)
        assert [p.shape for p in parts] == [(4, 2)] * 3
        assert np.array_equal(ops.concat(parts, axis=1).data, x.data)

    def test_split_uneven_rejected(self):
        with pytest.raises(ShapeError):
            ops.split(Tensor(np.ones((4, 5))), 3, axis=1)

    def test_pad_then_crop(self):
        x = Tensor(np.ones((2, 2)))
        p = ops.pad(x, [(0, 1), (1, 0)])
        assert p.shape == (3, 3)
        assert p.data[2].sum() == 0
        assert p.data[:, 0].sum() == 0

    def test_broadcast_add(self):
        x = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.arange(4, dtype=np.float32), requires_grad=True)
        y = ops.add(x, b)
        assert y.shape == (3, 4)
        backward(ops.sum(y))
        assert np.array_equal(b.grad.data, np.full(4, 3.0, dtype=np.float32))


class TestActivations:
    def test_values(self):
        assert ops.relu(Tensor([-1.0, 2.0])).data.tolist() == [0.0, 2.0]
        assert abs(float(ops.gelu(Tensor(0.0)).data)) == 0.0
        assert abs(float(ops.sigmoid(Tensor(0.0)).data) - 0.5) < 1e-7
        assert abs(float(ops.elu(Tensor(-20.0)).data) + 1.0) < 1e-6
        assert float(ops.elu(Tensor(3.0)).data) == 3.0

    def test_gelu_known_value(self):
        # gelu(1) = 0.5 * (1 + erf(1/sqrt(2))) = 0.841345
        out = float(ops.gelu(Tensor(1.0, dtype=np.float64)).data)
        assert abs(out - 0.8413447460685429) < 1e-12


class TestDropout:
    def test_eval_mode_is_identity(self):
        x = Tensor(np.random.default_rng(3).normal(size=(5, 5)).astype(np.float32))
        out = ops.dropout(x, 0.5, training=False, rng=np.random.default_rng(0))
        assert out is x

    def test_p_zero_identity(self):
        x = Tensor(np.ones((3,)))
        assert ops.dropout(x, 0.0, True, np.random.default_rng(0)) is x

    def test_seed_reproducible(self):
        x = Tensor(np.ones((100,)))
        a = ops.dropout(x, 0.4, True, np.random.Generator(np.random.PCG64(7)))
        b = ops.dropout(x, 0.4, True, np.random.Generator(np.random.PCG64(7)))
        assert np.array_equal(a.data, b.data)

    def test_inverted_scaling(self):
        x = Tensor(np.ones((10000,)))
        out = ops.dropout(x, 0.25, True, np.random.Generator(np.random.PCG64(0)))
        kept = out.data[out.data > 0]
        assert np.allclose(kept, 1.0 / 0.75)
        assert abs(out.data.mean() - 1.0) < 0.05

    def test_bad_p(self):
        with pytest.raises(ConfigError):
            ops.dropout(Tensor([1.0]), 1.0, True, np.random.default_rng(0))


class TestConv:
    def _conv_oracle(self, x, w, b, stride, padding):
        c, h, wd = x.shape
        o, _, kh, kw = w.shape
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
        oh = (h + 2 * padding - kh) // stride + 1
        ow = (wd + 2 * padding - kw) // stride + 1
        out = np.zeros((o, oh, ow), dtype=x.dtype)
        for oc in range(o):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[oc, i, j] = (patch * w[oc]).sum() + (b[oc] if b is not None else 0.0)
        return out

    def test_conv2d_matches_loop_oracle(self):
        rng = np.random.default_rng(4)
        for stride, padding in [(1, 0), (1, 1), (2, 1)]:
            x = rng.normal(size=(2, 6, 7)).astype(np.float32)
            w = rng.normal(size=(3, 2, 3, 3)).astype(np.float32)
            b = rng.normal(size=3).astype(np.float32)
            got = ops.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
            want = self._conv_oracle(x, w, b, stride, padding)
            assert np.allclose(got, want, atol=1e-5)

    def _convt_oracle(self, x, w, b, stride, padding):
        c, h, wd = x.shape
        _, o, kh, kw = w.shape
        oh = (h - 1) * stride - 2 * padding + kh
        ow = (wd - 1) * stride - 2 * padding + kw
        out = np.zeros((o, oh + 2 * padding, ow + 2 * padding), dtype=x.dtype)
        for ic in range(c):
            for i in range(h):
                for j in range(wd):
                    out[:, i * stride : i * stride + kh, j * stride : j * stride + kw] += (
                        x[ic, i, j] * w[ic])
        out = out[:, padding : padding + oh, padding : padding + ow]
        if b is not None:
            out += b[:, None, None]
        return out

    def test_conv2d_transposed_matches_scatter_oracle(self):
        rng = np.random.default_rng(5)
        for stride, padding in [(1, 0), (2, 1), (2, 0)]:
            x = rng.normal(size=(3, 4, 5)).astype(np.float32)
            w = rng.normal(size=(3, 2, 4, 4)).astype(np.float32)
            b = rng.normal(size=2).astype(np.float32)
            got = ops.conv2d_transposed(Tensor(x), Tensor(w), Tensor(b), stride, padding).data
            want = self._convt_oracle(x, w, b, stride, padding)
            assert np.allclose(got, want, atol=1e-5)

    @pytest.mark.parametrize("h,stride,padding,k", [
        (7, 2, 1, 4), (4, 2, 1, 4), (5, 1, 0, 3), (3, 3, 0, 5), (10, 2, 2, 6),
    ])
    def test_transposed_output_size_formula(self, h, stride, padding, k):
        x = Tensor(np.zeros((1, h, h), dtype=np.float32))
        w = Tensor(np.zeros((1, 1, k, k), dtype=np.float32))
        out = ops.conv2d_transposed(x, w, None, stride, padding)
        expected = (h - 1) * stride - 2 * padding + k
        assert out.shape == (1, expected, expected)

    def test_conv_shape_errors(self):
        with pytest.raises(ShapeError):
            ops.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
        with pytest.raises(ShapeError):
            ops.conv2d_transposed(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((3, 1, 3, 3))))


class TestPooling:
    def test_global_pool_is_mean(self):
        x = np.random.default_rng(6).normal(size=(3, 5, 7)).astype(np.float32)
        out = ops.adaptive_avg_pool(Tensor(x), (1, 1)).data
        assert np.allclose(out.reshape(3), x.mean(axis=(1, 2)), atol=1e-6)

    def test_uneven_bins_cover_input(self):
        x = np.arange(15, dtype=np.float32).reshape(1, 3, 5)
        out = ops.adaptive_avg_pool(Tensor(x), (2, 2)).data
        assert out.shape == (1, 2, 2)
        # bins: rows [0,2),[1,3); cols [0,3),[2,5)
        assert np.isclose(out[0, 0, 0], x[0, 0:2, 0:3].mean())
        assert np.isclose(out[0, 1, 1], x[0, 1:3, 2:5].mean())


class TestBatchNorm:
    def test_eval_identity_with_unit_stats(self):
        x = Tensor(np.random.default_rng(7).normal(size=(4, 3, 3)).astype(np.float32))
        gamma, beta = Tensor(np.ones(4)), Tensor(np.zeros(4))
        rm, rv = Tensor(np.zeros(4)), Tensor(np.ones(4))
        out = ops.batch_norm(x, gamma, beta, rm, rv, training=False)
        assert np.allclose(out.data, x.data, atol=1e-4)

    def test_train_normalizes_channels(self):
        x = Tensor(np.random.default_rng(8).normal(3.0, 2.0, size=(2, 8, 8)).astype(np.float32))
        gamma, beta = Tensor(np.ones(2)), Tensor(np.zeros(2))
        rm, rv = Tensor(np.zeros(2)), Tensor(np.ones(2))
        out = ops.batch_norm(x, gamma, beta, rm, rv, training=True)
        assert np.allclose(out.data.mean(axis=(1, 2)), 0.0, atol=1e-5)
        assert np.allclose(out.data.var(axis=(1, 2)), 1.0, atol=1e-3)
        # running stats moved toward the batch statistics
        assert not np.allclose(rm.data, 0.0)
        assert not np.allclose(rv.data, 1.0)


class TestCrossEntropy:
    def test_matches_manual_log_softmax(self):
        logits = np.array([[2.0, 1.0, 0.1], [0.5, 2.5, -1.0]], dtype=np.float64)
        labels = np.array([0, 1])
        got = float(ops.cross_entropy(Tensor(logits), labels).data)
        logp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        want = -(logp[0, 0] + logp[1, 1]) / 2
        assert abs(got - want) < 1e-12

    def test_label_out_of_range(self):
        with pytest.raises(ShapeError):
            ops.cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))
