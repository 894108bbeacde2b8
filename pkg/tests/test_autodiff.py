import numpy as np
import pytest

from conftest import numeric_grad, relative_errors
from ttasr import autodiff as ad
from ttasr.autodiff import Tensor


def check_op(build, *shapes, seed=0, tol=1e-6):
    """FD-check the gradient of a scalar-reduced op w.r.t. every input."""
    rng = np.random.default_rng(seed)
    tensors = [Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    weights = [rng.normal(size=np.shape(build(*tensors).data)) for _ in range(1)]

    def scalar():
        return float((build(*tensors).data * weights[0]).sum())

    out = build(*tensors)
    out.backward(weights[0])
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(scalar, t.data)
        assert relative_errors(analytic, numeric).max() < tol


class TestElementwise:
    def test_add_broadcast(self):
        check_op(ad.add, (3, 4), (4,))
        check_op(ad.add, (2, 3, 4), (1, 4))

    def test_sub(self):
        check_op(ad.sub, (3, 4), (3, 4))

    def test_mul_broadcast(self):
        check_op(ad.mul, (3, 4), (3, 1))

    def test_div(self):
        # keep denominators away from zero
        rng = np.random.default_rng(0)
        a = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
        b = Tensor(rng.uniform(1.0, 2.0, size=(3, 3)), requires_grad=True)
        w = rng.normal(size=(3, 3))
        ad.div(a, b).backward(w)
        num_a = numeric_grad(lambda: float((ad.div(a, b).data * w).sum()), a.data)
        num_b = numeric_grad(lambda: float((ad.div(a, b).data * w).sum()), b.data)
        assert relative_errors(a.grad, num_a).max() < 1e-6
        assert relative_errors(b.grad, num_b).max() < 1e-6

    def test_tanh_sigmoid_relu_exp(self):
        check_op(ad.tanh, (4, 3))
        check_op(ad.sigmoid, (4, 3))
        check_op(ad.exp, (4, 3))
        rng = np.random.default_rng(1)
        x = Tensor(rng.normal(size=(5, 5)) + 0.05, requires_grad=True)
        w = rng.normal(size=(5, 5))
        ad.relu(x).backward(w)
        numeric = numeric_grad(lambda: float((ad.relu(x).data * w).sum()), x.data)
        assert relative_errors(x.grad, numeric).max() < 1e-5

    def test_log(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.uniform(0.5, 2.0, size=(3, 3)), requires_grad=True)
        w = rng.normal(size=(3, 3))
        ad.log(x).backward(w)
        numeric = numeric_grad(lambda: float((ad.log(x).data * w).sum()), x.data)
        assert relative_errors(x.grad, numeric).max() < 1e-6


class TestMatmulShapes:
    def test_plain(self):
        check_op(ad.matmul, (3, 4), (4, 5))

    def test_batched(self):
        check_op(ad.matmul, (2, 3, 4), (2, 4, 5))

    def test_stacked_times_2d(self):
        check_op(ad.matmul, (2, 3, 4), (4, 5))

    def test_vector_rejected(self):
        with pytest.raises(ValueError):
            ad.matmul(Tensor(np.zeros(3)), Tensor(np.zeros((3, 2))))


class TestReductionsAndViews:
    def test_sum_axes(self):
        check_op(lambda x: ad.sum_(x), (3, 4))
        check_op(lambda x: ad.sum_(x, axis=0), (3, 4))
        check_op(lambda x: ad.sum_(x, axis=1, keepdims=True), (3, 4))

    def test_mean_axes(self):
        check_op(lambda x: ad.mean(x), (3, 4))
        check_op(lambda x: ad.mean(x, axis=-1, keepdims=True), (2, 3, 4))

    def test_reshape_swapaxes(self):
        check_op(lambda x: ad.reshape(x, (4, 3)), (3, 4))
        check_op(lambda x: ad.swapaxes(x, 0, 1), (3, 4))

    def test_getitem(self):
        check_op(lambda x: x[1:3, ::2], (4, 6))

    def test_stack_concat(self):
        check_op(lambda a, b: ad.stack([a, b], axis=0), (3, 4), (3, 4))
        check_op(lambda a, b: ad.concat([a, b], axis=1), (3, 2), (3, 4))


class TestSoftmaxFamily:
    def test_softmax(self):
        check_op(lambda x: ad.softmax(x, axis=-1), (3, 5))

    def test_log_softmax(self):
        check_op(lambda x: ad.log_softmax(x, axis=-1), (3, 5))

    def test_masked_softmax_grad(self):
        mask = np.array([[True, True, False, True]] * 3)
        check_op(lambda x: ad.masked_softmax(x, mask), (3, 4))

    def test_masked_positions_exactly_zero(self):
        rng = np.random.default_rng(0)
        mask = np.array([[True, False, True]])
        y = ad.masked_softmax(Tensor(rng.normal(size=(1, 3))), mask)
        assert y.data[0, 1] == 0.0
        assert y.data.sum() == pytest.approx(1.0, abs=1e-12)

    def test_standardize(self):
        check_op(lambda x: ad.standardize(x, eps=1e-5), (4, 6))


class TestEmbeddingConv:
    def test_embedding(self):
        rng = np.random.default_rng(0)
        table = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        ids = np.array([0, 2, 2, 5])
        w = rng.normal(size=(4, 3))
        ad.embedding(table, ids).backward(w)
        numeric = numeric_grad(
            lambda: float((ad.embedding(table, ids).data * w).sum()), table.data
        )
        assert relative_errors(table.grad, numeric).max() < 1e-6

    @pytest.mark.parametrize("strides", [(1, 1), (2, 2), (2, 1), (3, 2)])
    def test_conv2d(self, strides):
        check_op(
            lambda x, w, b: ad.conv2d(x, w, b, strides), (2, 7, 6), (3, 2, 3, 3), (3,)
        )

    def test_conv2d_channel_mismatch(self):
        with pytest.raises(ValueError):
            ad.conv2d(
                Tensor(np.zeros((2, 5, 5))),
                Tensor(np.zeros((3, 4, 3, 3))),
                Tensor(np.zeros(3)),
                (1, 1),
            )

    def test_output_len(self):
        assert ad.conv2d_output_len(100, 2) == 50
        assert ad.conv2d_output_len(99, 2) == 50
        assert ad.conv2d_output_len(1, 2) == 1
        assert ad.conv2d_output_len(5, 1) == 5


class TestEngine:
    def test_reused_node_accumulates(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        y = x * x + x
        y.backward()
        assert x.grad[0] == pytest.approx(2 * 3.0 + 1.0)

    def test_deep_chain_iterative_toposort(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        y = x
        for _ in range(3000):
            y = y + x
        y.backward()
        assert x.grad[0] == pytest.approx(3001.0)

    def test_no_grad_blocks_recording(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with ad.no_grad():
            y = ad.tanh(x)
        assert not y.requires_grad
        assert y._vjp is None

    def test_backward_requires_scalar_without_seed(self):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ValueError):
            ad.tanh(x).backward()

    def test_dtype_preserved(self):
        x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
        y = ad.tanh(x) * np.float32(2.0)
        assert y.data.dtype == np.float32

    def test_custom_op(self):
        x = Tensor(np.array([2.0]), requires_grad=True)
        y = ad.custom_op(x.data ** 3, (x,), lambda g: (g * 3 * x.data ** 2,))
        y.backward()
        assert x.grad[0] == pytest.approx(12.0)
