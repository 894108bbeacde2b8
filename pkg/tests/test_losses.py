import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import relative_errors
from ttasr.autodiff import Tensor
from ttasr.losses import (
    brute_force_ctc,
    brute_force_rnnt,
    ctc_loss,
    ctc_loss_node,
    ctc_min_frames,
    grad_wrt_logits,
    rnnt_loss,
    rnnt_loss_node,
)


def normalize_logits(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=-1, keepdims=True))


def random_instance(rng, max_t=5, max_u=4, max_v=5):
    num_frames = int(rng.integers(1, max_t + 1))
    num_labels = int(rng.integers(0, max_u + 1))
    vocab = int(rng.integers(1, max_v + 1)) + 1
    lp = normalize_logits(rng.normal(size=(num_frames, num_labels + 1, vocab)))
    labels = rng.integers(1, vocab, size=num_labels).tolist()
    return lp, labels


class TestRnntValues:
    def test_single_blank_path(self):
        lp = np.log(np.array([[[0.25, 0.75]]]))
        result = rnnt_loss(lp, [])
        assert result.loss == pytest.approx(-math.log(0.25), abs=1e-12)
        assert result.grad[0, 0, 0] == pytest.approx(-1.0, abs=1e-12)
        assert result.grad[0, 0, 1] == 0.0

    def test_two_frames_one_label_uniform(self):
        # two monotone paths, each three factors of 1/2; the final move is
        # always the terminal blank from (T-1, U)
        lp = np.full((2, 2, 2), math.log(0.5))
        expected = -math.log(2 * 0.5 ** 3)
        assert rnnt_loss(lp, [1]).loss == pytest.approx(expected, abs=1e-12)
        assert brute_force_rnnt(lp, [1]) == pytest.approx(expected, abs=1e-12)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(0)
        for _ in range(250):
            lp, labels = random_instance(rng)
            assert abs(rnnt_loss(lp, labels).loss - brute_force_rnnt(lp, labels)) < 1e-10

    def test_loss_nonnegative_and_finite(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            lp, labels = random_instance(rng)
            loss = rnnt_loss(lp, labels).loss
            assert math.isfinite(loss) and loss >= 0.0


class TestRnntGradient:
    def test_matches_finite_differences_through_logits(self):
        rng = np.random.default_rng(2)
        logits = rng.normal(size=(3, 3, 4))
        labels = [2, 1]
        lp = normalize_logits(logits)
        analytic = grad_wrt_logits(lp, rnnt_loss(lp, labels).grad)
        h = 1e-5
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            hi, lo = logits.copy(), logits.copy()
            hi[idx] += h
            lo[idx] -= h
            numeric[idx] = (
                rnnt_loss(normalize_logits(hi), labels).loss
                - rnnt_loss(normalize_logits(lo), labels).loss
            ) / (2 * h)
        assert relative_errors(analytic, numeric).max() < 1e-6

    def test_matches_finite_differences_raw(self):
        # gradient w.r.t. log_probs as free variables (normalization check off)
        rng = np.random.default_rng(3)
        lp, labels = random_instance(rng, max_t=3, max_u=2, max_v=3)
        grad = rnnt_loss(lp, labels).grad
        h = 1e-5
        for idx in np.ndindex(lp.shape):
            hi, lo = lp.copy(), lp.copy()
            hi[idx] += h
            lo[idx] -= h
            numeric = (
                rnnt_loss(hi, labels, check_normalized=False).loss
                - rnnt_loss(lo, labels, check_normalized=False).loss
            ) / (2 * h)
            assert relative_errors(
                np.asarray(grad[idx]), np.asarray(numeric)
            ).max() < 1e-5

    def test_logit_gradient_sums_to_zero_per_slice(self):
        rng = np.random.default_rng(4)
        lp, labels = random_instance(rng)
        glogits = grad_wrt_logits(lp, rnnt_loss(lp, labels).grad)
        assert np.abs(glogits.sum(axis=-1)).max() < 1e-9


class TestRnntInvariances:
    @settings(max_examples=25, deadline=None)
    @given(st.floats(-5.0, 5.0), st.integers(0, 2 ** 31 - 1))
    def test_shift_invariance(self, c, seed):
        rng = np.random.default_rng(seed)
        lp, labels = random_instance(rng, max_t=4, max_u=3, max_v=4)
        shifted = normalize_logits(lp + c)
        assert rnnt_loss(shifted, labels).loss == pytest.approx(
            rnnt_loss(lp, labels).loss, abs=1e-12
        )

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2 ** 31 - 1), st.floats(1.0, 8.0))
    def test_boosting_next_label_never_hurts(self, seed, gamma):
        # raise p(y_{u+1} | t, u) at the expense of the other labels while
        # keeping the blank mass fixed: no path loses probability
        rng = np.random.default_rng(seed)
        lp, labels = random_instance(rng, max_t=4, max_u=3, max_v=4)
        if not labels:
            return
        t = int(rng.integers(0, lp.shape[0]))
        u = int(rng.integers(0, len(labels)))
        base = rnnt_loss(lp, labels).loss
        probs = np.exp(lp[t, u])
        rest = probs[1:].copy()
        rest[labels[u] - 1] *= gamma
        rest *= (1.0 - probs[0]) / rest.sum()
        boosted = lp.copy()
        boosted[t, u, 1:] = np.log(rest)
        assert rnnt_loss(boosted, labels).loss <= base + 1e-12


class TestRnntValidation:
    def test_label_out_of_range(self):
        lp = normalize_logits(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError, match="label id"):
            rnnt_loss(lp, [3])

    def test_row_mismatch(self):
        lp = normalize_logits(np.zeros((2, 2, 3)))
        with pytest.raises(ValueError, match="label rows"):
            rnnt_loss(lp, [1, 2])

    def test_unnormalized_rejected(self):
        lp = np.zeros((2, 2, 3))  # logsumexp = log 3 per slice
        with pytest.raises(ValueError, match="not normalized"):
            rnnt_loss(lp, [1])

    def test_brute_force_caps(self):
        lp = normalize_logits(np.zeros((6, 1, 2)))
        with pytest.raises(ValueError, match="capped"):
            brute_force_rnnt(lp, [])
        lp = normalize_logits(np.zeros((2, 6, 3)))
        with pytest.raises(ValueError, match="capped"):
            brute_force_rnnt(lp, [1] * 5)


class TestCtc:
    def test_single_frame(self):
        lp = np.log(np.array([[0.5, 0.5]]))
        assert ctc_loss(lp, [1]).loss == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_two_frames_closed_form(self):
        # alignments {aa, a-, -a}
        p = np.array([[0.6, 0.4], [0.3, 0.7]])  # columns: blank, a
        lp = np.log(p)
        expected = -math.log(
            p[0, 1] * p[1, 1] + p[0, 1] * p[1, 0] + p[0, 0] * p[1, 1]
        )
        assert ctc_loss(lp, [1]).loss == pytest.approx(expected, abs=1e-12)

    def test_oracle_equivalence(self):
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 200:
            num_frames = int(rng.integers(1, 6))
            vocab = int(rng.integers(1, 6)) + 1
            num_labels = int(rng.integers(0, 5))
            labels = rng.integers(1, vocab, size=num_labels).tolist()
            lp = normalize_logits(rng.normal(size=(num_frames, vocab)))
            result = ctc_loss(lp, labels)
            oracle = brute_force_ctc(lp, labels)
            if result.infeasible:
                assert math.isinf(oracle)
            else:
                assert abs(result.loss - oracle) < 1e-10
                checked += 1

    def test_gradient_finite_differences(self):
        rng = np.random.default_rng(6)
        logits = rng.normal(size=(5, 4))
        labels = [1, 2, 2]
        lp = normalize_logits(logits)
        analytic = grad_wrt_logits(lp, ctc_loss(lp, labels).grad)
        h = 1e-5
        numeric = np.zeros_like(logits)
        for idx in np.ndindex(logits.shape):
            hi, lo = logits.copy(), logits.copy()
            hi[idx] += h
            lo[idx] -= h
            numeric[idx] = (
                ctc_loss(normalize_logits(hi), labels).loss
                - ctc_loss(normalize_logits(lo), labels).loss
            ) / (2 * h)
        assert relative_errors(analytic, numeric).max() < 1e-6

    def test_infeasible_tagged_not_raised(self):
        lp = normalize_logits(np.zeros((2, 3)))
        result = ctc_loss(lp, [1, 1, 2])
        assert result.infeasible
        assert math.isinf(result.loss)
        assert np.all(result.grad == 0.0)

    def test_min_frames(self):
        assert ctc_min_frames([]) == 0
        assert ctc_min_frames([1, 2, 3]) == 3
        assert ctc_min_frames([1, 1]) == 3
        assert ctc_min_frames([1, 1, 1]) == 5

    def test_brute_force_cap(self):
        lp = normalize_logits(np.zeros((6, 2)))
        with pytest.raises(ValueError, match="capped"):
            brute_force_ctc(lp, [1])


class TestGraphNodes:
    def test_rnnt_node_backward(self):
        rng = np.random.default_rng(7)
        logits = Tensor(rng.normal(size=(3, 3, 4)), requires_grad=True)
        labels = [2, 1]
        node = rnnt_loss_node(logits, labels)
        node.backward()
        lp = normalize_logits(logits.data)
        expected = grad_wrt_logits(lp, rnnt_loss(lp, labels).grad)
        np.testing.assert_allclose(logits.grad, expected, atol=1e-12)

    def test_rnnt_node_zero_upstream(self):
        rng = np.random.default_rng(8)
        logits = Tensor(rng.normal(size=(2, 2, 3)), requires_grad=True)
        node = rnnt_loss_node(logits, [1])
        node.backward(np.asarray(0.0))
        assert np.all(logits.grad == 0.0)

    def test_ctc_node_backward_and_infeasible(self):
        rng = np.random.default_rng(9)
        logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
        node, result = ctc_loss_node(logits, [1, 2])
        assert not result.infeasible
        node.backward()
        assert logits.grad.shape == logits.data.shape
        short = Tensor(rng.normal(size=(1, 3)), requires_grad=True)
        node, result = ctc_loss_node(short, [1, 1])
        assert node is None and result.infeasible

    def test_float32_lattice_normalized_in_float64(self):
        # float32 logits still satisfy the normalization precondition
        # because the node renormalizes in float64 before the recursion
        rng = np.random.default_rng(10)
        logits = Tensor(
            rng.normal(size=(3, 2, 4)).astype(np.float32), requires_grad=True
        )
        node = rnnt_loss_node(logits, [3])
        node.backward()
        assert logits.grad.dtype == np.float32
        assert math.isfinite(float(node.data))
