import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tlhash import loss
from tlhash.errors import DimensionError, InvalidInputError
from tlhash.loss import LossConfig, grad_U, theta_relaxed, total_loss, triplet_log_prob


def reference_loss(triplets, U, alpha, lam):
    """Literal transcription: -sum(x - log(1 + e^x)) + lam * sum ||sgn(u) - u||^2."""
    total = 0.0
    for q, p, n in triplets:
        x = 0.5 * sum(a * b for a, b in zip(U[q], U[p])) - 0.5 * sum(a * b for a, b in zip(U[q], U[n])) - alpha
        total -= x - math.log(1.0 + math.exp(x))
    referenced = sorted({i for t in triplets for i in t})
    for i in referenced:
        total += lam * sum(((1.0 if v > 0 else -1.0) - v) ** 2 for v in U[i])
    return total


def finite_difference_grad(triplets, U, cfg, h=1e-4):
    G = np.zeros_like(U)
    for i in range(U.shape[0]):
        for j in range(U.shape[1]):
            up, um = U.copy(), U.copy()
            up[i, j] += h
            um[i, j] -= h
            G[i, j] = (total_loss(triplets, up, cfg) - total_loss(triplets, um, cfg)) / (2 * h)
    return G


def random_instance(rng, n_images=8, dim=12, n_triplets=10):
    U = rng.normal(size=(n_images, dim))
    # keep clear of the sign discontinuity
    U = np.where(np.abs(U) < 1e-2, np.sign(U + 1e-12) * 0.5, U)
    triplets = np.array([rng.choice(n_images, 3, replace=False) for _ in range(n_triplets)])
    return triplets, U


class TestStableFunctions:
    def test_softplus_matches_naive(self):
        x = np.linspace(-30, 30, 2001)
        naive = np.log1p(np.exp(x))
        np.testing.assert_allclose(loss.softplus(x), naive, rtol=1e-12)

    def test_softplus_extremes_finite(self):
        x = np.array([-1e6, -1e3, 1e3, 1e6])
        out = loss.softplus(x)
        assert np.all(np.isfinite(out))
        assert out[-1] == 1e6 and out[0] == 0.0

    def test_sigmoid_symmetry(self):
        x = np.linspace(-800, 800, 1001)
        np.testing.assert_allclose(loss.sigmoid(x) + loss.sigmoid(-x), 1.0, atol=1e-15)


class TestThetaRelaxed:
    def test_ones(self):
        assert theta_relaxed(np.ones(4), np.ones(4)) == 2.0

    def test_zero(self):
        assert theta_relaxed(np.arange(5.0), np.zeros(5)) == 0.0

    def test_naive_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            a, b = rng.normal(size=(2, 12))
            naive = 0.0
            for x, y in zip(a, b):
                naive += x * y
            assert theta_relaxed(a, b) == pytest.approx(naive / 2, rel=1e-12)

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            theta_relaxed(np.ones(3), np.ones(4))


def _codes_with_gap(gap):
    # theta_qp == gap, theta_qn == 0
    u_q = np.array([1.0, 0.0])
    u_p = np.array([2.0 * gap, 0.0])
    u_n = np.zeros(2)
    return u_q, u_p, u_n


class TestTripletLogProb:
    def test_half(self):
        u_q, u_p, u_n = _codes_with_gap(3.0)
        assert triplet_log_prob(u_q, u_p, u_n, 3.0) == pytest.approx(math.log(0.5), abs=1e-15)

    def test_large_positive(self):
        u_q, u_p, u_n = _codes_with_gap(100.0)
        value = triplet_log_prob(u_q, u_p, u_n, 0.0)
        assert value == pytest.approx(-3.720075976020836e-44, rel=1e-12)
        assert value < 0

    def test_large_negative(self):
        u_q, u_p, u_n = _codes_with_gap(-100.0)
        assert triplet_log_prob(u_q, u_p, u_n, 0.0) == pytest.approx(-100.0, rel=1e-15)

    def test_monotone_in_gap_and_alpha(self):
        gaps = np.linspace(-20, 20, 81)
        values = [triplet_log_prob(*_codes_with_gap(g), 1.0) for g in gaps]
        assert np.all(np.diff(values) > 0)
        u = _codes_with_gap(2.0)
        by_alpha = [triplet_log_prob(*u, a) for a in np.linspace(0, 20, 41)]
        assert np.all(np.diff(by_alpha) < 0)

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            triplet_log_prob(np.array([np.nan]), np.ones(1), np.ones(1), 0.0)
        with pytest.raises(InvalidInputError):
            triplet_log_prob(np.ones(1), np.ones(1), np.ones(1), np.inf)

    @given(st.floats(-1e6, 1e6))
    def test_never_positive_or_nan(self, gap):
        value = float(loss.log_sigmoid(gap))
        assert np.isfinite(value) and value <= 0


class TestTotalLoss:
    def test_single_log2(self):
        u_q, u_p, u_n = _codes_with_gap(2.0)
        U = np.stack([u_q, u_p, u_n])
        assert total_loss([(0, 1, 2)], U, LossConfig(2.0, 0.0)) == pytest.approx(math.log(2))

    def test_quantization_only(self):
        U = np.array([[0.5, -0.5]])
        cfg = LossConfig(0.0, 1.0, quantization_sum="full")
        assert total_loss(np.zeros((0, 3)), U, cfg) == pytest.approx(0.5)

    def test_matches_reference(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            t, U = random_instance(rng)
            cfg = LossConfig(6.0, 100.0)
            assert total_loss(t, U, cfg) == pytest.approx(reference_loss(t, U.tolist(), 6.0, 100.0), rel=1e-12)

    def test_decomposition(self):
        rng = np.random.default_rng(2)
        t, U = random_instance(rng)
        nll, qerr = loss.loss_terms(t, U, LossConfig(3.0, 7.5))
        assert total_loss(t, U, LossConfig(3.0, 0.0)) == nll
        assert total_loss(t, U, LossConfig(3.0, 7.5)) == nll + 7.5 * qerr

    def test_referenced_vs_full(self):
        U = np.array([[0.5, 0.5], [1.0, 1.0], [-1.0, -1.0], [0.0, 0.0]])
        t = [(0, 1, 2)]
        _, q_ref = loss.loss_terms(t, U, LossConfig(0.0, 1.0))
        _, q_full = loss.loss_terms(t, U, LossConfig(0.0, 1.0, "full"))
        assert q_ref == pytest.approx(0.5)
        assert q_full == pytest.approx(2.5)

    def test_positive(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t, U = random_instance(rng)
            assert total_loss(t, U * 10, LossConfig(0.0, 0.0)) > 0

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            total_loss([(0, 1, 5)], np.ones((3, 2)), LossConfig(0.0))

    def test_bad_config(self):
        with pytest.raises(InvalidInputError):
            LossConfig(-1.0)
        with pytest.raises(InvalidInputError):
            LossConfig(1.0, float("nan"))
        with pytest.raises(InvalidInputError):
            LossConfig(1.0, 1.0, "some")

    def test_defaults_from_length(self):
        cfg = LossConfig.for_code_length(32)
        assert (cfg.alpha, cfg.lam) == (16.0, 100.0)


class TestGradient:
    def test_single_triplet_hand_value(self):
        U = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        cfg = LossConfig(1.0, 0.0)
        G = grad_U([(0, 1, 2)], U, cfg)
        np.testing.assert_allclose(G[0], [-0.5, 0.0])
        np.testing.assert_allclose(G, finite_difference_grad([(0, 1, 2)], U, cfg), atol=1e-8)

    def test_unreferenced_image_zero(self):
        rng = np.random.default_rng(4)
        U = rng.normal(size=(5, 3))
        G = grad_U([(0, 1, 2)], U, LossConfig(1.0, 0.0))
        np.testing.assert_array_equal(G[3:], 0.0)

    @pytest.mark.parametrize("alpha,lam", [(0.0, 0.0), (6.0, 0.0), (0.0, 100.0), (6.0, 100.0)])
    def test_finite_differences(self, alpha, lam):
        rng = np.random.default_rng(int(alpha * 10 + lam))
        cfg = LossConfig(alpha, lam)
        for _ in range(5):
            t, U = random_instance(rng)
            G = grad_U(t, U, cfg)
            F = finite_difference_grad(t, U, cfg)
            rel = np.abs(G - F) / np.maximum(np.abs(F), 1e-6)
            assert rel.max() < 1e-4

    def test_full_mode_finite_differences(self):
        rng = np.random.default_rng(5)
        t, U = random_instance(rng, n_images=10)
        cfg = LossConfig(2.0, 3.0, "full")
        np.testing.assert_allclose(grad_U(t, U, cfg), finite_difference_grad(t, U, cfg), rtol=1e-5, atol=1e-6)

    def test_margin_scale_factor(self):
        gap = 1.5
        factors = [1 - loss.sigmoid(gap - a) for a in np.linspace(0, 10, 21)]
        assert np.all(np.diff(factors) > 0)
        assert 1 - loss.sigmoid(gap - 0.0) < 0.5
        assert 1 - loss.sigmoid(gap - gap) == 0.5

    def test_chunk_independent(self):
        rng = np.random.default_rng(6)
        t, U = random_instance(rng, n_triplets=40)
        cfg = LossConfig(6.0, 0.0)
        whole = grad_U(t, U, cfg)
        parts = grad_U(t[:20], U, cfg) + grad_U(t[20:], U, cfg)
        np.testing.assert_allclose(whole, parts, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("mode", ["referenced", "full"])
    def test_fused_pass_consistent(self, mode):
        rng = np.random.default_rng(7)
        t, U = random_instance(rng, n_images=12)
        cfg = LossConfig(6.0, 100.0, mode)
        nll, qerr, grad, scale = loss.loss_and_grad(t, U, cfg)
        assert (nll, qerr) == loss.loss_terms(t, U, cfg)
        np.testing.assert_array_equal(scale, loss.gradient_scale(t, U, cfg.alpha))
        np.testing.assert_array_equal(grad, grad_U(t, U, cfg))
