"""Robust statistics: medians, MAD, projection statistics, Huber machinery."""

import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from gmukf.robust import (
    HuberConfig,
    PS_OUTLIER_THRESHOLD,
    coordinatewise_median,
    efficiency_coefficient,
    huber_moments,
    huber_psi,
    huber_psi_prime,
    huber_rho,
    mad,
    projection_statistics,
)


def reference_projection_statistics(cloud: np.ndarray) -> np.ndarray:
    """Literal step-by-step transcription of the projection-statistics recipe.

    Deliberately loop-based and independent of the vectorized implementation;
    medians via explicit order statistics.
    """
    cloud = np.asarray(cloud, dtype=float)
    m, n = cloud.shape

    def med(values):
        v = sorted(values)
        k = len(v)
        if k % 2 == 1:
            return v[k // 2]
        return 0.5 * (v[k // 2 - 1] + v[k // 2])

    center = np.array([med(cloud[:, j]) for j in range(n)])
    standardized = [[] for _ in range(m)]
    for j in range(m):
        u = cloud[j] - center
        norm_u = math.sqrt(float(np.sum(u * u)))
        if norm_u == 0.0:
            continue
        direction = u / norm_u
        proj = [float(cloud[i] @ direction) for i in range(m)]
        proj_med = med(proj)
        mad_j = 1.4826 * (1.0 + 15.0 / (m - n)) * med([abs(p - proj_med) for p in proj])
        if mad_j == 0.0:
            continue
        for i in range(m):
            standardized[i].append(abs(proj[i] - proj_med) / mad_j)
    return np.array([max(vals) if vals else 0.0 for vals in standardized])


class TestCoordinatewiseMedian:
    def test_single_point(self):
        assert np.allclose(coordinatewise_median([[1.0, 2.0]]), [1.0, 2.0])

    def test_symmetric(self):
        cloud = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]
        assert np.allclose(coordinatewise_median(cloud), [1.0, 1.0])

    def test_matches_sort_based_oracle(self):
        rng = np.random.default_rng(7)
        cloud = rng.normal(size=(5, 3))
        expected = [sorted(cloud[:, j])[2] for j in range(3)]
        assert np.allclose(coordinatewise_median(cloud), expected)

    def test_even_count_uses_midpoint(self):
        cloud = np.array([[0.0], [1.0], [2.0], [10.0]])
        assert coordinatewise_median(cloud)[0] == pytest.approx(1.5)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            coordinatewise_median(np.empty((0, 2)))


class TestMad:
    def test_zero_spread_flags_degenerate_scale(self):
        assert mad([1.0, 1.0, 1.0], 1) == 0.0

    def test_hand_arithmetic_with_outlier(self):
        # med = 3, med|dev| = 1, correction 1 + 15/4
        assert mad([1, 2, 3, 4, 100], 1) == pytest.approx(1.4826 * (1 + 15 / 4), abs=1e-12)
        assert mad([1, 2, 3, 4, 100], 1) == pytest.approx(7.04235, abs=1e-5)

    def test_hand_arithmetic_symmetric(self):
        assert mad([-1.0, 0.0, 1.0], 1) == pytest.approx(1.4826 * (1 + 15 / 2), abs=1e-12)
        assert mad([-1.0, 0.0, 1.0], 1) == pytest.approx(12.60210, abs=1e-5)

    def test_requires_more_points_than_dims(self):
        with pytest.raises(ValueError):
            mad([1.0, 2.0], 2)


class TestProjectionStatistics:
    def test_identical_points_degenerate(self):
        cloud = np.ones((3, 2))
        result = projection_statistics(cloud)
        assert np.allclose(result.ps, 0.0)
        assert np.allclose(result.weights, 1.0)
        assert not result.flags.any()
        assert result.degenerate

    def test_matches_reference_on_random_clouds(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            n = int(rng.integers(1, 5))
            m = int(rng.integers(n + 2, 31))
            cloud = rng.normal(size=(m, n)) * rng.uniform(0.5, 3.0)
            expected = reference_projection_statistics(cloud)
            got = projection_statistics(cloud).ps
            assert np.max(np.abs(got - expected)) < 1e-10

    def test_far_point_flagged(self):
        rng = np.random.default_rng(3)
        cloud = np.vstack([rng.normal(size=(10, 2)), [[10.0, 10.0]]])
        result = projection_statistics(cloud)
        assert result.ps[-1] ** 2 > PS_OUTLIER_THRESHOLD
        assert result.flags[-1]
        assert result.weights[-1] < 1.0

    def test_collinear_cloud_matches_1d_formula(self):
        rng = np.random.default_rng(11)
        t = rng.normal(size=12)
        direction = np.array([0.6, 0.8])
        origin = np.array([1.0, -2.0])
        cloud = origin + np.outer(t, direction)
        result = projection_statistics(cloud)
        med_t = np.median(t)
        scale = 1.4826 * (1 + 15 / (12 - 2)) * np.median(np.abs(t - med_t))
        expected = np.abs(t - med_t) / scale
        assert np.allclose(result.ps, expected, atol=1e-10)

    def test_translation_and_scale_invariance_exact(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            cloud = rng.normal(size=(15, 3))
            base = projection_statistics(cloud).ps
            shift = rng.normal(size=3) * 10
            scale = rng.uniform(0.1, 10.0)
            assert np.allclose(projection_statistics(cloud + shift).ps, base, atol=1e-8)
            assert np.allclose(projection_statistics(scale * cloud).ps, base, atol=1e-8)

    def test_rotation_near_invariance(self):
        # The direction set pivots on the coordinatewise median, which is not
        # orthogonally equivariant, so rotations perturb the statistics; the
        # perturbation stays bounded and gross-outlier decisions are stable.
        rng = np.random.default_rng(23)
        for _ in range(20):
            cloud = np.vstack([rng.normal(size=(24, 2)), [[12.0, -9.0]]])
            base = projection_statistics(cloud)
            q, _ = np.linalg.qr(rng.normal(size=(2, 2)))
            rotated = projection_statistics(cloud @ q.T)
            rel = np.abs(rotated.ps - base.ps) / np.maximum(base.ps, 1.0)
            assert np.max(rel) < 0.5
            assert rotated.flags[-1] and base.flags[-1]

    def test_gaussian_calibration_band(self):
        # Fraction of PS^2 above the chi2(2) 97.5% quantile for large Gaussian
        # clouds stays in a loose band around the nominal 2.5%.
        rng = np.random.default_rng(1234)
        fractions = []
        for _ in range(100):
            cloud = rng.normal(size=(250, 2))
            result = projection_statistics(cloud)
            fractions.append(np.mean(result.ps**2 > PS_OUTLIER_THRESHOLD))
        mean_fraction = float(np.mean(fractions))
        assert 0.005 <= mean_fraction <= 0.08

    def test_weights_one_at_or_below_d(self):
        rng = np.random.default_rng(5)
        cloud = rng.normal(size=(20, 2))
        result = projection_statistics(cloud, HuberConfig(d=1.5))
        inside = result.ps <= 1.5
        assert np.all(result.weights[inside] == 1.0)
        assert np.all((result.weights > 0) & (result.weights <= 1))

    def test_majority_tie_marks_off_median_points(self):
        # 8 of 9 points identical: spread along any direction is degenerate,
        # the lone distinct point must come back maximally outlying.
        cloud = np.vstack([np.zeros((8, 2)), [[5.0, 0.0]]])
        result = projection_statistics(cloud)
        assert result.ps[-1] ** 2 > PS_OUTLIER_THRESHOLD
        assert np.all(result.ps[:-1] == 0.0)
        assert result.degenerate
        assert result.weights[-1] > 0.0


class TestHuberFunctions:
    def test_point_values(self):
        assert huber_psi(0.0, 1.5) == 0.0
        assert huber_psi(2.0, 1.5) == 1.5
        assert huber_psi(-0.5, 1.5) == -0.5

    def test_psi_odd_monotone_bounded(self):
        r = np.linspace(-10, 10, 2001)
        psi = huber_psi(r, 1.5)
        assert np.allclose(psi, -huber_psi(-r, 1.5))
        assert np.all(np.diff(psi) >= -1e-15)
        assert np.max(np.abs(psi)) <= 1.5

    def test_psi_is_rho_derivative(self):
        r = np.linspace(-5, 5, 401)
        h = 1e-6
        fd = (huber_rho(r + h, 1.5) - huber_rho(r - h, 1.5)) / (2 * h)
        assert np.max(np.abs(fd - huber_psi(r, 1.5))) < 1e-6

    def test_rho_convex(self):
        r = np.linspace(-6, 6, 601)
        rho = huber_rho(r, 1.5)
        second = rho[:-2] - 2 * rho[1:-1] + rho[2:]
        assert np.all(second >= -1e-12)

    def test_psi_prime(self):
        assert huber_psi_prime(0.3, 1.5) == 1.0
        assert huber_psi_prime(-2.0, 1.5) == 0.0


class TestEfficiencyCoefficient:
    def test_intermediates_match_reported_values(self):
        e_prime, e_sq = huber_moments(1.5)
        assert e_prime == pytest.approx(0.8664, abs=1e-4)
        assert e_sq == pytest.approx(0.7784, abs=1e-4)

    def test_large_breakpoint_tends_to_one(self):
        assert efficiency_coefficient(10.0) == pytest.approx(1.0, abs=1e-6)

    def test_agrees_with_quadrature(self):
        for lam in (0.8, 1.5, 2.5):
            e_prime, e_sq = huber_moments(lam)
            q_sq = quad(lambda r: huber_psi(r, lam) ** 2 * norm.pdf(r), -np.inf, np.inf)[0]
            q_prime = quad(lambda r: float(abs(r) <= lam) * norm.pdf(r), -lam, lam)[0]
            assert abs(q_sq - e_sq) < 1e-6
            assert abs(q_prime - e_prime) < 1e-6

    def test_decreasing_toward_one(self):
        lams = np.linspace(1.0, 8.0, 30)
        values = [efficiency_coefficient(l) for l in lams]
        # non-increasing up to float rounding once the coefficient saturates at 1
        assert np.all(np.diff(values) < 1e-12)
        assert values[-1] >= 1.0
        assert values[-1] == pytest.approx(1.0, abs=1e-9)


class TestHuberConfig:
    def test_defaults(self):
        config = HuberConfig()
        assert config.lam == 1.5
        assert config.d == 1.5
        assert config.irls_tol == 0.01
        assert config.irls_max_iter == 20

    def test_invalid_rejected(self):
        with pytest.raises(ValueError):
            HuberConfig(lam=-1.0)
        with pytest.raises(ValueError):
            HuberConfig(irls_max_iter=0)
