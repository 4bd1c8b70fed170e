"""Unscented machinery, batch regression, IRLS and the robust filter step."""

import numpy as np
import pytest

from gmukf.filters import (
    BatchRegressionForm,
    FilterError,
    GaussianBelief,
    GmUnscentedKalmanFilter,
    SigmaSpread,
    SystemModel,
    UnscentedKalmanFilter,
    build_batch_regression,
    detect_outliers,
    generate_sigma_points,
    irls_solve,
    ukf_predict,
    ukf_update,
    unscented_moments,
    update_covariance,
)
from gmukf.robust import HuberConfig


def linear_model(a, c, q_scale=1e-6, r_scale=1e-4, dt=0.02):
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    n_x, n_z = a.shape[0], c.shape[0]
    return SystemModel(
        f=lambda x, t: x @ a.T,
        h=lambda x, t: x @ c.T,
        q=q_scale * np.eye(n_x),
        r=r_scale * np.eye(n_z),
        dt=dt, n_x=n_x, n_z=n_z,
    )


def kalman_step(a, c, q, r, mean, cov, z):
    """Closed-form linear Kalman prediction + update."""
    mean_p = a @ mean
    cov_p = a @ cov @ a.T + q
    s = c @ cov_p @ c.T + r
    gain = cov_p @ c.T @ np.linalg.inv(s)
    mean_u = mean_p + gain @ (z - c @ mean_p)
    cov_u = cov_p - gain @ s @ gain.T
    return (mean_p, cov_p), (mean_u, cov_u)


def bare_regression(design, target, n_z=None):
    """Regression form wrapper for already-whitened synthetic systems."""
    design = np.asarray(design, dtype=float)
    target = np.asarray(target, dtype=float)
    n = design.shape[1]
    return BatchRegressionForm(
        y=target.copy(), design=design, meas_cov=np.eye(design.shape[0]),
        pred_cov=np.eye(n), x_pred=np.zeros(n), whitened_design=design,
        whitened_target=target, n_z=design.shape[0] if n_z is None else n_z)


class TestSigmaPoints:
    def test_reproduce_belief_moments(self):
        belief = GaussianBelief(mean=np.zeros(2), covariance=np.eye(2))
        sigma = generate_sigma_points(belief)
        assert sigma.points.shape == (5, 2)
        mean, cov = unscented_moments(sigma.points, sigma.mean_weights, sigma.cov_weights)
        assert np.allclose(mean, 0.0, atol=1e-12)
        assert np.allclose(cov, np.eye(2), atol=1e-12)

    def test_reproduce_correlated_belief(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(4, 4))
        cov = a @ a.T + 0.5 * np.eye(4)
        belief = GaussianBelief(mean=rng.normal(size=4), covariance=cov)
        sigma = generate_sigma_points(belief)
        mean, got = unscented_moments(sigma.points, sigma.mean_weights, sigma.cov_weights)
        assert np.allclose(mean, belief.mean, atol=1e-10)
        assert np.allclose(got, cov, atol=1e-10)

    def test_linear_map_propagates_exactly(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(3, 3))
        cov = np.diag([1.0, 2.0, 0.5])
        belief = GaussianBelief(mean=np.array([1.0, -1.0, 0.5]), covariance=cov)
        sigma = generate_sigma_points(belief)
        mapped = sigma.points @ a.T
        mean, got = unscented_moments(mapped, sigma.mean_weights, sigma.cov_weights)
        assert np.allclose(mean, a @ belief.mean, atol=1e-10)
        assert np.allclose(got, a @ cov @ a.T, atol=1e-10)

    def test_quadratic_scalar_mean_exact(self):
        belief = GaussianBelief(mean=np.zeros(1), covariance=np.eye(1))
        sigma = generate_sigma_points(belief)
        mean, _ = unscented_moments(sigma.points**2, sigma.mean_weights, sigma.cov_weights)
        assert mean[0] == pytest.approx(1.0, abs=1e-12)

    def test_non_pd_covariance_reports_min_eigenvalue(self):
        belief = GaussianBelief(mean=np.zeros(2), covariance=np.diag([1.0, -0.5]))
        with pytest.raises(FilterError) as excinfo:
            generate_sigma_points(belief)
        assert excinfo.value.min_eigenvalue == pytest.approx(-0.5, abs=1e-12)

    def test_mean_weights_sum_to_one(self):
        belief = GaussianBelief(mean=np.zeros(3), covariance=np.eye(3))
        for spread in (SigmaSpread(), SigmaSpread(alpha=0.9, beta=2.0, kappa=1.0)):
            sigma = generate_sigma_points(belief, spread)
            assert np.sum(sigma.mean_weights) == pytest.approx(1.0, abs=1e-12)


class TestUkfPredict:
    def test_identity_process_no_noise(self):
        model = linear_model(np.eye(2), np.eye(2), q_scale=0.0)
        belief = GaussianBelief(mean=np.array([0.3, -0.7]), covariance=0.1 * np.eye(2))
        pred = ukf_predict(belief, model, 0.0)
        assert np.allclose(pred.mean, belief.mean, atol=1e-12)
        assert np.allclose(pred.cov, belief.covariance, atol=1e-12)

    def test_linear_matches_kalman_prediction(self):
        rng = np.random.default_rng(3)
        a = 0.9 * np.eye(3) + 0.1 * rng.normal(size=(3, 3))
        c = rng.normal(size=(2, 3))
        model = linear_model(a, c, q_scale=1e-3, r_scale=1e-2)
        cov0 = np.diag([0.2, 0.1, 0.3])
        belief = GaussianBelief(mean=rng.normal(size=3), covariance=cov0)
        pred = ukf_predict(belief, model, 0.0)
        (mean_p, cov_p), _ = kalman_step(a, c, model.q, model.r, belief.mean, cov0, np.zeros(2))
        assert np.allclose(pred.mean, mean_p, atol=1e-10)
        assert np.allclose(pred.cov, cov_p, atol=1e-10)
        assert np.allclose(pred.z_pred, c @ mean_p, atol=1e-10)
        assert np.allclose(pred.p_zz, c @ cov_p @ c.T, atol=1e-10)
        assert np.allclose(pred.p_xz, cov_p @ c.T, atol=1e-10)


class TestUkfUpdate:
    def test_linear_matches_kalman_update(self):
        rng = np.random.default_rng(4)
        a = 0.95 * np.eye(3)
        c = rng.normal(size=(2, 3))
        model = linear_model(a, c, q_scale=1e-3, r_scale=1e-2)
        cov0 = np.diag([0.2, 0.1, 0.3])
        belief = GaussianBelief(mean=rng.normal(size=3), covariance=cov0)
        z = rng.normal(size=2)
        pred = ukf_predict(belief, model, 0.0)
        posterior = ukf_update(pred, z, model.r)
        _, (mean_u, cov_u) = kalman_step(a, c, model.q, model.r, belief.mean, cov0, z)
        assert np.allclose(posterior.mean, mean_u, atol=1e-10)
        assert np.allclose(posterior.covariance, cov_u, atol=1e-10)

    def test_uninformative_measurement_keeps_prior(self):
        model = linear_model(np.eye(2), np.eye(2), q_scale=0.0, r_scale=1e12)
        belief = GaussianBelief(mean=np.array([1.0, 2.0]), covariance=np.eye(2))
        pred = ukf_predict(belief, model, 0.0)
        posterior = ukf_update(pred, np.array([100.0, -50.0]), model.r)
        assert np.allclose(posterior.mean, belief.mean, atol=1e-6)
        assert np.allclose(posterior.covariance, belief.covariance, atol=1e-6)

    def test_divergence_flag_latches(self):
        model = linear_model(np.eye(2), np.eye(2), r_scale=1e-4)
        # measurement covariance forced indefinite to trip the PD check
        model.r = np.diag([1e-4, -1.0])
        ukf = UnscentedKalmanFilter(model)
        belief = GaussianBelief(mean=np.zeros(2), covariance=np.eye(2))
        out, diag = ukf.step(belief, np.zeros(2), 0.0)
        assert diag.diverged and ukf.diverged
        assert out is belief
        _, diag2 = ukf.step(belief, np.zeros(2), 0.02)
        assert diag2.diverged


class TestBatchRegression:
    def test_linear_measurement_block_exact(self):
        rng = np.random.default_rng(5)
        c = rng.normal(size=(2, 3))
        model = linear_model(np.eye(3), c, q_scale=1e-4, r_scale=1e-3)
        belief = GaussianBelief(mean=rng.normal(size=3), covariance=np.diag([0.3, 0.2, 0.1]))
        pred = ukf_predict(belief, model, 0.0)
        reg = build_batch_regression(pred, np.zeros(2), model.r)
        assert np.allclose(reg.design[:2], c, atol=1e-9)
        assert np.allclose(reg.design[2:], np.eye(3), atol=1e-12)
        # linearization of a linear map leaves no residual covariance
        assert np.allclose(reg.meas_cov, model.r, atol=1e-10)

    def test_dimensions(self):
        n_x, n_z = 12, 12
        rng = np.random.default_rng(6)
        c = rng.normal(size=(n_z, n_x))
        model = linear_model(np.eye(n_x), c, q_scale=1e-4, r_scale=1e-3)
        belief = GaussianBelief(mean=np.zeros(n_x), covariance=np.eye(n_x))
        pred = ukf_predict(belief, model, 0.0)
        reg = build_batch_regression(pred, np.zeros(n_z), model.r)
        assert reg.y.shape == (n_z + n_x,)
        assert reg.design.shape == (n_z + n_x, n_x)
        assert reg.whitened_design.shape == (n_z + n_x, n_x)

    def test_whitened_errors_have_identity_covariance(self):
        rng = np.random.default_rng(7)
        c = rng.normal(size=(2, 3))
        p_pred = np.diag([0.3, 0.2, 0.1])
        r = np.diag([0.05, 0.02])
        model = linear_model(np.eye(3), c, q_scale=0.0, r_scale=1.0)
        model.r = r
        x_pred_mean = np.array([0.5, -0.2, 0.1])
        belief = GaussianBelief(mean=x_pred_mean, covariance=p_pred)
        pred = ukf_predict(belief, model, 0.0)

        draws = 10_000
        chol = np.linalg.cholesky(p_pred)
        residuals = np.empty((draws, 5))
        for k in range(draws):
            x_true = pred.mean + chol @ rng.normal(size=3)
            z = c @ x_true + np.sqrt(np.diag(r)) * rng.normal(size=2)
            reg = build_batch_regression(pred, z, r)
            residuals[k] = reg.residuals(x_true - pred.mean)
        cov = np.cov(residuals.T)
        assert np.allclose(np.diag(cov), 1.0, atol=0.05)
        assert np.max(np.abs(cov - np.eye(5))) < 0.05

    def test_corrupted_prediction_appears_only_in_prediction_rows(self):
        rng = np.random.default_rng(8)
        c = rng.normal(size=(2, 3))
        model = linear_model(np.eye(3), c, q_scale=1e-4, r_scale=1e-3)
        belief = GaussianBelief(mean=rng.normal(size=3), covariance=0.1 * np.eye(3))
        pred = ukf_predict(belief, model, 0.0)
        z = c @ pred.mean
        clean = build_batch_regression(pred, z, model.r)
        corrupted_x = pred.mean.copy()
        corrupted_x[1] *= 1.2
        reg = build_batch_regression(pred, z, model.r, x_pred_observed=corrupted_x)
        assert np.allclose(reg.whitened_target[:2], clean.whitened_target[:2], atol=1e-12)
        assert not np.allclose(reg.whitened_target[2:], clean.whitened_target[2:])


class TestDetectOutliers:
    def test_first_step_all_weights_one(self):
        rows = np.random.default_rng(9).normal(size=(30, 2))
        result = detect_outliers(rows, HuberConfig(), first_step=True)
        assert np.all(result.weights == 1.0)
        assert result.degenerate

    def test_outlying_row_downweighted(self):
        rng = np.random.default_rng(10)
        rows = rng.normal(size=(30, 2))
        rows[7] = [0.1, 25.0]
        result = detect_outliers(rows, HuberConfig())
        assert result.flags[7]
        assert result.weights[7] < 0.2
        assert np.mean(result.weights == 1.0) > 0.8

    def test_non_finite_rejected(self):
        rows = np.zeros((10, 2))
        rows[0, 0] = np.inf
        with pytest.raises(FilterError):
            detect_outliers(rows, HuberConfig())


class TestIrls:
    def test_interior_residuals_give_wls_solution(self):
        rng = np.random.default_rng(11)
        design = rng.normal(size=(20, 3))
        beta = np.array([1.0, -2.0, 0.5])
        target = design @ beta + 0.01 * rng.normal(size=20)
        reg = bare_regression(design, target)
        result = irls_solve(reg, np.ones(20), HuberConfig(lam=50.0))
        wls = np.linalg.lstsq(design, target, rcond=None)[0]
        assert np.allclose(result.delta, wls, atol=1e-8)
        assert result.converged

    def test_outlier_row_recovered(self):
        rng = np.random.default_rng(12)
        design = rng.normal(size=(20, 3))
        beta = np.array([2.0, 1.0, -1.0])
        noise = rng.normal(size=20)
        target = design @ beta + noise
        target[4] += 50.0  # 50-sigma offset
        reg = bare_regression(design, target)
        result = irls_solve(reg, np.ones(20), HuberConfig())
        keep = np.ones(20, dtype=bool)
        keep[4] = False
        oracle = np.linalg.lstsq(design[keep], target[keep], rcond=None)[0]
        sigma = np.sqrt(np.diag(np.linalg.inv(design[keep].T @ design[keep])))
        assert np.all(np.abs(result.delta - oracle) < 2 * sigma)

    def test_objective_monotone_after_wls(self):
        rng = np.random.default_rng(13)
        design = rng.normal(size=(40, 4))
        target = design @ rng.normal(size=4) + rng.standard_t(df=2, size=40)
        reg = bare_regression(design, target)
        result = irls_solve(reg, np.ones(40), HuberConfig())
        for before, after in result.objective_trace:
            assert after <= before + 1e-9

    def test_iteration_cap_flags_non_convergence(self):
        rng = np.random.default_rng(14)
        design = rng.normal(size=(30, 3))
        target = design @ rng.normal(size=3) + rng.standard_cauchy(30)
        reg = bare_regression(design, target)
        config = HuberConfig(irls_tol=1e-14, irls_max_iter=3)
        result = irls_solve(reg, np.ones(30), config)
        assert result.iterations == 3
        assert not result.converged

    def test_position_weights_validated(self):
        reg = bare_regression(np.eye(3), np.zeros(3))
        with pytest.raises(ValueError):
            irls_solve(reg, np.array([1.0, 0.0, 1.0]), HuberConfig())

    def test_zero_residuals_converged(self):
        design = np.vstack([np.eye(2), np.eye(2)])
        target = design @ np.array([1.0, 2.0])
        reg = bare_regression(design, target)
        result = irls_solve(reg, np.ones(4), HuberConfig())
        assert result.converged
        assert np.allclose(result.delta, [1.0, 2.0], atol=1e-12)


class TestUpdateCovariance:
    def test_gaussian_limit_equals_wls_covariance(self):
        rng = np.random.default_rng(15)
        design = rng.normal(size=(25, 4))
        target = design @ rng.normal(size=4) + rng.normal(size=25)
        reg = bare_regression(design, target)
        config = HuberConfig(lam=1e6)
        result = irls_solve(reg, np.ones(25), config)
        belief, floored = update_covariance(reg, result, config)
        expected = np.linalg.inv(design.T @ design)
        assert np.allclose(belief.covariance, expected, atol=1e-8)
        assert floored == 0

    def test_clean_gaussian_average_matches_efficiency_scaling(self):
        rng = np.random.default_rng(16)
        design = rng.normal(size=(30, 8))
        wls_cov = np.linalg.inv(design.T @ design)
        config = HuberConfig()
        covs = []
        for _ in range(400):
            target = design @ np.zeros(8) + rng.normal(size=30)
            reg = bare_regression(design, target)
            result = irls_solve(reg, np.ones(30), config)
            belief, _ = update_covariance(reg, result, config)
            covs.append(belief.covariance)
        avg = np.mean(covs, axis=0)
        ratio = np.trace(avg) / np.trace(1.0370907572 * wls_cov)
        assert ratio == pytest.approx(1.0, abs=0.02)

    def test_output_positive_definite_even_with_collapsed_weights(self):
        design = np.vstack([np.eye(3), np.eye(3)])
        target = np.zeros(6)
        reg = bare_regression(design, target)
        result = irls_solve(reg, np.ones(6), HuberConfig())
        result.weights = np.array([1e-14, 1e-14, 1e-14, 1.0, 1.0, 1.0])
        belief, _ = update_covariance(reg, result, HuberConfig())
        assert np.all(np.linalg.eigvalsh(belief.covariance) > 0)


class TestGmFilter:
    @staticmethod
    def rotation_model(q_scale=1e-8, r_scale=1e-6):
        angle = 0.05
        rot = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        return linear_model(rot, np.eye(2), q_scale=q_scale, r_scale=r_scale), rot

    def test_noiseless_tracking_error_decreases(self):
        model, rot = self.rotation_model()
        gm = GmUnscentedKalmanFilter(model)
        x_true = np.array([1.0, 0.0])
        belief = GaussianBelief(mean=x_true + np.array([0.3, -0.2]), covariance=0.2 * np.eye(2))
        errors = []
        for k in range(50):
            x_true = rot @ x_true
            belief, diag = gm.step(belief, x_true.copy(), k * model.dt)
            assert not diag.frozen
            errors.append(np.max(np.abs(belief.mean - x_true)))
        assert errors[-1] < 1e-3 * errors[0]

    def test_first_step_weights_all_one(self):
        model, rot = self.rotation_model()
        gm = GmUnscentedKalmanFilter(model)
        belief = GaussianBelief(mean=np.ones(2), covariance=np.eye(2))
        _, diag = gm.step(belief, np.array([2.0, -1.0]), 0.0)
        assert np.all(diag.ps.weights == 1.0)

    def test_posterior_pd_every_step(self):
        model, rot = self.rotation_model(q_scale=1e-6, r_scale=1e-4)
        gm = GmUnscentedKalmanFilter(model)
        rng = np.random.default_rng(17)
        x_true = np.array([1.0, 0.0])
        belief = GaussianBelief(mean=x_true, covariance=0.1 * np.eye(2))
        for k in range(40):
            x_true = rot @ x_true
            z = x_true + 0.01 * rng.standard_cauchy(2)
            belief, diag = gm.step(belief, z, k * model.dt)
            assert np.all(np.linalg.eigvalsh(belief.covariance) > 0)
            for before, after in diag.objective_trace:
                assert after <= before + 1e-9

    def test_bounded_influence_versus_ukf(self):
        model, rot = self.rotation_model(q_scale=1e-7, r_scale=1e-4)
        rng = np.random.default_rng(18)

        def run(corrupt):
            gm = GmUnscentedKalmanFilter(model)
            ukf = UnscentedKalmanFilter(model)
            x_true = np.array([1.0, 0.2])
            gm_belief = GaussianBelief(mean=x_true.copy(), covariance=0.01 * np.eye(2))
            ukf_belief = GaussianBelief(mean=x_true.copy(), covariance=0.01 * np.eye(2))
            for k in range(6):
                x_true = rot @ x_true
                z = x_true + 0.005 * rng.normal(size=2)
                if corrupt and k == 5:
                    z = z.copy()
                    z[0] *= 10.0
                gm_belief, _ = gm.step(gm_belief, z, k * model.dt)
                ukf_belief, _ = ukf.step(ukf_belief, z, k * model.dt)
            return gm_belief, ukf_belief

        rng = np.random.default_rng(18)
        gm_clean, ukf_clean = run(corrupt=False)
        rng = np.random.default_rng(18)
        gm_hit, ukf_hit = run(corrupt=True)
        sigma = np.sqrt(np.max(np.diag(gm_clean.covariance)))
        gm_move = np.max(np.abs(gm_hit.mean - gm_clean.mean))
        ukf_move = np.max(np.abs(ukf_hit.mean - ukf_clean.mean))
        assert gm_move < 3 * sigma
        assert ukf_move > 10 * sigma

    def test_frozen_on_error(self):
        model, _ = self.rotation_model()
        gm = GmUnscentedKalmanFilter(model)
        belief = GaussianBelief(mean=np.ones(2), covariance=np.eye(2))
        out, diag = gm.step(belief, np.array([np.nan, 0.0]), 0.0)
        assert diag.frozen and diag.error is not None
        assert out is belief
