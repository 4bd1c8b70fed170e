"""Robust unscented filter: batch regression, projection-statistics
prewhitening, Huber IRLS estimation and sandwich covariance update.

Each step rewrites the measurement update as a linear regression over the
stacked measurement and prediction vectors, whitens it so every row carries
unit error variance, downweights rows whose two-step history is outlying in
position space, and solves the Huber M-estimation problem by iteratively
reweighted least squares starting from the plain least-squares fit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

from ..robust import HuberConfig, PsResult, efficiency_coefficient, huber_psi, huber_rho, \
    projection_statistics
from .base import (
    FilterError,
    GaussianBelief,
    Prediction,
    SigmaSpread,
    SystemModel,
    symmetrize,
    ukf_predict,
)

__all__ = [
    "BatchRegressionForm",
    "IrlsResult",
    "GmStepDiagnostics",
    "build_batch_regression",
    "detect_outliers",
    "irls_solve",
    "update_covariance",
    "GmUnscentedKalmanFilter",
]

_SCALE_FLOOR = 1e-12
_MAD_TO_SIGMA = 1.4826


@dataclass
class BatchRegressionForm:
    """Whitened linear regression over stacked measurements and predictions.

    y stacks the raw measurement and the predicted state; design is the
    statistically linearized map [H; I] from the state to y.  The whitened
    system solves for the correction to the predicted state: whitened_target
    = whitened_design @ delta + e with Cov(e) = I.
    """

    y: np.ndarray                 # (n_z + n_x,) raw stacked observation vector
    design: np.ndarray            # (n_z + n_x, n_x)
    meas_cov: np.ndarray          # R~ block (measurement noise + linearization residual)
    pred_cov: np.ndarray          # predicted state covariance block
    x_pred: np.ndarray            # linearization point
    whitened_design: np.ndarray   # (n_z + n_x, n_x)
    whitened_target: np.ndarray   # (n_z + n_x,)
    n_z: int

    def residuals(self, delta: np.ndarray) -> np.ndarray:
        """Whitened residuals at a candidate state correction."""
        return self.whitened_target - self.whitened_design @ delta


def build_batch_regression(prediction: Prediction, z: np.ndarray, r: np.ndarray,
                           x_pred_observed: np.ndarray | None = None,
                           innovation: np.ndarray | None = None) -> BatchRegressionForm:
    """Assemble and prewhiten the stacked measurement/prediction regression.

    The measurement block is linearized through the unscented moments
    (H = P_xz' P_pred^-1) with the linearization residual folded into the
    measurement covariance.  x_pred_observed lets the caller present a
    corrupted copy of the prediction as the observed prediction vector while
    keeping the linearization taken at the clean one; innovation overrides
    the raw z - z_pred (e.g. with angle-wrapped differences).
    """
    z = np.asarray(z, dtype=float)
    x_pred = prediction.mean
    p_pred = symmetrize(prediction.cov)
    n_x = x_pred.size
    n_z = z.size
    if x_pred_observed is None:
        x_pred_observed = x_pred
    if innovation is None:
        innovation = z - prediction.z_pred

    try:
        h_meas = np.linalg.solve(p_pred, prediction.p_xz).T
    except np.linalg.LinAlgError as exc:
        raise FilterError("predicted covariance is singular in the regression build") from exc
    lin_residual = symmetrize(prediction.p_zz - h_meas @ prediction.p_xz)
    meas_cov = symmetrize(np.asarray(r, dtype=float) + lin_residual)

    try:
        chol_meas = scipy.linalg.cholesky(meas_cov, lower=True)
        chol_pred = scipy.linalg.cholesky(p_pred, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise FilterError("joint error covariance is not positive definite") from exc

    design = np.vstack([h_meas, np.eye(n_x)])
    target = np.concatenate([innovation, x_pred_observed - x_pred])
    wh_meas = scipy.linalg.solve_triangular(chol_meas, np.hstack([h_meas, innovation[:, None]]), lower=True)
    wh_pred = scipy.linalg.solve_triangular(chol_pred, np.hstack([np.eye(n_x), (x_pred_observed - x_pred)[:, None]]), lower=True)
    whitened_design = np.vstack([wh_meas[:, :n_x], wh_pred[:, :n_x]])
    whitened_target = np.concatenate([wh_meas[:, n_x], wh_pred[:, n_x]])

    return BatchRegressionForm(
        y=np.concatenate([z, x_pred_observed]),
        design=design,
        meas_cov=meas_cov,
        pred_cov=p_pred,
        x_pred=x_pred,
        whitened_design=whitened_design,
        whitened_target=whitened_target,
        n_z=n_z,
    )


def detect_outliers(two_time: np.ndarray, config: HuberConfig,
                    first_step: bool = False, n_meas: int | None = None) -> PsResult:
    """Position-based row weights from the two-step history matrix.

    two_time holds one row per regression row: (value at k-1, value at k) of
    the standardized innovation entries followed by the standardized predicted
    state increments.  When n_meas is given, the innovation rows and the
    prediction rows are screened as separate clouds: they are standardized in
    different units, so pooling them would let the tighter block make the
    other read as outlying wholesale.  On the first step there is no history
    and every row keeps full weight.
    """
    two_time = np.asarray(two_time, dtype=float)
    if two_time.ndim != 2 or two_time.shape[1] != 2:
        raise ValueError(f"two-time matrix must be (m, 2), got {two_time.shape}")
    m = two_time.shape[0]
    if first_step:
        return PsResult(ps=np.zeros(m), flags=np.zeros(m, dtype=bool),
                        weights=np.ones(m), degenerate=True)
    if not np.all(np.isfinite(two_time)):
        raise FilterError("two-time matrix contains non-finite entries")
    if n_meas is None or n_meas in (0, m):
        return projection_statistics(two_time, config)

    def screen(block: np.ndarray) -> PsResult:
        # too few points for a meaningful 2-D scale: keep full weight
        if block.shape[0] < 5:
            k = block.shape[0]
            return PsResult(ps=np.zeros(k), flags=np.zeros(k, dtype=bool),
                            weights=np.ones(k), degenerate=True)
        return projection_statistics(block, config)

    meas = screen(two_time[:n_meas])
    pred = screen(two_time[n_meas:])
    return PsResult(
        ps=np.concatenate([meas.ps, pred.ps]),
        flags=np.concatenate([meas.flags, pred.flags]),
        weights=np.concatenate([meas.weights, pred.weights]),
        degenerate=meas.degenerate or pred.degenerate)


@dataclass
class IrlsResult:
    """Solution of the Huber regression: correction, final row weights and trace."""

    delta: np.ndarray
    weights: np.ndarray          # final psi-based row weights used in the last solve
    iterations: int
    converged: bool
    scale: float
    objective_trace: list[tuple[float, float]] = field(default_factory=list)
    # (objective before, objective after) per reweighted iteration at frozen scale


def _solve_weighted(design: np.ndarray, target: np.ndarray, weights: np.ndarray) -> np.ndarray:
    wd = design * weights[:, None]
    normal = design.T @ wd
    try:
        return np.linalg.solve(normal, wd.T @ target)
    except np.linalg.LinAlgError as exc:
        raise FilterError("weighted normal equations are rank deficient") from exc


def _objective(residuals: np.ndarray, ps_weights: np.ndarray, scale: float, lam: float) -> float:
    r_std = residuals / (scale * ps_weights)
    return float(np.sum(ps_weights**2 * huber_rho(r_std, lam)))


def _robust_scale(residuals: np.ndarray, n_params: int) -> float:
    """MAD-based scale of fitted whitened residuals, corrected for the fit.

    Least-squares fitting deflates residuals by roughly sqrt(1 - p/m); without
    the correction the standardized residuals come out inflated and the Huber
    clipping rejects a large share of clean rows.
    """
    m = residuals.size
    dof = max(1.0 - n_params / m, 0.1)
    return _MAD_TO_SIGMA * float(np.median(np.abs(residuals))) / np.sqrt(dof)


def irls_solve(reg: BatchRegressionForm, ps_weights: np.ndarray,
               config: HuberConfig) -> IrlsResult:
    """Minimize sum_i w_i^2 rho(r_i / (s w_i)) over the state correction.

    The first iteration is the plain (weighted) least-squares fit; subsequent
    iterations reweight each row by psi(r_S)/r_S with the robust scale s
    recomputed from the current residuals.  Stops when the correction changes
    by less than config.irls_tol in the infinity norm.
    """
    ps_weights = np.asarray(ps_weights, dtype=float)
    if np.any(ps_weights <= 0) or np.any(ps_weights > 1):
        raise ValueError("position weights must lie in (0, 1]")
    design, target = reg.whitened_design, reg.whitened_target
    n_params = design.shape[1]

    delta = _solve_weighted(design, target, np.ones(len(target)))
    iterations = 1
    converged = False
    q = np.ones(len(target))
    scale = 0.0
    trace: list[tuple[float, float]] = []

    while iterations < config.irls_max_iter:
        residuals = reg.residuals(delta)
        scale = _robust_scale(residuals, n_params)
        if scale < _SCALE_FLOOR:
            converged = True  # residuals are numerically zero
            break
        r_std = residuals / (scale * ps_weights)
        with np.errstate(invalid="ignore"):
            q = np.where(np.abs(r_std) > 0, huber_psi(r_std, config.lam) / r_std, 1.0)
        before = _objective(residuals, ps_weights, scale, config.lam)
        new_delta = _solve_weighted(design, target, q)
        iterations += 1
        after = _objective(reg.residuals(new_delta), ps_weights, scale, config.lam)
        trace.append((before, after))
        step = float(np.max(np.abs(new_delta - delta)))
        delta = new_delta
        if step < config.irls_tol:
            converged = True
            break

    residuals = reg.residuals(delta)
    final_scale = _robust_scale(residuals, n_params)
    if final_scale >= _SCALE_FLOOR:
        r_std = residuals / (final_scale * ps_weights)
        with np.errstate(invalid="ignore"):
            q = np.where(np.abs(r_std) > 0, huber_psi(r_std, config.lam) / r_std, 1.0)
        scale = final_scale
    else:
        q = np.ones(len(target))
    return IrlsResult(delta=delta, weights=q, iterations=iterations, converged=converged,
                      scale=scale, objective_trace=trace)


def update_covariance(reg: BatchRegressionForm, irls: IrlsResult,
                      config: HuberConfig) -> tuple[GaussianBelief, int]:
    """Sandwich covariance of the robust estimate, kept positive definite.

    P = c * B^-1 M B^-1 with B = H' Q H, M = H' Q^2 H where Q collects the
    final IRLS row weights and c is the Huber efficiency coefficient.  Any
    eigenvalue below 1e-12 of the trace is floored; the number of floored
    eigenvalues is returned alongside the belief.
    """
    design = reg.whitened_design
    q = irls.weights
    bread = design.T @ (design * q[:, None])
    meat = design.T @ (design * (q**2)[:, None])
    try:
        bread_inv = np.linalg.inv(bread)
    except np.linalg.LinAlgError as exc:
        raise FilterError("weight-collapsed regression: bread matrix is singular") from exc
    cov = efficiency_coefficient(config.lam) * bread_inv @ meat @ bread_inv
    cov = symmetrize(cov)

    floored = 0
    eigval, eigvec = np.linalg.eigh(cov)
    floor = 1e-12 * float(np.trace(cov))
    if eigval[0] < floor:
        floored = int(np.sum(eigval < floor))
        eigval = np.maximum(eigval, floor)
        cov = symmetrize((eigvec * eigval) @ eigvec.T)
    mean = reg.x_pred + irls.delta
    return GaussianBelief(mean=mean, covariance=cov), floored


@dataclass
class GmStepDiagnostics:
    ps: PsResult | None = None
    irls_iterations: int = 0
    irls_converged: bool = True
    cov_floored: int = 0
    duration_ms: float = 0.0
    frozen: bool = False
    error: str | None = None
    objective_trace: list[tuple[float, float]] = field(default_factory=list)


class GmUnscentedKalmanFilter:
    """Robust sequential filter: prediction, regression, prewhitening, IRLS.

    Row weights come from projection statistics over the two-step history of
    standardized innovations and predicted-state increments; the estimation
    step is a Huber M-estimator warm-started with weighted least squares; the
    posterior covariance uses the weighted sandwich form with the Gaussian
    efficiency correction.
    """

    name = "gmukf"

    def __init__(self, model: SystemModel, config: HuberConfig = HuberConfig(),
                 spread: SigmaSpread = SigmaSpread(),
                 prediction_corruptor: Callable[[float, np.ndarray], np.ndarray] | None = None,
                 increment_scale: np.ndarray | None = None):
        self.model = model
        self.config = config
        self.spread = spread
        self.prediction_corruptor = prediction_corruptor
        # Per-state allowance for legitimate one-step motion: added to the
        # prediction sigma when standardizing predicted-state increments so
        # ordinary transient dynamics do not read as position outliers.
        self.increment_scale = None if increment_scale is None else np.asarray(increment_scale, dtype=float)
        self._history: np.ndarray | None = None  # standardized row values at k-1

    def _standardized_rows(self, prediction: Prediction, innovation: np.ndarray,
                           x_pred_observed: np.ndarray, prev_mean: np.ndarray) -> np.ndarray:
        s_z = np.sqrt(np.diag(prediction.p_zz) + np.diag(self.model.r))
        s_x = np.sqrt(np.diag(prediction.cov))
        if self.increment_scale is not None:
            s_x = s_x + self.increment_scale
        meas_rows = innovation / s_z
        pred_rows = (x_pred_observed - prev_mean) / s_x
        return np.concatenate([meas_rows, pred_rows])

    def step(self, belief: GaussianBelief, z: np.ndarray, t: float) -> tuple[GaussianBelief, GmStepDiagnostics]:
        start = time.perf_counter()
        diag = GmStepDiagnostics()
        try:
            z = np.asarray(z, dtype=float)
            if not np.all(np.isfinite(z)):
                raise FilterError("non-finite measurement vector")
            prediction = ukf_predict(belief, self.model, t, self.spread)
            x_pred_observed = prediction.mean
            if self.prediction_corruptor is not None:
                x_pred_observed = self.prediction_corruptor(prediction.t, prediction.mean.copy())
            innovation = self.model.wrap_innovation(z - prediction.z_pred)
            reg = build_batch_regression(prediction, z, self.model.r,
                                         x_pred_observed=x_pred_observed,
                                         innovation=innovation)
            current = self._standardized_rows(prediction, innovation, x_pred_observed,
                                              belief.mean)
            first_step = self._history is None
            history = current if first_step else self._history
            two_time = np.stack([history, current], axis=1)
            ps = detect_outliers(two_time, self.config, first_step=first_step,
                                 n_meas=self.model.n_z)
            diag.ps = ps

            irls = irls_solve(reg, ps.weights, self.config)
            diag.irls_iterations = irls.iterations
            diag.irls_converged = irls.converged
            diag.objective_trace = irls.objective_trace

            posterior, floored = update_covariance(reg, irls, self.config)
            diag.cov_floored = floored
            self._history = current
        except (RuntimeError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
            diag.frozen = True
            diag.error = str(exc)
            diag.duration_ms = (time.perf_counter() - start) * 1e3
            return belief, diag
        diag.duration_ms = (time.perf_counter() - start) * 1e3
        return posterior, diag
