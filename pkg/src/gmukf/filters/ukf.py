"""Baseline unscented Kalman filter with divergence diagnostics."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .base import (
    FilterError,
    GaussianBelief,
    Prediction,
    SigmaSpread,
    SystemModel,
    is_positive_definite,
    symmetrize,
    ukf_predict,
)

__all__ = ["UkfDiagnostics", "UnscentedKalmanFilter", "ukf_update"]

# A state estimate implying more than this per-unit speed deviation has lost
# track of any physically reachable trajectory and is reported divergent.
OMEGA_DIVERGENCE_LIMIT = 0.25


@dataclass
class UkfDiagnostics:
    duration_ms: float = 0.0
    diverged: bool = False
    reason: str | None = None


def ukf_update(prediction: Prediction, z: np.ndarray, r: np.ndarray,
               innovation_transform=None) -> GaussianBelief:
    """Standard gain-based measurement update on an unscented prediction.

    Raises FilterError when the innovation covariance or the posterior loses
    positive definiteness (the caller decides whether that means divergence).
    """
    s = symmetrize(prediction.p_zz + r)
    if not is_positive_definite(s):
        raise FilterError("innovation covariance is not positive definite",
                          min_eigenvalue=float(np.linalg.eigvalsh(s).min()))
    gain = np.linalg.solve(s, prediction.p_xz.T).T
    innovation = z - prediction.z_pred
    if innovation_transform is not None:
        innovation = innovation_transform(innovation)
    mean = prediction.mean + gain @ innovation
    cov = symmetrize(prediction.cov - gain @ s @ gain.T)
    if not is_positive_definite(cov):
        raise FilterError("posterior covariance is not positive definite",
                          min_eigenvalue=float(np.linalg.eigvalsh(cov).min()))
    return GaussianBelief(mean=mean, covariance=cov)


class UnscentedKalmanFilter:
    """Sequential UKF over a SystemModel.

    Divergence (non-PD covariance, non-finite values, or a physically
    impossible speed estimate) latches: the belief freezes at the last valid
    posterior and subsequent steps are reported as diverged.
    """

    name = "ukf"

    def __init__(self, model: SystemModel, spread: SigmaSpread = SigmaSpread(),
                 prediction_corruptor: Callable[[float, np.ndarray], np.ndarray] | None = None,
                 omega_indices: np.ndarray | None = None):
        self.model = model
        self.spread = spread
        self.prediction_corruptor = prediction_corruptor
        self.omega_indices = omega_indices
        self.diverged = False
        self.divergence_reason: str | None = None

    def _check_physical(self, mean: np.ndarray) -> str | None:
        if not np.all(np.isfinite(mean)):
            return "non-finite state estimate"
        if self.omega_indices is not None:
            dev = np.max(np.abs(mean[self.omega_indices] - 1.0))
            if dev > OMEGA_DIVERGENCE_LIMIT:
                return f"speed estimate deviates {dev:.3f} pu from synchronous"
        return None

    def step(self, belief: GaussianBelief, z: np.ndarray, t: float) -> tuple[GaussianBelief, UkfDiagnostics]:
        start = time.perf_counter()
        if self.diverged:
            return belief, UkfDiagnostics(duration_ms=(time.perf_counter() - start) * 1e3,
                                          diverged=True, reason=self.divergence_reason)
        try:
            z = np.asarray(z, dtype=float)
            if not np.all(np.isfinite(z)):
                raise FilterError("non-finite measurement vector")
            prediction = ukf_predict(belief, self.model, t, self.spread)
            if self.prediction_corruptor is not None:
                prediction.mean = self.prediction_corruptor(prediction.t, prediction.mean.copy())
            posterior = ukf_update(prediction, z, self.model.r,
                                   innovation_transform=self.model.wrap_innovation)
            reason = self._check_physical(posterior.mean)
            if reason is not None:
                raise FilterError(reason)
        except (RuntimeError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
            self.diverged = True
            self.divergence_reason = str(exc)
            return belief, UkfDiagnostics(duration_ms=(time.perf_counter() - start) * 1e3,
                                          diverged=True, reason=self.divergence_reason)
        return posterior, UkfDiagnostics(duration_ms=(time.perf_counter() - start) * 1e3)
