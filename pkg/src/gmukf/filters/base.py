"""Shared filtering machinery: beliefs, sigma points, unscented prediction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg

__all__ = [
    "FilterError",
    "GaussianBelief",
    "SigmaPointSet",
    "SigmaSpread",
    "SystemModel",
    "Prediction",
    "generate_sigma_points",
    "unscented_moments",
    "ukf_predict",
    "is_positive_definite",
    "symmetrize",
]


class FilterError(RuntimeError):
    """Raised when a filter step cannot proceed; may carry numeric context."""

    def __init__(self, message: str, min_eigenvalue: float | None = None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def is_positive_definite(matrix: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(matrix)
        return True
    except np.linalg.LinAlgError:
        return False


@dataclass
class GaussianBelief:
    """State estimate: mean vector and symmetric covariance matrix."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float)
        self.covariance = np.asarray(self.covariance, dtype=float)
        n = self.mean.size
        if self.covariance.shape != (n, n):
            raise ValueError(f"covariance must be {n}x{n}, got {self.covariance.shape}")
        asym = np.max(np.abs(self.covariance - self.covariance.T)) if n else 0.0
        if asym > 1e-10:
            raise ValueError(f"covariance is not symmetric (max asymmetry {asym:.2e})")

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SigmaSpread:
    """Unscented-transform spread parameters (defaults give the symmetric set
    with all nonzero weights equal, which keeps propagated covariances PSD)."""

    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 0.0


@dataclass
class SigmaPointSet:
    points: np.ndarray        # (2n+1, n)
    mean_weights: np.ndarray  # (2n+1,)
    cov_weights: np.ndarray   # (2n+1,)


def generate_sigma_points(belief: GaussianBelief, spread: SigmaSpread = SigmaSpread()) -> SigmaPointSet:
    """Symmetric 2n+1 sigma points whose weighted mean/covariance reproduce the belief."""
    n = belief.n
    lam = spread.alpha**2 * (n + spread.kappa) - n
    scale = n + lam
    if scale <= 0:
        raise ValueError(f"sigma-point scale n + lambda must be positive, got {scale}")
    cov = symmetrize(belief.covariance)
    try:
        root = scipy.linalg.cholesky(scale * cov, lower=True)
    except scipy.linalg.LinAlgError as exc:
        min_eig = float(np.linalg.eigvalsh(cov).min())
        raise FilterError(
            f"covariance square root failed (min eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig) from exc
    points = np.empty((2 * n + 1, n))
    points[0] = belief.mean
    points[1:n + 1] = belief.mean + root.T
    points[n + 1:] = belief.mean - root.T
    wm = np.full(2 * n + 1, 0.5 / scale)
    wc = wm.copy()
    wm[0] = lam / scale
    wc[0] = lam / scale + (1.0 - spread.alpha**2 + spread.beta)
    return SigmaPointSet(points=points, mean_weights=wm, cov_weights=wc)


def unscented_moments(transformed: np.ndarray, mean_weights: np.ndarray,
                      cov_weights: np.ndarray, cross_with: np.ndarray | None = None):
    """Weighted mean/covariance of transformed points, optionally with the
    cross-covariance against a second point set sharing the same weights."""
    mean = mean_weights @ transformed
    dev = transformed - mean
    cov = (dev * cov_weights[:, None]).T @ dev
    if cross_with is None:
        return mean, symmetrize(cov)
    mean_in = mean_weights @ cross_with
    dev_in = cross_with - mean_in
    cross = (dev_in * cov_weights[:, None]).T @ dev
    return mean, symmetrize(cov), cross


@dataclass
class SystemModel:
    """Discrete-time process/measurement model used by the filters.

    f maps a batch of states at time t to states at t + dt, h maps states to
    measurements; q and r are the process and measurement noise covariances.
    angle_channels lists measurement rows that live on the circle: their
    innovations are wrapped to (-pi, pi] and their sigma-point images are
    unwrapped around the central point before taking moments.
    """

    f: Callable[[np.ndarray, float], np.ndarray]
    h: Callable[[np.ndarray, float], np.ndarray]
    q: np.ndarray
    r: np.ndarray
    dt: float
    n_x: int
    n_z: int
    angle_channels: np.ndarray | None = None

    def wrap_innovation(self, innovation: np.ndarray) -> np.ndarray:
        if self.angle_channels is None or len(self.angle_channels) == 0:
            return innovation
        out = innovation.copy()
        out[self.angle_channels] = wrap_angle(out[self.angle_channels])
        return out


def wrap_angle(value):
    """Map angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(value), 2.0 * np.pi)


@dataclass
class Prediction:
    """Unscented prediction products for one step."""

    mean: np.ndarray        # predicted state
    cov: np.ndarray         # predicted state covariance (process noise included)
    z_pred: np.ndarray      # predicted measurement
    p_zz: np.ndarray        # measurement spread from the transform (noise-free)
    p_xz: np.ndarray        # state/measurement cross covariance
    t: float                # time the measurement refers to

    @property
    def innovation_cov(self) -> np.ndarray:
        return self.p_zz  # noise added by callers that know R


def ukf_predict(belief: GaussianBelief, model: SystemModel, t: float,
                spread: SigmaSpread = SigmaSpread()) -> Prediction:
    """Propagate the belief through the process and measurement maps.

    Sigma points are redrawn from the predicted belief before the measurement
    transform so the induced linearization is taken around the predicted
    state.
    """
    sigma = generate_sigma_points(belief, spread)
    propagated = model.f(sigma.points, t)
    mean, cov = unscented_moments(propagated, sigma.mean_weights, sigma.cov_weights)
    cov = symmetrize(cov + model.q)

    predicted = GaussianBelief(mean=mean, covariance=cov)
    sigma_pred = generate_sigma_points(predicted, spread)
    z_points = model.h(sigma_pred.points, t + model.dt)
    if model.angle_channels is not None and len(model.angle_channels):
        # keep circular channels continuous across the +/-pi seam
        for ch in model.angle_channels:
            center = z_points[0, ch]
            z_points[:, ch] = center + wrap_angle(z_points[:, ch] - center)
    z_pred, p_zz, p_xz = unscented_moments(
        z_points, sigma_pred.mean_weights, sigma_pred.cov_weights, cross_with=sigma_pred.points)
    return Prediction(mean=mean, cov=cov, z_pred=z_pred, p_zz=p_zz, p_xz=p_xz, t=t + model.dt)
