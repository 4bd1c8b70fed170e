"""Robust multivariate statistics: projection statistics, MAD scale, Huber functions.

The projection-statistics routine measures the outlyingness of each point in a
cloud as its worst-case standardized projection over the directions spanned by
the points and their coordinatewise median.  Squared values are compared
against a chi-square(2) quantile to flag outliers, and mapped to downweighting
factors for GM-estimation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2, norm

__all__ = [
    "PS_OUTLIER_THRESHOLD",
    "HuberConfig",
    "PsResult",
    "coordinatewise_median",
    "mad",
    "projection_statistics",
    "huber_rho",
    "huber_psi",
    "huber_psi_prime",
    "huber_moments",
    "efficiency_coefficient",
]

# 97.5% quantile of chi-square with 2 degrees of freedom (approximately 7.3778).
PS_OUTLIER_THRESHOLD = float(chi2.ppf(0.975, 2))

# Cap applied when a standardized projection is infinite (majority tie at the
# median with zero spread); keeps weights strictly positive.
_PS_CAP = 1e8

# Consistency factor making the MAD unbiased for the Gaussian sigma.
MAD_CONSISTENCY = 1.4826


@dataclass(frozen=True)
class HuberConfig:
    """Tuning constants for the robust estimation machinery.

    lam is the Huber breakpoint between the quadratic and linear cost
    regimes, d the breakpoint of the position-based weight function.  Both
    default to 1.5; the IRLS solver stops when successive state corrections
    differ by less than irls_tol (infinity norm) or after irls_max_iter
    solves.
    """

    lam: float = 1.5
    d: float = 1.5
    irls_tol: float = 0.01
    irls_max_iter: int = 20

    def __post_init__(self) -> None:
        if not (self.lam > 0 and self.d > 0 and self.irls_tol > 0):
            raise ValueError("lam, d and irls_tol must all be positive")
        if self.irls_max_iter < 1:
            raise ValueError("irls_max_iter must be a positive integer")


@dataclass
class PsResult:
    """Projection statistics for a point cloud.

    ps holds one nonnegative statistic per point, flags marks points whose
    squared statistic exceeds the chi-square(2) 97.5% quantile, and weights
    holds min(1, d^2 / ps^2) in (0, 1].  degenerate is set when the cloud
    carried no usable direction (e.g. all points identical).
    """

    ps: np.ndarray
    flags: np.ndarray
    weights: np.ndarray
    degenerate: bool = False
    threshold: float = field(default=PS_OUTLIER_THRESHOLD)


def _as_cloud(points: np.ndarray) -> np.ndarray:
    cloud = np.asarray(points, dtype=float)
    if cloud.ndim != 2:
        raise ValueError(f"point cloud must be a 2-D array, got shape {cloud.shape}")
    if cloud.shape[0] < 1 or cloud.shape[1] < 1:
        raise ValueError(f"point cloud must be non-empty, got shape {cloud.shape}")
    if not np.all(np.isfinite(cloud)):
        raise ValueError("point cloud contains non-finite entries")
    return cloud


def coordinatewise_median(points: np.ndarray) -> np.ndarray:
    """Median of each coordinate over the points (rows).

    For an even number of points each component is the midpoint of the two
    central order statistics.
    """
    cloud = _as_cloud(points)
    return np.median(cloud, axis=0)


def mad(values: np.ndarray, n_dim: int) -> float:
    """Corrected median absolute deviation of a projection sample.

    Returns 1.4826 * (1 + 15 / (m - n_dim)) * med_i |v_i - med(v)| where m is
    the sample size and n_dim the dimension of the cloud the projections came
    from.  A return value of exactly 0.0 signals a degenerate scale; the
    caller decides the fallback.
    """
    v = np.asarray(values, dtype=float).ravel()
    m = v.size
    if m <= n_dim:
        raise ValueError(f"need more points than dimensions for the MAD correction (m={m}, n={n_dim})")
    correction = 1.0 + 15.0 / (m - n_dim)
    med = np.median(v)
    return float(MAD_CONSISTENCY * correction * np.median(np.abs(v - med)))


def projection_statistics(points: np.ndarray, config: HuberConfig = HuberConfig()) -> PsResult:
    """Outlyingness of every point as its maximal standardized projection.

    Directions are the unit vectors from the coordinatewise median to each
    point; along each direction the points are standardized by the corrected
    MAD of their projections, and each point keeps its worst direction.

    Degenerate directions (zero MAD) are skipped unless a strict majority of
    at least ceil(m/2)+1 points ties at the projection median, in which case
    off-median points are assigned the cap value along that direction.
    """
    cloud = _as_cloud(points)
    m, n = cloud.shape
    if m < 2:
        raise ValueError("projection statistics need at least two points")

    center = np.median(cloud, axis=0)
    offsets = cloud - center
    norms = np.linalg.norm(offsets, axis=1)
    usable = norms > 0.0
    ps = np.zeros(m)
    if not np.any(usable):
        # All points coincide with the median: nothing to standardize.
        return PsResult(ps=ps, flags=np.zeros(m, dtype=bool), weights=np.ones(m), degenerate=True)

    directions = offsets[usable] / norms[usable, None]
    # projections[i, j] = <point_i, direction_j>
    projections = cloud @ directions.T
    med_proj = np.median(projections, axis=0)
    absdev = np.abs(projections - med_proj)

    correction = 1.0 + 15.0 / (m - n) if m > n else None
    if correction is None:
        raise ValueError(f"need more points than dimensions (m={m}, n={n})")
    scales = MAD_CONSISTENCY * correction * np.median(absdev, axis=0)

    good = scales > 0.0
    if np.any(good):
        ps = np.max(absdev[:, good] / scales[good], axis=1, initial=0.0)

    degenerate = False
    majority = math.ceil(m / 2) + 1
    for j in np.nonzero(~good)[0]:
        tol = 1e-12 * max(1.0, abs(med_proj[j]))
        at_median = absdev[:, j] <= tol
        if int(at_median.sum()) >= majority:
            # Majority tie: points off the median are unboundedly outlying here.
            ps = np.where(at_median, ps, np.maximum(ps, _PS_CAP))
            if not np.all(at_median):
                degenerate = True
        # Otherwise the direction carries no usable scale information: skip it.

    ps = np.minimum(ps, _PS_CAP)
    flags = ps**2 > PS_OUTLIER_THRESHOLD
    with np.errstate(divide="ignore"):
        weights = np.minimum(1.0, np.where(ps > 0.0, config.d**2 / ps**2, 1.0))
    return PsResult(ps=ps, flags=flags, weights=weights, degenerate=degenerate)


def huber_psi(r, lam: float):
    """Huber score: identity inside [-lam, lam], clipped to +/-lam outside."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    r = np.asarray(r, dtype=float)
    out = np.clip(r, -lam, lam)
    return out if out.ndim else float(out)


def huber_psi_prime(r, lam: float):
    """Derivative of the Huber score: 1 inside the breakpoint, 0 outside."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    r = np.asarray(r, dtype=float)
    out = (np.abs(r) <= lam).astype(float)
    return out if out.ndim else float(out)


def huber_rho(r, lam: float):
    """Huber cost: quadratic inside the breakpoint, linear beyond it."""
    if lam <= 0:
        raise ValueError("lam must be positive")
    r = np.asarray(r, dtype=float)
    a = np.abs(r)
    out = np.where(a <= lam, 0.5 * r**2, lam * a - 0.5 * lam**2)
    return out if out.ndim else float(out)


def huber_moments(lam: float) -> tuple[float, float]:
    """(E[psi'], E[psi^2]) of the Huber score under the standard Gaussian.

    Closed forms: E[psi'] = 2 Phi(lam) - 1 and
    E[psi^2] = 2 lam^2 (1 - Phi(lam)) - 2 lam phi(lam) + 2 Phi(lam) - 1.
    """
    if lam <= 0:
        raise ValueError("lam must be positive")
    cdf = norm.cdf(lam)
    e_prime = 2.0 * cdf - 1.0
    e_sq = 2.0 * lam**2 * (1.0 - cdf) - 2.0 * lam * norm.pdf(lam) + e_prime
    return float(e_prime), float(e_sq)


def efficiency_coefficient(lam: float) -> float:
    """Covariance inflation factor E[psi^2] / (E[psi'])^2 at the Gaussian.

    Approaches 1 as lam grows (least-squares limit); roughly 1.037 at the
    default breakpoint 1.5.
    """
    e_prime, e_sq = huber_moments(lam)
    return e_sq / e_prime**2
