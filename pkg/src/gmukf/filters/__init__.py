"""State estimators: baseline UKF and the robust GM variant."""

from .base import (
    FilterError,
    GaussianBelief,
    Prediction,
    SigmaPointSet,
    SigmaSpread,
    SystemModel,
    generate_sigma_points,
    is_positive_definite,
    symmetrize,
    ukf_predict,
    unscented_moments,
)
from .gm import (
    BatchRegressionForm,
    GmStepDiagnostics,
    GmUnscentedKalmanFilter,
    IrlsResult,
    build_batch_regression,
    detect_outliers,
    irls_solve,
    update_covariance,
)
from .ukf import UkfDiagnostics, UnscentedKalmanFilter, ukf_update

__all__ = [
    "FilterError",
    "GaussianBelief",
    "Prediction",
    "SigmaPointSet",
    "SigmaSpread",
    "SystemModel",
    "generate_sigma_points",
    "is_positive_definite",
    "symmetrize",
    "ukf_predict",
    "unscented_moments",
    "BatchRegressionForm",
    "GmStepDiagnostics",
    "GmUnscentedKalmanFilter",
    "IrlsResult",
    "build_batch_regression",
    "detect_outliers",
    "irls_solve",
    "update_covariance",
    "UkfDiagnostics",
    "UnscentedKalmanFilter",
    "ukf_update",
]
