"""Robust dynamic state estimation for multi-machine power systems.

Subpackages: `robust` (projection statistics, Huber machinery), `noise`
(seeded heavy-tailed samplers), `dynamics` (multi-machine simulator),
`filters` (UKF and the robust GM variant), `harness` (scenario runs and
metrics) and `cli` (command-line entry point).
"""

from .robust import HuberConfig, PsResult, efficiency_coefficient, projection_statistics
from .noise import NoiseSpec, RngStream

__all__ = [
    "HuberConfig",
    "PsResult",
    "efficiency_coefficient",
    "projection_statistics",
    "NoiseSpec",
    "RngStream",
]

__version__ = "0.1.0"
