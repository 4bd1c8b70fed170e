"""Built-in study systems.

The desk-scale workhorse is the classic WSCC 3-machine 9-bus network with the
published two-axis machine constants, which keeps every parameter in the
repository while preserving multi-machine transient phenomena.
"""

from __future__ import annotations

import numpy as np

from .machine import GeneratorParams
from .network import PQ, PV, SLACK, Branch, Grid

__all__ = ["wscc9", "WSCC_LINE_5_7", "WSCC_LOAD_BUSES"]

# Index of the 5-7 transmission line in the branch list below; tripping it is
# the standard disturbance for this system.
WSCC_LINE_5_7 = 5

WSCC_LOAD_BUSES = (4, 5, 7)  # 0-based buses carrying load (5, 6 and 8 in 1-based ids)


def wscc9(load_scale: float | dict[int, float] = 1.0,
          damping: float = 2.0,
          exciter_gain: float = 20.0,
          exciter_tc: float = 0.2,
          governor_droop: float = 0.05,
          governor_tc: float = 0.5) -> tuple[Grid, list[GeneratorParams]]:
    """WSCC 3-machine 9-bus test system (100 MVA base, 60 Hz).

    load_scale multiplies every load (scalar) or selected buses (dict keyed by
    0-based bus index); the remaining arguments override the exciter/governor
    constants shared by all three machines.
    """
    grid = Grid(
        bus_kind=np.array([SLACK, PV, PV, PQ, PQ, PQ, PQ, PQ, PQ]),
        v_set=np.array([1.040, 1.025, 1.025, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]),
        p_gen=np.array([0.0, 1.63, 0.85, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        p_load=np.array([0.0, 0.0, 0.0, 0.0, 1.25, 0.90, 0.0, 1.00, 0.0]),
        q_load=np.array([0.0, 0.0, 0.0, 0.0, 0.50, 0.30, 0.0, 0.35, 0.0]),
        branches=(
            Branch(0, 3, 0.0, 0.0576, 0.0),      # step-up transformer G1
            Branch(1, 6, 0.0, 0.0625, 0.0),      # step-up transformer G2
            Branch(2, 8, 0.0, 0.0586, 0.0),      # step-up transformer G3
            Branch(3, 4, 0.010, 0.085, 0.176),   # line 4-5
            Branch(3, 5, 0.017, 0.092, 0.158),   # line 4-6
            Branch(4, 6, 0.032, 0.161, 0.306),   # line 5-7
            Branch(5, 8, 0.039, 0.170, 0.358),   # line 6-9
            Branch(6, 7, 0.0085, 0.072, 0.149),  # line 7-8
            Branch(7, 8, 0.0119, 0.1008, 0.209), # line 8-9
        ),
    )
    if isinstance(load_scale, dict):
        grid = grid.with_load_scale(load_scale)
    elif load_scale != 1.0:
        grid = grid.with_load_scale({b: load_scale for b in WSCC_LOAD_BUSES})

    shared = dict(ka=exciter_gain, ta=exciter_tc, droop=governor_droop, tg=governor_tc, d=damping)
    generators = [
        GeneratorParams(bus=0, h=23.64, xd=0.1460, xq=0.0969, xdp=0.0608, xqp=0.0969,
                        td0p=8.96, tq0p=0.310, **shared),
        GeneratorParams(bus=1, h=6.40, xd=0.8958, xq=0.8645, xdp=0.1198, xqp=0.1969,
                        td0p=6.00, tq0p=0.535, **shared),
        GeneratorParams(bus=2, h=3.01, xd=1.3125, xq=1.2578, xdp=0.1813, xqp=0.2500,
                        td0p=5.89, tq0p=0.600, **shared),
    ]
    return grid, generators
