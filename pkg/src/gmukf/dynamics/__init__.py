"""Multi-machine power system simulation: network, machines, time-domain runs."""

from .machine import GeneratorParams, MACHINE_STATES, N_MACHINE_STATES
from .network import (
    Branch,
    Grid,
    NetworkError,
    PowerFlowResult,
    kron_reduce,
    solve_power_flow,
    ybus,
)
from .simulate import (
    MEASUREMENT_CHANNELS,
    MultiMachineSystem,
    NetworkEvent,
    SimulationError,
    Trajectory,
    derivatives,
    measurement_function,
    rk4_step,
    simulate_truth,
    step_rk4,
)
from .systems import WSCC_LINE_5_7, WSCC_LOAD_BUSES, wscc9

__all__ = [
    "GeneratorParams",
    "MACHINE_STATES",
    "N_MACHINE_STATES",
    "Branch",
    "Grid",
    "NetworkError",
    "PowerFlowResult",
    "kron_reduce",
    "solve_power_flow",
    "ybus",
    "MEASUREMENT_CHANNELS",
    "MultiMachineSystem",
    "NetworkEvent",
    "SimulationError",
    "Trajectory",
    "derivatives",
    "measurement_function",
    "rk4_step",
    "simulate_truth",
    "step_rk4",
    "WSCC_LINE_5_7",
    "WSCC_LOAD_BUSES",
    "wscc9",
]
