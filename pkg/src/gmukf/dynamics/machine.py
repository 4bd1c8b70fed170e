"""Two-axis synchronous machine with first-order exciter and turbine-governor.

Six states per machine: rotor angle (rad), rotor speed (pu), q- and d-axis
transient EMFs, field voltage and mechanical power.  The network interface
uses a single transient reactance per machine (the mean of the d- and q-axis
values), which keeps the machine representable as an internal voltage source
behind a constant admittance and lets the network be Kron-reduced away.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["GeneratorParams", "MACHINE_STATES", "N_MACHINE_STATES"]

MACHINE_STATES = ("delta", "omega", "eqp", "edp", "efd", "pm")
N_MACHINE_STATES = len(MACHINE_STATES)


@dataclass(frozen=True)
class GeneratorParams:
    """Per-machine constants (per unit on the system base, time constants in s)."""

    bus: int
    h: float            # inertia constant
    d: float            # damping torque coefficient
    xd: float
    xq: float
    xdp: float          # d-axis transient reactance
    xqp: float          # q-axis transient reactance
    td0p: float         # d-axis open-circuit transient time constant
    tq0p: float         # q-axis open-circuit transient time constant
    ka: float = 20.0    # exciter gain
    ta: float = 0.2     # exciter time constant
    droop: float = 0.05  # governor droop
    tg: float = 0.5     # governor time constant

    def __post_init__(self) -> None:
        positive = ("h", "xd", "xq", "xdp", "xqp", "td0p", "tq0p", "ka", "ta", "droop", "tg")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.d < 0:
            raise ValueError("damping coefficient must be nonnegative")
        if self.xdp > self.xd:
            raise ValueError("xdp must not exceed xd")
        if self.xqp > self.xq:
            raise ValueError("xqp must not exceed xq")

    @property
    def x_transient(self) -> float:
        """Single transient reactance used for the network coupling."""
        return 0.5 * (self.xdp + self.xqp)
