"""Multi-machine time-domain simulation on the Kron-reduced network.

The machines are internal voltage sources behind their transient reactances;
loads are constant impedances fixed at the initial power-flow voltages, so the
whole network collapses to a generator-node admittance matrix.  Scheduled
events (line trips, load steps) swap in a new reduced matrix at their start
time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .machine import GeneratorParams, MACHINE_STATES, N_MACHINE_STATES
from .network import Grid, NetworkError, kron_reduce, solve_power_flow, ybus

__all__ = [
    "SimulationError",
    "NetworkEvent",
    "MultiMachineSystem",
    "Trajectory",
    "MEASUREMENT_CHANNELS",
    "rk4_step",
    "derivatives",
    "measurement_function",
    "step_rk4",
    "simulate_truth",
]

MEASUREMENT_CHANNELS = ("vm", "va", "p", "q")


class SimulationError(RuntimeError):
    """Raised when the time-domain simulation cannot produce a valid trajectory."""


@dataclass(frozen=True)
class NetworkEvent:
    """Scheduled network change: a branch outage or a load step at one bus."""

    time: float
    kind: str  # "line_trip" | "load_scale"
    branch: int | None = None
    bus: int | None = None
    factor: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("line_trip", "load_scale"):
            raise ValueError(f"unknown event kind {self.kind!r}")
        if self.kind == "line_trip" and self.branch is None:
            raise ValueError("line_trip event requires a branch index")
        if self.kind == "load_scale" and (self.bus is None or self.factor is None):
            raise ValueError("load_scale event requires bus and factor")
        if self.time < 0:
            raise ValueError("event time must be nonnegative")


@dataclass
class Trajectory:
    """Sampled ground truth: times, states and noise-free measurements."""

    times: np.ndarray
    states: np.ndarray
    clean_measurements: np.ndarray

    def __post_init__(self) -> None:
        if len(self.times) != len(self.states) or len(self.times) != len(self.clean_measurements):
            raise ValueError("trajectory arrays must have equal length")
        if len(self.times) > 1:
            steps = np.diff(self.times)
            if not np.allclose(steps, steps[0], rtol=0, atol=1e-12):
                raise ValueError("trajectory must be uniformly sampled")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0


def rk4_step(f, x, t: float, dt: float):
    """One classical Runge-Kutta step of dx/dt = f(x, t)."""
    k1 = f(x, t)
    k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
    k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
    k4 = f(x + dt * k3, t + dt)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


class MultiMachineSystem:
    """Kron-reduced multi-machine model with a built-in equilibrium.

    Solves the power flow once, converts loads to constant impedances at the
    solved voltages, reduces the network to the generator internal nodes (one
    matrix per event interval), and back-computes the machine equilibrium so
    that the initial state is an exact fixed point.
    """

    def __init__(self, grid: Grid, generators: list[GeneratorParams],
                 events: tuple[NetworkEvent, ...] = (), base_frequency: float = 60.0):
        self.grid = grid
        self.generators = tuple(generators)
        self.events = tuple(sorted(events, key=lambda e: e.time))
        if any(self.events[i].time > self.events[i + 1].time for i in range(len(self.events) - 1)):
            raise ValueError("events must be time-ordered")
        self.base_frequency = float(base_frequency)
        self.omega_s = 2.0 * np.pi * self.base_frequency

        self.n_gen = len(self.generators)
        self.gen_bus = np.array([g.bus for g in self.generators], dtype=int)
        self._h = np.array([g.h for g in self.generators])
        self._d = np.array([g.d for g in self.generators])
        self._xd = np.array([g.xd for g in self.generators])
        self._xq = np.array([g.xq for g in self.generators])
        self._xp = np.array([g.x_transient for g in self.generators])
        self._td0 = np.array([g.td0p for g in self.generators])
        self._tq0 = np.array([g.tq0p for g in self.generators])
        self._ka = np.array([g.ka for g in self.generators])
        self._ta = np.array([g.ta for g in self.generators])
        self._droop = np.array([g.droop for g in self.generators])
        self._tg = np.array([g.tg for g in self.generators])

        self._pf = solve_power_flow(grid)
        self._base_voltages = self._pf.v_complex
        self._build_reduced_segments()
        self._init_equilibrium()

    # ------------------------------------------------------------------ setup

    def _load_shunts(self, load_scale: dict[int, float]) -> np.ndarray:
        p = self.grid.p_load.copy()
        q = self.grid.q_load.copy()
        for bus, f in load_scale.items():
            p[bus] *= f
            q[bus] *= f
        return (p - 1j * q) / np.abs(self._base_voltages) ** 2

    def _reduced(self, outages: set[int], load_scale: dict[int, float]) -> np.ndarray:
        y_full = ybus(self.grid, outages=outages)
        y_full = y_full + np.diag(self._load_shunts(load_scale))
        coupling = 1.0 / (1j * self._xp)
        return kron_reduce(y_full, coupling, self.gen_bus)

    def _build_reduced_segments(self) -> None:
        outages: set[int] = set()
        load_scale: dict[int, float] = {}
        segments = [(-np.inf, self._reduced(outages, load_scale))]
        for ev in self.events:
            if ev.kind == "line_trip":
                outages.add(ev.branch)
            else:
                load_scale[ev.bus] = load_scale.get(ev.bus, 1.0) * ev.factor
            segments.append((ev.time, self._reduced(outages, load_scale)))
        self._segments = segments

    def y_reduced(self, t: float) -> np.ndarray:
        """Reduced admittance matrix in effect at time t (events switch at their start)."""
        y = self._segments[0][1]
        for start, mat in self._segments[1:]:
            if t >= start - 1e-12:
                y = mat
            else:
                break
        return y

    def _init_equilibrium(self) -> None:
        v_term = self._base_voltages[self.gen_bus]
        s_gen = (self._pf.s_injection + (self.grid.p_load + 1j * self.grid.q_load))[self.gen_bus]
        i_gen = np.conj(s_gen / v_term)
        delta = np.angle(v_term + 1j * self._xq * i_gen)
        rot = np.exp(1j * (np.pi / 2 - delta))
        vdq = v_term * rot
        idq = i_gen * rot
        vd, vq = vdq.real, vdq.imag
        i_d, i_q = idq.real, idq.imag
        eqp = vq + self._xp * i_d
        edp = vd - self._xp * i_q
        efd = vq + self._xd * i_d
        pm = (v_term * np.conj(i_gen)).real
        self.vref = np.abs(v_term) + efd / self._ka
        self.pc = pm.copy()
        self.x_equilibrium = np.stack(
            [delta, np.ones(self.n_gen), eqp, edp, efd, pm], axis=1
        ).ravel()

    # ------------------------------------------------------------- dimensions

    @property
    def n_x(self) -> int:
        return self.n_gen * N_MACHINE_STATES

    @property
    def n_z(self) -> int:
        return self.n_gen * len(MEASUREMENT_CHANNELS)

    @property
    def state_names(self) -> tuple[str, ...]:
        return tuple(f"gen{i + 1}.{name}" for i in range(self.n_gen) for name in MACHINE_STATES)

    @property
    def channel_names(self) -> tuple[str, ...]:
        return tuple(f"gen{i + 1}.{ch}" for i in range(self.n_gen) for ch in MEASUREMENT_CHANNELS)

    # -------------------------------------------------------------- evaluation

    def _terminal_quantities(self, x: np.ndarray, t: float):
        """Internal EMFs, generator currents and terminal voltages for batched states."""
        x = np.asarray(x, dtype=float)
        s = x.reshape(x.shape[:-1] + (self.n_gen, N_MACHINE_STATES))
        delta = s[..., 0]
        emf = (s[..., 3] + 1j * s[..., 2]) * np.exp(1j * (delta - np.pi / 2))
        current = emf @ self.y_reduced(t).T
        v_term = emf - 1j * self._xp * current
        return s, delta, emf, current, v_term

    def derivatives(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """State derivatives dx/dt; accepts a batch of states in the leading axes."""
        s, delta, emf, current, v_term = self._terminal_quantities(x, t)
        if not np.all(np.isfinite(s)):
            raise SimulationError("non-finite state passed to derivatives")
        omega, eqp, edp, efd, pm = s[..., 1], s[..., 2], s[..., 3], s[..., 4], s[..., 5]
        idq = current * np.exp(1j * (np.pi / 2 - delta))
        i_d, i_q = idq.real, idq.imag
        p_elec = (emf * np.conj(current)).real

        d_delta = (omega - 1.0) * self.omega_s
        d_omega = (pm - p_elec - self._d * (omega - 1.0)) / (2.0 * self._h)
        d_eqp = (-eqp - (self._xd - self._xp) * i_d + efd) / self._td0
        d_edp = (-edp + (self._xq - self._xp) * i_q) / self._tq0
        d_efd = (self._ka * (self.vref - np.abs(v_term)) - efd) / self._ta
        d_pm = (self.pc + (1.0 - omega) / self._droop - pm) / self._tg
        out = np.stack([d_delta, d_omega, d_eqp, d_edp, d_efd, d_pm], axis=-1)
        return out.reshape(np.asarray(x).shape)

    def measurement(self, x: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Terminal PMU channels per machine: |V|, angle(V), P and Q injection."""
        x = np.asarray(x, dtype=float)
        _, _, _, current, v_term = self._terminal_quantities(x, t)
        s_inj = v_term * np.conj(current)
        out = np.stack([np.abs(v_term), np.angle(v_term), s_inj.real, s_inj.imag], axis=-1)
        return out.reshape(x.shape[:-1] + (self.n_z,))

    def step(self, x: np.ndarray, t: float, dt: float, substeps: int = 1) -> np.ndarray:
        """Advance states from t to t + dt with `substeps` internal RK4 steps."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        h = dt / substeps
        for i in range(substeps):
            x = rk4_step(self.derivatives, x, t + i * h, h)
        if not np.all(np.isfinite(x)):
            raise SimulationError(f"non-finite state after step starting at t={t:.4f}")
        return x

    def simulate(self, horizon: float, dt_sample: float = 0.02, internal_step: float = 0.001,
                 x0: np.ndarray | None = None, omega_bound: float = 0.2) -> Trajectory:
        """Integrate the model and record states/measurements at the sample rate.

        Raises SimulationError naming the first bad sample if any machine speed
        leaves [1 - omega_bound, 1 + omega_bound] or the state goes non-finite.
        """
        n_steps = int(round(horizon / dt_sample))
        substeps = max(1, int(round(dt_sample / internal_step)))
        x = self.x_equilibrium.copy() if x0 is None else np.asarray(x0, dtype=float).copy()
        times = np.arange(n_steps + 1) * dt_sample
        states = np.empty((n_steps + 1, self.n_x))
        measurements = np.empty((n_steps + 1, self.n_z))
        states[0] = x
        measurements[0] = self.measurement(x, 0.0)
        omega_idx = np.arange(self.n_gen) * N_MACHINE_STATES + 1
        for k in range(1, n_steps + 1):
            t_prev = times[k - 1]
            x = self.step(x, t_prev, dt_sample, substeps=substeps)
            speed_dev = np.abs(x[omega_idx] - 1.0)
            if np.max(speed_dev) > omega_bound:
                raise SimulationError(
                    f"trajectory divergent at sample {k} (t={times[k]:.3f}s): "
                    f"max |omega - 1| = {np.max(speed_dev):.4f} exceeds {omega_bound}")
            states[k] = x
            measurements[k] = self.measurement(x, times[k])
        return Trajectory(times=times, states=states, clean_measurements=measurements)


# Functional aliases mirroring the operation-level API.

def derivatives(state: np.ndarray, system: MultiMachineSystem, t: float = 0.0) -> np.ndarray:
    return system.derivatives(state, t)


def measurement_function(state: np.ndarray, system: MultiMachineSystem, t: float = 0.0) -> np.ndarray:
    return system.measurement(state, t)


def step_rk4(state: np.ndarray, dt: float, system: MultiMachineSystem, t: float = 0.0) -> np.ndarray:
    return system.step(state, t, dt, substeps=1)


def simulate_truth(system: MultiMachineSystem, horizon: float, dt_sample: float = 0.02,
                   internal_step: float = 0.001, omega_bound: float = 0.2) -> Trajectory:
    return system.simulate(horizon, dt_sample=dt_sample, internal_step=internal_step,
                           omega_bound=omega_bound)
