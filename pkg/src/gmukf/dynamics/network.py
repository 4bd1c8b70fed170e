"""Bus/branch network model: admittance matrix, Newton power flow, Kron reduction."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "Branch",
    "Grid",
    "PowerFlowResult",
    "NetworkError",
    "ybus",
    "solve_power_flow",
    "kron_reduce",
]

PQ, PV, SLACK = 0, 1, 2


class NetworkError(RuntimeError):
    """Raised when a network computation cannot proceed (singular solve, no convergence)."""


@dataclass(frozen=True)
class Branch:
    """Series branch between two buses (0-based), with total line-charging susceptance."""

    from_bus: int
    to_bus: int
    r: float
    x: float
    b: float = 0.0

    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass
class Grid:
    """Static bus/branch description of the transmission network (per unit).

    bus_kind marks each bus PQ (0), PV (1) or slack (2); v_set holds the
    scheduled voltage magnitude at PV/slack buses, p_gen the scheduled active
    generation at PV buses, and p_load/q_load the constant-power loads used by
    the power flow.
    """

    bus_kind: np.ndarray
    v_set: np.ndarray
    p_gen: np.ndarray
    p_load: np.ndarray
    q_load: np.ndarray
    branches: tuple[Branch, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        self.bus_kind = np.asarray(self.bus_kind, dtype=int)
        for name in ("v_set", "p_gen", "p_load", "q_load"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        self.branches = tuple(self.branches)
        n = self.n_bus
        for name in ("v_set", "p_gen", "p_load", "q_load"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have one entry per bus")
        if int((self.bus_kind == SLACK).sum()) != 1:
            raise ValueError("exactly one slack bus is required")
        for br in self.branches:
            if not (0 <= br.from_bus < n and 0 <= br.to_bus < n):
                raise ValueError(f"branch {br} references an unknown bus")

    @property
    def n_bus(self) -> int:
        return int(self.bus_kind.size)

    @property
    def slack(self) -> int:
        return int(np.flatnonzero(self.bus_kind == SLACK)[0])

    def with_load_scale(self, factors: dict[int, float]) -> "Grid":
        """Copy of the grid with per-bus load multipliers applied."""
        p = self.p_load.copy()
        q = self.q_load.copy()
        for bus, f in factors.items():
            p[bus] *= f
            q[bus] *= f
        return replace(self, p_load=p, q_load=q)


def ybus(grid: Grid, outages: frozenset[int] | set[int] = frozenset()) -> np.ndarray:
    """Bus admittance matrix; branches listed in outages are left out."""
    n = grid.n_bus
    y = np.zeros((n, n), dtype=complex)
    for idx, br in enumerate(grid.branches):
        if idx in outages:
            continue
        ys = br.series_admittance()
        shunt = 1j * br.b / 2.0
        f, t = br.from_bus, br.to_bus
        y[f, f] += ys + shunt
        y[t, t] += ys + shunt
        y[f, t] -= ys
        y[t, f] -= ys
    return y


@dataclass
class PowerFlowResult:
    v: np.ndarray
    theta: np.ndarray
    s_injection: np.ndarray
    iterations: int

    @property
    def v_complex(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


def _injections(y: np.ndarray, v: np.ndarray, theta: np.ndarray) -> np.ndarray:
    vc = v * np.exp(1j * theta)
    return vc * np.conj(y @ vc)


def solve_power_flow(grid: Grid, y: np.ndarray | None = None, tol: float = 1e-12,
                     max_iter: int = 50) -> PowerFlowResult:
    """Newton-Raphson power flow in polar form with the analytic Jacobian."""
    if y is None:
        y = ybus(grid)
    n = grid.n_bus
    g, b = y.real, y.imag
    pv = np.flatnonzero(grid.bus_kind == PV)
    pq = np.flatnonzero(grid.bus_kind == PQ)
    idx_th = np.concatenate([pv, pq])
    idx_v = pq

    v = np.where(grid.bus_kind == PQ, 1.0, grid.v_set).astype(float)
    theta = np.zeros(n)
    p_spec = grid.p_gen - grid.p_load
    q_spec = -grid.q_load

    for it in range(max_iter):
        s = _injections(y, v, theta)
        dp = p_spec - s.real
        dq = q_spec - s.imag
        mismatch = np.concatenate([dp[idx_th], dq[idx_v]])
        if np.max(np.abs(mismatch)) < tol:
            return PowerFlowResult(v=v, theta=theta, s_injection=s, iterations=it)

        dth = theta[:, None] - theta[None, :]
        cos_t, sin_t = np.cos(dth), np.sin(dth)
        a = g * cos_t + b * sin_t
        c = g * sin_t - b * cos_t
        vv = v[:, None] * v[None, :]
        # Standard polar blocks: dP/dth, dP/dV, dQ/dth, dQ/dV.
        h_blk = vv * c
        np.fill_diagonal(h_blk, -s.imag - b.diagonal() * v**2)
        n_blk = v[:, None] * a
        np.fill_diagonal(n_blk, s.real / v + g.diagonal() * v)
        m_blk = -vv * a
        np.fill_diagonal(m_blk, s.real - g.diagonal() * v**2)
        l_blk = v[:, None] * c
        np.fill_diagonal(l_blk, s.imag / v - b.diagonal() * v)

        top = np.hstack([h_blk[np.ix_(idx_th, idx_th)], n_blk[np.ix_(idx_th, idx_v)]])
        bot = np.hstack([m_blk[np.ix_(idx_v, idx_th)], l_blk[np.ix_(idx_v, idx_v)]])
        jac = np.vstack([top, bot])
        try:
            step = np.linalg.solve(jac, mismatch)
        except np.linalg.LinAlgError as exc:
            raise NetworkError(f"singular power-flow Jacobian at iteration {it}") from exc
        theta[idx_th] += step[: idx_th.size]
        v[idx_v] += step[idx_th.size:]

    raise NetworkError(f"power flow did not converge in {max_iter} iterations "
                       f"(residual {np.max(np.abs(mismatch)):.3e})")


def kron_reduce(y_full: np.ndarray, internal_admittances: np.ndarray,
                terminal_buses: np.ndarray) -> np.ndarray:
    """Reduce the network to generator internal nodes.

    Each internal node i couples to terminal bus terminal_buses[i] through
    internal_admittances[i]; every physical bus (with its load converted to a
    shunt beforehand) is eliminated.
    """
    n = y_full.shape[0]
    ng = len(terminal_buses)
    y_aug = np.zeros((n + ng, n + ng), dtype=complex)
    y_aug[:n, :n] = y_full
    for i, bus in enumerate(terminal_buses):
        yg = internal_admittances[i]
        y_aug[n + i, n + i] += yg
        y_aug[bus, bus] += yg
        y_aug[n + i, bus] -= yg
        y_aug[bus, n + i] -= yg
    y_ii = y_aug[n:, n:]
    y_ib = y_aug[n:, :n]
    y_bb = y_aug[:n, :n]
    try:
        elim = np.linalg.solve(y_bb, y_ib.T)
    except np.linalg.LinAlgError as exc:
        raise NetworkError("singular bus block during Kron reduction") from exc
    return y_ii - y_ib @ elim
