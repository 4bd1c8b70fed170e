"""Scenario construction, fault/attack injection, filter execution and metrics.

A scenario bundles a study system, per-channel-class noise families, an
injection schedule and a seed; running it simulates the ground truth once,
corrupts the measurement stream as scheduled, feeds every requested filter
sample by sample at the PMU rate, and reports per-state tracking errors,
timing and divergence diagnostics.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import (
    MACHINE_STATES,
    MEASUREMENT_CHANNELS,
    MultiMachineSystem,
    NetworkEvent,
    Trajectory,
    wscc9,
)
from .filters import (
    GaussianBelief,
    GmUnscentedKalmanFilter,
    SystemModel,
    UnscentedKalmanFilter,
)
from .noise import NoiseSpec, RngStream
from .robust import HuberConfig

__all__ = [
    "STATE_CLASSES",
    "CHANNEL_CLASSES",
    "INJECTION_KINDS",
    "CAUCHY_R_FALLBACK",
    "Injection",
    "ScenarioSpec",
    "RunResult",
    "BreakdownResult",
    "default_noise",
    "build_system",
    "make_system_model",
    "inject",
    "run_scenario",
    "mae",
    "mae_by_class",
    "mae_ratio",
    "breakdown_sweep",
    "timing_report",
    "format_timing_table",
]

STATE_CLASSES = MACHINE_STATES
CHANNEL_CLASSES = MEASUREMENT_CHANNELS
INJECTION_KINDS = ("observation_outlier", "innovation_outlier", "measurement_loss",
                   "replay_attack", "bias_injection")

# Nominal P/Q channel variance assumed by the filters when the actual noise is
# Cauchy (no variance exists): the Laplace(0, 0.2) figure from the reference
# noise mix.  The robustness machinery, not R, has to absorb the tails.
CAUCHY_R_FALLBACK = 0.08

# Sub-stream ids carved out of each scenario seed.
_STREAM_NOISE, _STREAM_INIT, _STREAM_INJECT, _STREAM_BREAKDOWN = 0, 1, 2, 3

# Per-class allowance for ordinary one-step state motion at 50 samples/s,
# used when standardizing predicted-state increments for outlier detection.
# Sized ~2x the fiercest legitimate per-step change seen in post-fault swings
# of the study system.
INCREMENT_ALLOWANCE = {
    "delta": 0.03, "omega": 2e-3, "eqp": 0.01, "edp": 0.01, "efd": 0.10, "pm": 0.02,
}

_PMU_BUDGETS_MS = {"30sps": 100.0 / 3.0, "60sps": 100.0 / 6.0}


def default_noise() -> dict[str, NoiseSpec]:
    """Reference measurement-noise mix: Gaussian angles, bimodal-mixture
    magnitudes, Laplace real/reactive power."""
    return {
        "va": NoiseSpec.gaussian(0.0, 0.01),
        "vm": NoiseSpec.mixture([(0.9, 0.0, 1e-4), (0.1, 0.0, 1e-3)]),
        "p": NoiseSpec.laplace(0.0, 0.2),
        "q": NoiseSpec.laplace(0.0, 0.2),
    }


@dataclass(frozen=True)
class Injection:
    """One scheduled corruption of the data stream.

    targets name measurement channels ("gen2.p") or, for innovation outliers,
    state entries ("gen2.delta").  The window is half-open: start <= t < end.
    observation outliers scale the true value by (1 + magnitude) before noise
    is added (mode "scale") or add magnitude after (mode "add").
    """

    kind: str
    targets: tuple[str, ...]
    start: float
    end: float
    magnitude: float = 0.0
    mode: str = "scale"

    def __post_init__(self) -> None:
        if self.kind not in INJECTION_KINDS:
            raise ValueError(f"unknown injection kind {self.kind!r}; valid: {', '.join(INJECTION_KINDS)}")
        if not self.targets:
            raise ValueError("injection needs at least one target")
        if not (self.start < self.end):
            raise ValueError("injection window must satisfy start < end")
        if not np.isfinite(self.magnitude):
            raise ValueError("injection magnitude must be finite")
        if self.mode not in ("scale", "add"):
            raise ValueError("observation-outlier mode must be 'scale' or 'add'")

    def active(self, t: float) -> bool:
        return self.start - 1e-9 <= t < self.end - 1e-9


@dataclass
class ScenarioSpec:
    """Complete description of one reproducible experiment."""

    name: str
    seed: int = 0
    horizon: float = 10.0
    sample_rate: float = 50.0
    init_error: float = 0.10
    system: dict = field(default_factory=lambda: {"name": "wscc9"})
    events: tuple[NetworkEvent, ...] = ()
    noise: dict[str, NoiseSpec] = field(default_factory=default_noise)
    injections: tuple[Injection, ...] = ()
    huber: HuberConfig = field(default_factory=HuberConfig)
    process_noise: dict[str, float] = field(default_factory=dict)
    r_override: dict[str, float] = field(default_factory=dict)
    filter_substeps: int = 2
    truth_internal_step: float = 0.001
    omega_bound: float = 0.2

    def __post_init__(self) -> None:
        if self.horizon <= 0 or self.sample_rate <= 0:
            raise ValueError("horizon and sample_rate must be positive")
        if self.init_error < 0:
            raise ValueError("init_error must be nonnegative")
        self.events = tuple(self.events)
        self.injections = tuple(self.injections)
        for inj in self.injections:
            if inj.start < 0 or inj.end > self.horizon + 1e-9:
                raise ValueError(
                    f"injection window [{inj.start}, {inj.end}] outside horizon {self.horizon}")
        dt = 1.0 / self.sample_rate
        for ev in self.events:
            if ev.time > self.horizon:
                raise ValueError(f"event at t={ev.time} beyond horizon")
            if abs(ev.time / dt - round(ev.time / dt)) > 1e-9:
                raise ValueError(f"event time {ev.time} must align with the {dt}s sample grid")
        for cls in self.noise:
            if cls not in CHANNEL_CLASSES:
                raise ValueError(f"unknown channel class {cls!r}")
        for cls in self.process_noise:
            if cls not in STATE_CLASSES:
                raise ValueError(f"unknown state class {cls!r}")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    def with_seed(self, seed: int) -> "ScenarioSpec":
        return replace(self, seed=seed)


def build_system(spec: ScenarioSpec) -> MultiMachineSystem:
    """Instantiate the study system named in the scenario, with overrides."""
    conf = dict(spec.system)
    name = conf.pop("name", "wscc9")
    if name != "wscc9":
        raise ValueError(f"unknown system {name!r} (built-in: wscc9)")
    load_scale = conf.pop("load_scale", 1.0)
    if isinstance(load_scale, dict):
        load_scale = {int(k): float(v) for k, v in load_scale.items()}
    grid, generators = wscc9(load_scale=load_scale, **conf)
    return MultiMachineSystem(grid, generators, events=spec.events)


def _channel_class(index: int) -> str:
    return CHANNEL_CLASSES[index % len(CHANNEL_CLASSES)]


def _name_index(names: tuple[str, ...], target: str) -> int:
    try:
        return names.index(target)
    except ValueError:
        raise ValueError(f"unknown target {target!r}; valid names: {', '.join(names)}") from None


def make_system_model(system: MultiMachineSystem, spec: ScenarioSpec) -> SystemModel:
    """Wrap the simulator as the filters' process/measurement model.

    The filter integrates the same dynamics with a coarser internal step than
    the truth simulation, and assumes diagonal process noise per state class
    plus the nominal per-channel measurement variances.
    """
    dt = spec.dt
    q_diag = np.array([spec.process_noise.get(cls, 1e-6) for _ in range(system.n_gen)
                       for cls in STATE_CLASSES])
    r_diag = []
    for ch in range(system.n_z):
        cls = _channel_class(ch)
        if cls in spec.r_override:
            r_diag.append(spec.r_override[cls])
            continue
        var = spec.noise[cls].variance()
        r_diag.append(CAUCHY_R_FALLBACK if var is None else var)
    angle_channels = np.array([ch for ch in range(system.n_z) if _channel_class(ch) == "va"])
    return SystemModel(
        f=lambda x, t: system.step(x, t, dt, substeps=spec.filter_substeps),
        h=lambda x, t: system.measurement(x, t),
        q=np.diag(q_diag),
        r=np.diag(np.asarray(r_diag, dtype=float)),
        dt=dt,
        n_x=system.n_x,
        n_z=system.n_z,
        angle_channels=angle_channels,
    )


def inject(measurements: np.ndarray, injection: Injection, times: np.ndarray,
           channel_names: tuple[str, ...], noise_specs: dict[str, NoiseSpec] | None = None,
           rng: RngStream | None = None) -> np.ndarray:
    """Apply one measurement-side injection to a copy of the stream.

    observation_outlier scales (or offsets) the targeted channels inside the
    window; measurement_loss replaces them with fresh zero-location noise
    draws; replay_attack repeats the window-length stretch of data preceding
    the window; bias_injection adds a constant.  Innovation outliers act on
    the filter's prediction and are handled inside the filter loop instead.
    """
    if injection.kind == "innovation_outlier":
        raise ValueError("innovation outliers corrupt the predicted state, not the measurements")
    out = np.array(measurements, dtype=float, copy=True)
    window = (times >= injection.start - 1e-9) & (times < injection.end - 1e-9)
    if not window.any():
        return out
    cols = [_name_index(channel_names, t) for t in injection.targets]
    if injection.kind == "observation_outlier":
        if injection.mode == "scale":
            out[np.ix_(window, cols)] *= 1.0 + injection.magnitude
        else:
            out[np.ix_(window, cols)] += injection.magnitude
    elif injection.kind == "bias_injection":
        out[np.ix_(window, cols)] += injection.magnitude
    elif injection.kind == "measurement_loss":
        if noise_specs is None or rng is None:
            raise ValueError("measurement_loss needs noise specs and an rng stream")
        n_rows = int(window.sum())
        for col in cols:
            spec = noise_specs[_channel_class(col)]
            out[window, col] = spec.draw(rng, size=n_rows)
    elif injection.kind == "replay_attack":
        idx = np.flatnonzero(window)
        length = len(idx)
        if idx[0] < length:
            raise ValueError("replay window needs an equally long stretch of earlier data")
        out[np.ix_(idx, cols)] = out[np.ix_(idx - length, cols)]
    return out


def _prepare_measurements(spec: ScenarioSpec, system: MultiMachineSystem,
                          truth: Trajectory, rng_noise: RngStream,
                          rng_inject: RngStream) -> np.ndarray:
    """Clean measurements -> pre-noise scaling -> noise -> post-noise attacks."""
    z = truth.clean_measurements.copy()
    names = system.channel_names
    for inj in spec.injections:
        if inj.kind == "observation_outlier" and inj.mode == "scale":
            z = inject(z, inj, truth.times, names)
    n_rows = z.shape[0]
    for ch in range(system.n_z):
        z[:, ch] += spec.noise[_channel_class(ch)].draw(rng_noise, size=n_rows)
    for inj in spec.injections:
        if inj.kind == "observation_outlier" and inj.mode == "add":
            z = inject(z, inj, truth.times, names)
        elif inj.kind in ("bias_injection", "replay_attack"):
            z = inject(z, inj, truth.times, names)
        elif inj.kind == "measurement_loss":
            z = inject(z, inj, truth.times, names, noise_specs=spec.noise, rng=rng_inject)
    return z


def _prediction_corruptor(spec: ScenarioSpec, system: MultiMachineSystem):
    """Callable applying scheduled innovation outliers to the predicted state."""
    schedule = [(inj, [_name_index(system.state_names, t) for t in inj.targets])
                for inj in spec.injections if inj.kind == "innovation_outlier"]
    if not schedule:
        return None

    def corrupt(t: float, x_pred: np.ndarray) -> np.ndarray:
        for inj, idx in schedule:
            if inj.active(t):
                x_pred[idx] *= 1.0 + inj.magnitude
        return x_pred

    return corrupt


@dataclass
class RunResult:
    """Everything a scenario run produced, per filter."""

    spec: ScenarioSpec
    times: np.ndarray
    truth_states: np.ndarray
    measurements: np.ndarray
    estimates: dict[str, np.ndarray]
    mae: dict[str, np.ndarray]
    mae_by_class: dict[str, dict[str, float]]
    timing_ms: dict[str, np.ndarray]
    diverged: dict[str, bool]
    divergence_reason: dict[str, str | None]
    frozen_steps: dict[str, int]
    irls_converged: bool
    ps_flags: np.ndarray | None
    irls_iterations: np.ndarray | None
    cov_floor_events: int


def mae(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Mean absolute error per state column."""
    estimated = np.asarray(estimated, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimated.shape} vs {truth.shape}")
    return np.mean(np.abs(estimated - truth), axis=0)


def mae_by_class(per_state: np.ndarray, n_gen: int) -> dict[str, float]:
    table = per_state.reshape(n_gen, len(STATE_CLASSES))
    return {cls: float(np.mean(table[:, i])) for i, cls in enumerate(STATE_CLASSES)}


def mae_ratio(result_mae: np.ndarray, reference_mae: np.ndarray,
              state_indices: np.ndarray | None = None) -> float:
    """Mean per-state ratio of one MAE vector against a reference run."""
    num = np.asarray(result_mae, dtype=float)
    den = np.asarray(reference_mae, dtype=float)
    if state_indices is not None:
        num = num[state_indices]
        den = den[state_indices]
    return float(np.mean(num / np.maximum(den, 1e-15)))


def _initial_belief(spec: ScenarioSpec, truth: Trajectory, rng: RngStream,
                    n_x: int) -> GaussianBelief:
    """Steady-state values offset by the configured relative error.

    Rotor speeds start at synchronous: the error fraction applies to the
    speed deviation (zero in steady state), since a 10% offset on per-unit
    speed would be a multi-Hz frequency error no PMU-rate filter could see
    past (the rotor angle would slip most of a radian per sample).
    """
    x0 = truth.states[0]
    signs = np.where(rng.uniform(n_x) < 0.5, -1.0, 1.0)
    omega = np.zeros(n_x, dtype=bool)
    omega[1::len(STATE_CLASSES)] = True
    offsets = np.where(omega, 0.0, spec.init_error * signs)
    mean = x0 * (1.0 + offsets)
    sigma = np.maximum(spec.init_error * np.abs(x0), 1e-3)
    sigma[omega] = 1e-3
    return GaussianBelief(mean=mean, covariance=np.diag(sigma**2))


def _make_filter(name: str, model: SystemModel, spec: ScenarioSpec,
                 system: MultiMachineSystem, corruptor):
    omega_idx = np.arange(system.n_gen) * len(STATE_CLASSES) + 1
    if name == "ukf":
        return UnscentedKalmanFilter(model, prediction_corruptor=corruptor,
                                     omega_indices=omega_idx)
    if name == "gmukf":
        increments = np.array([INCREMENT_ALLOWANCE[cls] for _ in range(system.n_gen)
                               for cls in STATE_CLASSES])
        return GmUnscentedKalmanFilter(model, config=spec.huber,
                                       prediction_corruptor=corruptor,
                                       increment_scale=increments)
    raise ValueError(f"unknown filter {name!r} (valid: ukf, gmukf)")


def run_scenario(spec: ScenarioSpec, filters: tuple[str, ...] = ("ukf", "gmukf"),
                 measurement_offsets: np.ndarray | None = None,
                 extra_prediction_corruptor=None) -> RunResult:
    """Simulate truth, corrupt measurements, run each filter at the PMU rate.

    measurement_offsets (same shape as the measurement matrix) and
    extra_prediction_corruptor are hooks for stress studies that corrupt
    arbitrary rows of the stacked regression vector on top of the scenario's
    own injections.
    """
    system = build_system(spec)
    truth = system.simulate(spec.horizon, dt_sample=spec.dt,
                            internal_step=spec.truth_internal_step,
                            omega_bound=spec.omega_bound)
    base = RngStream(spec.seed)
    measurements = _prepare_measurements(spec, system, truth,
                                         base.substream(_STREAM_NOISE),
                                         base.substream(_STREAM_INJECT))
    if measurement_offsets is not None:
        measurements = measurements + measurement_offsets
    model = make_system_model(system, spec)
    init = _initial_belief(spec, truth, base.substream(_STREAM_INIT), system.n_x)
    corruptor = _compose_corruptors(_prediction_corruptor(spec, system),
                                    extra_prediction_corruptor)

    n_steps = len(truth.times) - 1
    estimates: dict[str, np.ndarray] = {}
    mae_per_state: dict[str, np.ndarray] = {}
    mae_cls: dict[str, dict[str, float]] = {}
    timing: dict[str, np.ndarray] = {}
    diverged: dict[str, bool] = {}
    reason: dict[str, str | None] = {}
    frozen: dict[str, int] = {}
    ps_flags = None
    irls_iterations = None
    irls_converged = True
    cov_floor_events = 0

    for name in filters:
        filt = _make_filter(name, model, spec, system, corruptor)
        est = np.empty((n_steps + 1, system.n_x))
        est[0] = init.mean
        step_ms = np.empty(n_steps)
        belief = GaussianBelief(mean=init.mean.copy(), covariance=init.covariance.copy())
        frozen_count = 0
        if name == "gmukf":
            ps_flags = np.zeros((n_steps, system.n_z + system.n_x), dtype=bool)
            irls_iterations = np.zeros(n_steps, dtype=int)
        for k in range(1, n_steps + 1):
            belief, diag = filt.step(belief, measurements[k], truth.times[k - 1])
            est[k] = belief.mean
            step_ms[k - 1] = diag.duration_ms
            if name == "gmukf":
                if diag.frozen:
                    frozen_count += 1
                else:
                    ps_flags[k - 1] = diag.ps.flags
                    irls_iterations[k - 1] = diag.irls_iterations
                    irls_converged &= diag.irls_converged
                    cov_floor_events += diag.cov_floored
            elif diag.diverged and frozen_count == 0:
                frozen_count = n_steps - k + 1
        estimates[name] = est
        timing[name] = step_ms
        per_state = mae(est[1:], truth.states[1:])
        mae_per_state[name] = per_state
        mae_cls[name] = mae_by_class(per_state, system.n_gen)
        if name == "ukf":
            diverged[name] = filt.diverged
            reason[name] = filt.divergence_reason
        else:
            diverged[name] = frozen_count > 0.2 * n_steps
            reason[name] = f"{frozen_count} frozen steps" if diverged[name] else None
        frozen[name] = frozen_count

    return RunResult(
        spec=spec, times=truth.times, truth_states=truth.states,
        measurements=measurements, estimates=estimates, mae=mae_per_state,
        mae_by_class=mae_cls, timing_ms=timing, diverged=diverged,
        divergence_reason=reason, frozen_steps=frozen,
        irls_converged=irls_converged, ps_flags=ps_flags,
        irls_iterations=irls_iterations, cov_floor_events=cov_floor_events)


@dataclass
class BreakdownResult:
    fractions: tuple[float, ...]
    per_fraction_ratio: dict[float, list[float]]  # per-seed mean MAE ratios
    per_fraction_mae: dict[float, np.ndarray]     # seed-averaged per-state MAE
    max_safe_fraction: float | None
    safety_factor: float


def _compose_corruptors(first, second):
    if first is None:
        return second
    if second is None:
        return first

    def composed(t: float, x_pred: np.ndarray) -> np.ndarray:
        return second(t, first(t, x_pred))

    return composed


def _breakdown_corruption(spec: ScenarioSpec, fraction: float, gross_bias: float,
                          window: tuple[float, float], n_z: int, n_x: int):
    """Random per-step row corruption of the stacked vector [z; x_pred].

    Measurement rows get a gross additive bias in the measurement stream;
    prediction rows get the same bias applied to the predicted state the
    filter uses as its prediction observation.
    """
    rng = RngStream(spec.seed, _STREAM_BREAKDOWN)
    m = n_z + n_x
    n_corrupt = int(np.floor(fraction * m))
    n_samples = int(round(spec.horizon * spec.sample_rate)) + 1
    times = np.arange(n_samples) * spec.dt
    offsets = np.zeros((n_samples, n_z))
    pred_schedule: dict[int, list[tuple[int, float]]] = {}
    if n_corrupt == 0:
        return offsets, None
    for k in range(1, n_samples):
        t = times[k]
        if not (window[0] - 1e-9 <= t < window[1] - 1e-9):
            continue
        rows = np.sort(rng.choice(m, size=n_corrupt, replace=False))
        signs = np.where(rng.uniform(n_corrupt) < 0.5, -1.0, 1.0)
        for row, sign in zip(rows, signs):
            if row < n_z:
                offsets[k, row] += gross_bias * sign
            else:
                pred_schedule.setdefault(k, []).append((int(row - n_z), gross_bias * sign))

    if not pred_schedule:
        return offsets, None
    dt = spec.dt

    def corrupt(t: float, x_pred: np.ndarray) -> np.ndarray:
        k = int(round(t / dt))
        for idx, off in pred_schedule.get(k, ()):
            x_pred[idx] += off
        return x_pred

    return offsets, corrupt


def breakdown_sweep(template: ScenarioSpec, fractions: tuple[float, ...],
                    n_seeds: int = 10, gross_bias: float = 5.0,
                    window: tuple[float, float] | None = None,
                    safety_factor: float = 5.0) -> BreakdownResult:
    """Replace a share of regression rows with gross errors and map the MAE.

    For every fraction, each seed's mean per-state MAE ratio against its own
    clean run must stay at or below safety_factor for the fraction to count as
    safe; the largest safe fraction is reported.
    """
    if any(not (0 <= f < 0.5) for f in fractions):
        raise ValueError("fractions must lie in [0, 0.5)")
    if window is None:
        window = (2.0, template.horizon)
    seeds = [template.seed + i for i in range(n_seeds)]
    clean_mae = {}
    for s in seeds:
        clean_mae[s] = run_scenario(template.with_seed(s), filters=("gmukf",)).mae["gmukf"]
    probe = build_system(template)
    n_z, n_x = probe.n_z, probe.n_x
    per_ratio: dict[float, list[float]] = {}
    per_mae: dict[float, np.ndarray] = {}
    for f in sorted(fractions):
        ratios = []
        maes = []
        for s in seeds:
            spec = template.with_seed(s)
            offsets, corrupt = _breakdown_corruption(spec, f, gross_bias, window, n_z, n_x)
            result = run_scenario(spec, filters=("gmukf",),
                                  measurement_offsets=offsets,
                                  extra_prediction_corruptor=corrupt)
            ratios.append(mae_ratio(result.mae["gmukf"], clean_mae[s]))
            maes.append(result.mae["gmukf"])
        per_ratio[f] = ratios
        per_mae[f] = np.mean(maes, axis=0)
    safe = [f for f in sorted(fractions) if all(r <= safety_factor for r in per_ratio[f])]
    return BreakdownResult(
        fractions=tuple(sorted(fractions)), per_fraction_ratio=per_ratio,
        per_fraction_mae=per_mae,
        max_safe_fraction=max(safe) if safe else None,
        safety_factor=safety_factor)


def timing_report(results: list[RunResult]) -> list[dict]:
    """Mean per-sample time per filter per scenario, against the PMU budgets."""
    rows = []
    for result in results:
        for name, ms in result.timing_ms.items():
            mean_ms = float(np.mean(ms))
            rows.append({
                "scenario": result.spec.name,
                "filter": name,
                "mean_ms": mean_ms,
                "max_ms": float(np.max(ms)),
                "within_30sps_budget": mean_ms < _PMU_BUDGETS_MS["30sps"],
                "within_60sps_budget": mean_ms < _PMU_BUDGETS_MS["60sps"],
            })
    return rows


def format_timing_table(rows: list[dict]) -> str:
    if not rows:
        return "(no timing data)"
    header = f"{'scenario':<20} {'filter':<8} {'mean ms':>9} {'max ms':>9} {'<33.3ms':>8} {'<16.7ms':>8}"
    lines = [header, "-" * len(header)]
    for r in rows:
        lines.append(f"{r['scenario']:<20} {r['filter']:<8} {r['mean_ms']:>9.3f} "
                     f"{r['max_ms']:>9.3f} {str(r['within_30sps_budget']):>8} "
                     f"{str(r['within_60sps_budget']):>8}")
    return "\n".join(lines)
