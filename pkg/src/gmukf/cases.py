"""Built-in study scenarios on the 3-machine system.

All cases share the reference noise mix (Gaussian voltage angles,
bimodal-mixture magnitudes, Laplace real/reactive power) and the line 5-7
trip at t = 0.5 s; they differ in the heavy-tail family on the power channels
and in the injected faults.  Generator 2 (the largest infeed) plays the role
of the illustrative machine whose channels get corrupted.
"""

from __future__ import annotations

from dataclasses import replace

from .dynamics import NetworkEvent, WSCC_LINE_5_7
from .harness import Injection, ScenarioSpec, default_noise
from .noise import NoiseSpec

__all__ = ["CASE_NAMES", "build_case", "TARGET_GENERATOR"]

TARGET_GENERATOR = "gen2"

CASE_NAMES = ("case1", "case2", "case3", "case4", "case5", "gaussian", "stressed", "breakdown")

_TRIP = (NetworkEvent(0.5, "line_trip", branch=WSCC_LINE_5_7),)


def _base(name: str, seed: int, horizon: float) -> ScenarioSpec:
    return ScenarioSpec(name=name, seed=seed, horizon=horizon, events=_TRIP,
                        noise=default_noise())


def build_case(name: str, seed: int = 0, horizon: float = 10.0) -> ScenarioSpec:
    """Instantiate one of the named scenarios with the given seed/horizon."""
    if name == "case1":
        # heavy-tailed power-channel noise, no faults
        return _base(name, seed, horizon)

    if name == "case2":
        # sustained 20% observation outliers on the target machine's P/Q
        spec = _base(name, seed, horizon)
        return replace(spec, injections=(
            Injection("observation_outlier",
                      (f"{TARGET_GENERATOR}.p", f"{TARGET_GENERATOR}.q"),
                      start=4.0, end=6.0, magnitude=0.2),))

    if name == "case3":
        # gross model error: predicted rotor angle off by 20%
        spec = _base(name, seed, horizon)
        return replace(spec, injections=(
            Injection("innovation_outlier", (f"{TARGET_GENERATOR}.delta",),
                      start=4.0, end=6.0, magnitude=0.2),))

    if name == "case4":
        # all terminal channels of the target machine replaced by pure noise
        spec = _base(name, seed, horizon)
        channels = tuple(f"{TARGET_GENERATOR}.{ch}" for ch in ("vm", "va", "p", "q"))
        return replace(spec, injections=(
            Injection("measurement_loss", channels, start=5.0, end=8.0),))

    if name == "case5":
        # power-channel noise with no moments at all
        spec = _base(name, seed, horizon)
        noise = dict(spec.noise)
        noise["p"] = NoiseSpec.cauchy(beta=0.0, alpha=0.005)
        noise["q"] = NoiseSpec.cauchy(beta=0.0, alpha=0.005)
        return replace(spec, noise=noise)

    if name == "gaussian":
        # pure-Gaussian mix used for the least-squares-limit comparison
        spec = _base(name, seed, horizon)
        return replace(spec, noise={
            "va": NoiseSpec.gaussian(0.0, 0.01),
            "vm": NoiseSpec.gaussian(0.0, 0.01),
            "p": NoiseSpec.gaussian(0.0, 0.05),
            "q": NoiseSpec.gaussian(0.0, 0.05),
        })

    if name == "stressed":
        # heavy pre-disturbance load pushes the post-trip system deep into its
        # nonlinear regime before the usual line trip
        spec = _base(name, seed, horizon)
        return replace(spec, system={"name": "wscc9", "load_scale": {4: 1.8}})

    if name == "breakdown":
        # template for the corrupted-row sweep: reference mix, shorter run
        return _base(name, seed, min(horizon, 8.0))

    raise ValueError(f"unknown case {name!r}; valid cases: {', '.join(CASE_NAMES)}")
