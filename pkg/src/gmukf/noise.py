"""Seeded measurement-noise samplers: Gaussian, Gaussian mixture, Laplace, Cauchy.

The heavy-tailed families are drawn by inverting their cumulative distribution
functions from uniform variates, so a single deterministic uniform stream
reproduces every scenario exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "VALID_NOISE_KINDS",
    "RngStream",
    "NoiseSpec",
    "sample_cauchy",
    "sample_laplace",
    "sample_mixture",
]

VALID_NOISE_KINDS = ("gaussian", "gaussian_mixture", "laplace", "cauchy")


class RngStream:
    """Deterministic random stream backed by numpy's PCG64 generator.

    The same (seed, stream) pair always reproduces the same sequence; distinct
    stream ids give independent substreams for parallel scenario runs.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._gen = np.random.default_rng([self.stream, self.seed])

    def substream(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, a, size=None, replace=True):
        return self._gen.choice(a, size=size, replace=replace)

    def __repr__(self) -> str:  # pragma: no cover
        return f"RngStream(seed={self.seed}, stream={self.stream})"


def sample_cauchy(beta: float, alpha: float, u):
    """Invert the Cauchy CDF: beta + alpha * tan(pi * (u - 1/2)) for u in (0, 1)."""
    if alpha <= 0:
        raise ValueError("alpha (scale) must be positive")
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise ValueError("u must lie strictly inside (0, 1); resample endpoint draws")
    out = beta + alpha * np.tan(np.pi * (u - 0.5))
    return out if out.ndim else float(out)


def sample_laplace(mu: float, b: float, u):
    """Invert the Laplace CDF: mu - b * sgn(u) * ln(1 - 2|u|) for u in (-1/2, 1/2)."""
    if b <= 0:
        raise ValueError("b (scale) must be positive")
    u = np.asarray(u, dtype=float)
    if np.any(np.abs(u) >= 0.5):
        raise ValueError("u must lie strictly inside (-1/2, 1/2); resample endpoint draws")
    out = mu - b * np.sign(u) * np.log1p(-2.0 * np.abs(u))
    return out if out.ndim else float(out)


def _validate_components(components) -> list[tuple[float, float, float]]:
    comps = [(float(w), float(m), float(v)) for (w, m, v) in components]
    if not comps:
        raise ValueError("mixture needs at least one component")
    total = sum(w for w, _, _ in comps)
    if any(w <= 0 for w, _, _ in comps):
        raise ValueError("mixture weights must be positive")
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"mixture weights must sum to 1, got {total}")
    if any(v <= 0 for _, _, v in comps):
        raise ValueError("mixture variances must be positive")
    return comps


def sample_mixture(components, rng: RngStream, size=None):
    """Draw from a Gaussian mixture given as (weight, mean, variance) triples."""
    comps = _validate_components(components)
    weights = np.array([w for w, _, _ in comps])
    means = np.array([m for _, m, _ in comps])
    stds = np.sqrt([v for _, _, v in comps])
    edges = np.cumsum(weights)
    scalar = size is None
    n = 1 if scalar else int(np.prod(size))
    idx = np.searchsorted(edges, rng.uniform(n), side="right")
    idx = np.minimum(idx, len(comps) - 1)
    draws = means[idx] + stds[idx] * rng.normal(n)
    if scalar:
        return float(draws[0])
    return draws.reshape(size)


@dataclass
class NoiseSpec:
    """Declarative description of one noise family.

    kind is one of gaussian / gaussian_mixture / laplace / cauchy and params
    carries the family's parameters: gaussian(mean, std), laplace(mu, b),
    cauchy(beta, alpha), gaussian_mixture(components=[(weight, mean,
    variance), ...]).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in VALID_NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}; valid kinds: {', '.join(VALID_NOISE_KINDS)}")
        if self.kind == "gaussian":
            self._require("std")
            if self.params["std"] <= 0:
                raise ValueError("gaussian std must be positive")
            self.params.setdefault("mean", 0.0)
        elif self.kind == "laplace":
            self._require("b")
            if self.params["b"] <= 0:
                raise ValueError("laplace scale b must be positive")
            self.params.setdefault("mu", 0.0)
        elif self.kind == "cauchy":
            self._require("alpha")
            if self.params["alpha"] <= 0:
                raise ValueError("cauchy scale alpha must be positive")
            self.params.setdefault("beta", 0.0)
        else:
            self._require("components")
            self.params["components"] = [tuple(c) for c in self.params["components"]]
            _validate_components(self.params["components"])

    def _require(self, key: str) -> None:
        if key not in self.params:
            raise ValueError(f"noise kind {self.kind!r} requires parameter {key!r}")

    @classmethod
    def gaussian(cls, mean: float = 0.0, std: float = 1.0) -> "NoiseSpec":
        return cls("gaussian", {"mean": mean, "std": std})

    @classmethod
    def mixture(cls, components) -> "NoiseSpec":
        return cls("gaussian_mixture", {"components": [tuple(c) for c in components]})

    @classmethod
    def laplace(cls, mu: float = 0.0, b: float = 1.0) -> "NoiseSpec":
        return cls("laplace", {"mu": mu, "b": b})

    @classmethod
    def cauchy(cls, beta: float = 0.0, alpha: float = 1.0) -> "NoiseSpec":
        return cls("cauchy", {"beta": beta, "alpha": alpha})

    def variance(self) -> float | None:
        """Distribution variance, or None when undefined (Cauchy)."""
        p = self.params
        if self.kind == "gaussian":
            return p["std"] ** 2
        if self.kind == "laplace":
            return 2.0 * p["b"] ** 2
        if self.kind == "cauchy":
            return None
        comps = p["components"]
        mean = sum(w * m for w, m, _ in comps)
        second = sum(w * (v + m**2) for w, m, v in comps)
        return second - mean**2

    def draw(self, rng: RngStream, size=None):
        """Sample from this family using the given stream (endpoint draws are retried)."""
        p = self.params
        if self.kind == "gaussian":
            out = p["mean"] + p["std"] * rng.normal(size)
            return out if size is not None else float(out)
        if self.kind == "gaussian_mixture":
            return sample_mixture(p["components"], rng, size)
        scalar = size is None
        n = 1 if scalar else int(np.prod(size))
        if self.kind == "laplace":
            u = rng.uniform(n) - 0.5  # [-0.5, 0.5)
            bad = np.abs(u) >= 0.5
            while np.any(bad):
                u[bad] = rng.uniform(int(bad.sum())) - 0.5
                bad = np.abs(u) >= 0.5
            out = sample_laplace(p["mu"], p["b"], u)
        else:
            u = rng.uniform(n)
            bad = (u <= 0.0) | (u >= 1.0)
            while np.any(bad):
                u[bad] = rng.uniform(int(bad.sum()))
                bad = (u <= 0.0) | (u >= 1.0)
            out = sample_cauchy(p["beta"], p["alpha"], u)
        if scalar:
            return float(np.asarray(out).ravel()[0])
        return np.asarray(out).reshape(size)

    def to_dict(self) -> dict:
        payload = dict(self.params)
        if self.kind == "gaussian_mixture":
            payload["components"] = [list(c) for c in payload["components"]]
        return {"kind": self.kind, **payload}

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseSpec":
        data = dict(data)
        kind = data.pop("kind", None)
        if kind is None:
            raise ValueError("noise spec requires a 'kind' entry")
        return cls(kind, data)
