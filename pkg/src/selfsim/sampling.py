"""Collocation batches: location-based and residual-adaptive sampling.

Batches are drawn infrequently (every ``period`` steps) and are immutable
between resamples, so training sees a fixed nonlinear least-squares problem
for thousands of steps at a time.  Points live on the half line y >= 0;
odd symmetry of the fields makes the negative half redundant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ansatz import q_to_y
from .errors import ConfigError

MEASURES = ("uniform-q", "uniform-y", "log-y")


@dataclass(frozen=True)
class SampleGroup:
    """One point source feeding a loss level."""

    method: str = "location"   # location | adaptive
    count: int = 256
    region: tuple = (0.0, 1.0)
    measure: str = "uniform-q"
    weight: float = 1.0        # per-point loss weight rho
    power: float = 4.0         # adaptive exponent on the squared residual sum
    jitter: float = 1.0        # fraction of one grid cell

    def __post_init__(self):
        if self.method not in ("location", "adaptive"):
            raise ConfigError(f"unknown sampling method {self.method!r}")
        if self.method == "location" and self.measure not in MEASURES:
            raise ConfigError(f"unknown measure {self.measure!r}")
        if self.count <= 0:
            raise ConfigError("group count must be positive")
        if self.weight <= 0.0:
            raise ConfigError("group weight must be positive")
        lo, hi = self.region
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ConfigError(f"bad region {self.region!r}")


@dataclass(frozen=True)
class SamplerSpec:
    d0: tuple = ()
    d1: tuple = ()
    d2: tuple = ()
    period: int = 2000
    adaptive_grid: int = 4096

    def __post_init__(self):
        if self.period < 1:
            raise ConfigError("resample period must be >= 1")

    def groups(self, target: str) -> tuple:
        return getattr(self, target)


def default_sampler(scale: float = 1.0, period: int = 2000) -> SamplerSpec:
    """Default scheme; ``scale`` shrinks all counts for cheap runs."""

    def n(c):
        return max(4, int(round(c * scale)))

    def level(base):
        return (
            SampleGroup("location", n(base), (0.0, 1.0), "uniform-q"),
            SampleGroup("location", n(base // 4), (1e-5, 1.0), "log-y"),
            SampleGroup("adaptive", n(base // 2)),
        )

    return SamplerSpec(
        d0=level(1024), d1=level(512), d2=level(256), period=period
    )


@dataclass(frozen=True)
class CollocationBatch:
    y: np.ndarray
    rho: np.ndarray
    target: str
    epoch_created: int


def schedule_resample(step: int, period: int = 2000) -> bool:
    if period < 1:
        raise ConfigError("resample period must be >= 1")
    return step % period == 0


def sample_location(group: SampleGroup, lam: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Points for a location group; deterministic for a given generator."""
    lo, hi = group.region
    if lo == hi:
        return np.full(group.count, float(lo))
    if group.measure == "uniform-q":
        q = rng.uniform(lo, hi, size=group.count)
        q = np.clip(q, 1e-12, 1.0)
        return q_to_y(q, lam)
    if group.measure == "uniform-y":
        return rng.uniform(lo, hi, size=group.count)
    # log-y
    if lo <= 0.0:
        raise ConfigError("log-y region must be strictly positive")
    e = rng.uniform(np.log10(lo), np.log10(hi), size=group.count)
    return 10.0**e


def adaptive_distribution(residual_sq_sum: np.ndarray, power: float) -> np.ndarray:
    """Categorical cell weights from Sum_k R_k^2 on a grid, w ~ (sum)^p."""
    r = np.asarray(residual_sq_sum, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ConfigError("adaptive sampling needs finite residuals")
    if power == 0.0 or not np.any(r > 0.0):
        return np.full(r.shape, 1.0 / r.size)
    w = (r / r.max()) ** power
    total = w.sum()
    if total <= 0.0:
        return np.full(r.shape, 1.0 / r.size)
    return w / total


def adaptive_grid_q(n: int) -> np.ndarray:
    """Cell-centered q grid on (0, 1)."""
    return (np.arange(n) + 0.5) / n


def sample_adaptive(group: SampleGroup, q_grid: np.ndarray,
                    residual_sq_sum: np.ndarray | None, lam: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Draw from the residual-weighted categorical over grid cells.

    Cold start (no residuals yet) falls back to the uniform distribution.
    Jitter moves each draw uniformly inside its own cell, in q.
    """
    n = q_grid.size
    if residual_sq_sum is None:
        residual_sq_sum = np.zeros(n)
    w = adaptive_distribution(residual_sq_sum, group.power)
    idx = rng.choice(n, size=group.count, p=w)
    q = q_grid[idx]
    if group.jitter > 0.0:
        h = 1.0 / n
        q = q + group.jitter * h * rng.uniform(-0.5, 0.5, size=group.count)
    q = np.clip(q, 1e-12, 1.0)
    return q_to_y(q, lam)


def build_batches(spec: SamplerSpec, lam: float, rng: np.random.Generator,
                  epoch: int,
                  residual_sq_on_grid=None) -> dict:
    """All three loss-level batches for one resample period.

    ``residual_sq_on_grid``: callable mapping y-points to Sum_k R_k(y)^2,
    used by adaptive groups; None falls back to uniform draws.
    """
    q_grid = adaptive_grid_q(spec.adaptive_grid)
    r_grid = None
    if residual_sq_on_grid is not None:
        r_grid = np.asarray(residual_sq_on_grid(q_to_y(q_grid, lam)))
    out = {}
    for target in ("d0", "d1", "d2"):
        ys, rhos = [], []
        for g in spec.groups(target):
            if g.method == "location":
                pts = sample_location(g, lam, rng)
            else:
                pts = sample_adaptive(g, q_grid, r_grid, lam, rng)
            ys.append(pts)
            rhos.append(np.full(pts.size, g.weight))
        if ys:
            y = np.concatenate(ys)
            rho = np.concatenate(rhos)
            order = np.argsort(y, kind="stable")
            out[target] = CollocationBatch(y[order], rho[order], target, epoch)
        else:
            out[target] = CollocationBatch(np.zeros(0), np.zeros(0), target, epoch)
    return out


def resample_stream(base_seed: int, salt: int, index: int) -> np.random.Generator:
    """Independent deterministic generator for one resample event."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([base_seed, salt, index]))
    )
