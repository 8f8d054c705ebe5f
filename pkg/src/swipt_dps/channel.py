"""Fading ensembles: Rician blocks, distance-based gain and a mobility trace."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DomainError

SPEED_OF_LIGHT = 299_792_458.0
DISTANCE_FLOOR = 0.1  # metres; keeps the random walk away from d <= 0


@dataclass(frozen=True)
class FadingEnsemble:
    """N channel power gains treated as an empirical state distribution."""

    gains: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        g = np.ascontiguousarray(self.gains, dtype=float)
        if g.ndim != 1 or g.size < 1:
            raise DomainError("an ensemble needs at least one gain")
        if not np.all(np.isfinite(g)) or np.any(g < 0):
            raise DomainError("gains must be finite and nonnegative")
        g.setflags(write=False)
        object.__setattr__(self, "gains", g)

    @property
    def n(self) -> int:
        return self.gains.size

    @property
    def mean_gain(self) -> float:
        return float(np.mean(self.gains))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("h\n")
            for v in self.gains:
                fh.write(repr(float(v)) + "\n")

    @classmethod
    def from_csv(cls, path, seed=None) -> "FadingEnsemble":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["h"]:
            raise DomainError(f"{path}: expected a single 'h' column")
        gains = np.array([float(r[0]) for r in rows[1:] if r], dtype=float)
        return cls(gains, seed=seed, meta={"source": str(Path(path))})


@dataclass(frozen=True)
class RicianParams:
    alpha: float = 1.0
    los_power: float = 10 ** -2.8
    scatter_var: float = 10 ** -2.8

    def __post_init__(self):
        if not self.alpha >= 0 or not self.los_power >= 0 or not self.scatter_var > 0:
            raise DomainError("need alpha >= 0, los_power >= 0, scatter_var > 0")

    @property
    def mean_gain(self) -> float:
        if math.isinf(self.alpha):
            return self.los_power
        return (self.alpha * self.los_power + self.scatter_var) / (self.alpha + 1)


@dataclass(frozen=True)
class DistanceChannelParams:
    a_t: float = 0.5
    a_r: float = 0.01
    f_c: float = 2.4e9
    c: float = SPEED_OF_LIGHT

    def __post_init__(self):
        if min(self.a_t, self.a_r, self.f_c, self.c) <= 0:
            raise DomainError("distance channel parameters must be positive")


@dataclass(frozen=True)
class MobilityParams:
    d0: float = 15.0
    v_max: float = 0.1
    t_block: float = 1.0

    def __post_init__(self):
        if not self.d0 > 0 or not self.v_max >= 0 or not self.t_block > 0:
            raise DomainError("need d0 > 0, v_max >= 0, t_block > 0")


def gen_rician(n: int, params: RicianParams, seed=None) -> FadingEnsemble:
    """Draw n i.i.d. Rician block gains h = |eta|^2.

    The scattered part is CN(0, scatter_var): each real component has
    variance scatter_var/2. ``alpha = inf`` gives pure line of sight.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    rng = np.random.default_rng(seed)
    if math.isinf(params.alpha):
        w_los, w_sc = 1.0, 0.0
    else:
        w_los = math.sqrt(params.alpha / (params.alpha + 1))
        w_sc = math.sqrt(1 / (params.alpha + 1))
    scatter = rng.standard_normal((n, 2)) * math.sqrt(params.scatter_var / 2)
    re = w_los * math.sqrt(params.los_power) + w_sc * scatter[:, 0]
    im = w_sc * scatter[:, 1]
    gains = re * re + im * im
    meta = {"kind": "rician", "alpha": params.alpha, "los_power": params.los_power,
            "scatter_var": params.scatter_var, "n": n}
    return FadingEnsemble(gains, seed=seed, meta=meta)


def distance_gain(d, params: DistanceChannelParams):
    """h = 1 - exp(-a_t a_r / ((c/f_c)^2 d^2))."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise DomainError("distance must be positive")
    wl = params.c / params.f_c
    h = -np.expm1(-params.a_t * params.a_r / (wl * wl * d * d))
    return float(h) if h.ndim == 0 else h


def mobility_distances(n: int, mob: MobilityParams, seed=None) -> np.ndarray:
    """Distances of a clamped random walk d_k = max(d_{k-1} + beta_k v T, floor).

    The first block sits at d0. The clamped recursion has the closed form
    d_k = S_k + max(d0, floor - min_{j<=k} S_j) with S the partial sums of the
    steps (the usual reflected-walk identity), which keeps this vectorised.
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    n = int(n)
    rng = np.random.default_rng(seed)
    steps = rng.uniform(-1.0, 1.0, n - 1) * mob.v_max * mob.t_block
    s = np.concatenate(([0.0], np.cumsum(steps)))
    low = np.minimum.accumulate(s)
    d = s + np.maximum(mob.d0, DISTANCE_FLOOR - low)
    # the identity is exact in reals; rounding can put a clamped block one ulp low
    return np.maximum(d, DISTANCE_FLOOR)


def mobility_trace(n: int, mob: MobilityParams, dist: DistanceChannelParams,
                   seed=None) -> FadingEnsemble:
    """Gains seen by a receiver drifting around d0."""
    d = mobility_distances(n, mob, seed)
    gains = np.atleast_1d(distance_gain(d, dist))
    meta = {"kind": "mobility", "d0": mob.d0, "v_max": mob.v_max,
            "t_block": mob.t_block, "n": int(n)}
    return FadingEnsemble(gains, seed=seed, meta=meta)
