"""Per-state policies and their time-shared mixtures."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Policy:
    """Per-state split ratios and transmit powers with cached per-state metrics.

    ``metrics`` maps names such as ``rate``, ``q`` and ``p`` to arrays of
    per-state values; ensemble averages are arithmetic means.
    """

    rho: np.ndarray
    p: np.ndarray
    metrics: dict = field(default_factory=dict)
    duals: tuple = ()

    def mean(self, key: str) -> float:
        return float(np.mean(self.metrics[key]))


@dataclass
class Mixture:
    """A convex combination of policies (time-sharing across blocks).

    Mixing two whole policies with weight theta is the same as letting every
    state whose decision differs between them use the second decision a
    fraction theta of the time.
    """

    parts: list

    @classmethod
    def single(cls, pol: Policy) -> "Mixture":
        return cls([(1.0, pol)])

    @classmethod
    def blend(cls, lo: "Mixture", hi: "Mixture", theta: float) -> "Mixture":
        theta = min(max(float(theta), 0.0), 1.0)
        parts = []
        for w, pol in lo.parts:
            parts.append(((1.0 - theta) * w, pol))
        for w, pol in hi.parts:
            parts.append((theta * w, pol))
        merged = []
        for w, pol in parts:
            if w <= 0.0:
                continue
            for i, (w2, pol2) in enumerate(merged):
                if pol2 is pol:
                    merged[i] = (w2 + w, pol2)
                    break
            else:
                merged.append((w, pol))
        return cls(merged)

    def mean(self, key: str) -> float:
        return float(sum(w * pol.mean(key) for w, pol in self.parts))

    def per_state(self, key: str) -> np.ndarray:
        return sum(w * pol.metrics[key] for w, pol in self.parts)

    @property
    def primary(self) -> Policy:
        return max(self.parts, key=lambda wp: wp[0])[1]

    @property
    def is_pure(self) -> bool:
        return len(self.parts) == 1


def blend_to_target(lo: Mixture, hi: Mixture, key: str, target: float) -> Mixture:
    """Mix two mixtures so that the mean of ``key`` equals ``target``."""
    vlo, vhi = lo.mean(key), hi.mean(key)
    if vhi == vlo:
        return lo
    return Mixture.blend(lo, hi, (target - vlo) / (vhi - vlo))
