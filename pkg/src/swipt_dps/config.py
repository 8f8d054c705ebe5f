"""Experiment configuration: YAML file -> validated parameter objects."""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import yaml

from .channel import (DistanceChannelParams, FadingEnsemble, MobilityParams, RicianParams,
                      distance_gain, gen_rician, mobility_trace)
from .model import NonlinearEhParams, SystemParams

DEFAULTS = {
    "seed": 2024,
    "n_states": 10000,
    "q_points": 20,
    "cases": ["csir", "csi"],
    "schemes": ["optimal"],
    "snr_db": [0.0, 10.0, 20.0],
    "workers": 1,
    "channel": {
        "kind": "rician",
        "alpha": 1.0,
        "los_power_db": -28.0,
        "scatter_var_db": -28.0,
        "d0": 15.0,
        "v_max": 0.1,
        "a_t": 0.5,
        "a_r": 0.01,
        "f_c": 2.4e9,
    },
    "eh": {"a": 6400.0, "b": 0.003, "t_block": 1.0, "p_s": None},
    "system": {"p_fixed": 2.0, "p_avg": 2.0, "p_max": 4.0, "zeta": 1.0},
    "output": {"dir": "results"},
}


class ConfigError(ValueError):
    pass


def _merge(base, over, path=""):
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if k not in base:
            raise ConfigError(f"unknown config key {path + k!r}")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{path + k!r} must be a mapping")
            out[k] = _merge(base[k], v, path + k + ".")
        else:
            out[k] = v
    return out


def _as_list(v):
    if isinstance(v, str):
        return [x.strip() for x in v.split(",") if x.strip()]
    return list(v) if isinstance(v, (list, tuple)) else [v]


@dataclass
class ExperimentConfig:
    raw: dict
    source: str | None = None
    notes: list = field(default_factory=list)

    @property
    def seed(self):
        return self.raw["seed"]

    @property
    def n_states(self) -> int:
        return int(self.raw["n_states"])

    @property
    def q_points(self) -> int:
        return int(self.raw["q_points"])

    @property
    def cases(self):
        return _as_list(self.raw["cases"])

    @property
    def schemes(self):
        return _as_list(self.raw["schemes"])

    @property
    def snr_db(self):
        return [float(x) for x in _as_list(self.raw["snr_db"])]

    @property
    def workers(self) -> int:
        return int(self.raw["workers"])

    @property
    def out_dir(self) -> str:
        return str(self.raw["output"]["dir"])

    def ensemble(self) -> FadingEnsemble:
        ch = self.raw["channel"]
        kind = ch["kind"]
        n = self.n_states
        if kind == "rician":
            p = RicianParams(float(ch["alpha"]), 10 ** (float(ch["los_power_db"]) / 10),
                             10 ** (float(ch["scatter_var_db"]) / 10))
            return gen_rician(n, p, seed=self.seed)
        dist = DistanceChannelParams(float(ch["a_t"]), float(ch["a_r"]), float(ch["f_c"]))
        if kind == "distance":
            import numpy as np
            h = np.full(n, distance_gain(float(ch["d0"]), dist))
            return FadingEnsemble(h, seed=self.seed,
                                  meta={"kind": "distance", "d0": float(ch["d0"]), "n": n})
        if kind == "mobility":
            mob = MobilityParams(float(ch["d0"]), float(ch["v_max"]),
                                 float(self.raw["eh"]["t_block"]))
            return mobility_trace(n, mob, dist, seed=self.seed)
        raise ConfigError(f"unknown channel kind {kind!r}")

    def params(self, ensemble: FadingEnsemble, snr_db: float):
        """(eh, sys) for one SNR: sigma2 = E[h] P_avg / 10^(snr/10), P_s = E[h] P_avg."""
        e, s = self.raw["eh"], self.raw["system"]
        hbar = ensemble.mean_gain
        p_avg = float(s["p_avg"])
        p_s = float(e["p_s"]) if e["p_s"] is not None else hbar * p_avg
        eh = NonlinearEhParams(float(e["a"]), float(e["b"]), p_s, float(e["t_block"]))
        sigma2 = hbar * p_avg / 10 ** (snr_db / 10)
        sys = SystemParams(sigma2=sigma2, p_fixed=float(s["p_fixed"]), p_avg=p_avg,
                           p_max=float(s["p_max"]), zeta=float(s["zeta"]))
        return eh, sys

    def validate(self):
        from .region import SCHEMES
        if self.n_states < 1 or self.q_points < 2:
            raise ConfigError("need n_states >= 1 and q_points >= 2")
        for c in self.cases:
            if c not in SCHEMES:
                raise ConfigError(f"unknown case {c!r}")
            for name in self.schemes:
                if name not in SCHEMES[c]:
                    raise ConfigError(f"scheme {name!r} is not available for case {c!r}")
        if not all(math.isfinite(x) for x in self.snr_db):
            raise ConfigError("snr_db must be finite")
        ens = self.ensemble()
        for snr in self.snr_db:
            self.params(ens, snr)   # module-level validation
        return ens


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    raw = {}
    if path is not None:
        with open(path) as fh:
            try:
                raw = yaml.safe_load(fh) or {}
            except yaml.YAMLError as exc:
                raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
    merged = _merge(DEFAULTS, raw)
    for k, v in (overrides or {}).items():
        if v is not None:
            merged[k] = v
    return ExperimentConfig(merged, source=None if path is None else str(path))
