"""Comparison schemes, all scored under the logistic harvester model.

* linear-model dynamic power splitting (receiver CSI and full CSI): the
  multipliers are tuned against the *linear* harvester, as the scheme's
  designer would, and the resulting policy is then evaluated with the
  logistic model;
* mode switching (receiver CSI): rho restricted to {0, 1};
* binary-restricted joint allocation (full CSI): the per-state choice is
  between water-filled decoding (rho = 0) and pure harvesting (rho = 1).
"""
from __future__ import annotations

import enum
import math

import numpy as np

from ._numerics import bracketed_root, monotone_search
from .csi import (DUAL_FLOOR, CsiSolution, _check_p_avg, _gap, default_lam0, default_mu0,
                  nested_search, p_eh_case_a, power_search, q_max_csi, split_ratio,
                  water_fill_id)
from .csir import CsirSolution, q_max_fixed_power
from .errors import DomainError, InfeasibleTarget, NoRootPair
from .model import LN2, NonlinearEhParams, SystemParams, q_rx, rate_rx
from .policy import Mixture, Policy, blend_to_target


class BaselineKind(str, enum.Enum):
    LINEAR_DPS_CSIR = "LinearDpsCsir"
    LINEAR_DPS_CSI = "LinearDpsCsi"
    MODE_SWITCH_CSIR = "ModeSwitchCsir"
    BINARY_RESTRICTED_CSI = "BinaryRestrictedCsi"


def _gains(ensemble):
    return np.asarray(getattr(ensemble, "gains", ensemble), dtype=float)


def _policy(h, p_id, p_eh, eh, sys, duals):
    p = p_id + p_eh
    metrics = {
        "rate": rate_rx(h * p_id, sys.sigma2),
        "q": q_rx(h * p_eh, eh),
        "q_lin": sys.zeta * h * p_eh * eh.t_block,
        "p": p,
        "p_id": p_id,
        "p_eh": p_eh,
    }
    return Policy(split_ratio(p_id, p_eh), p, metrics, duals=duals)


# -- linear-model power splitting, fixed power ----------------------------

def linear_rho_csir(h, lam_l, sys):
    """rho = 1 - x1/h above the threshold x1 = (1/(zeta lam) - sigma2)/P, else 0."""
    h = np.asarray(h, dtype=float)
    x1 = (1 / (sys.zeta * lam_l) - sys.sigma2) / sys.p_fixed
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(h > x1, 1 - x1 / np.where(h > 0, h, 1.0), 0.0)
    return np.clip(rho, 0.0, 1.0)


def linear_dps_csir(ensemble, q_target: float, *, eh: NonlinearEhParams, sys: SystemParams,
                    tol: float = 1e-12) -> CsirSolution:
    """Linear-model split tuned to E[Q_lin] = q_target, reported under the logistic model."""
    h = _gains(ensemble)
    q_lin_max = sys.zeta * sys.p_fixed * eh.t_block * float(np.mean(h))
    if q_target < 0 or q_target > q_lin_max * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} exceeds linear maximum {q_lin_max}")
    lam_cap = 1 / (sys.zeta * sys.sigma2)

    def make(lam):
        rho = linear_rho_csir(h, lam, sys)
        p_eh = rho * sys.p_fixed
        return _policy(h, sys.p_fixed - p_eh, p_eh, eh, sys, (lam,))

    if q_target == 0:
        pol = make(DUAL_FLOOR)
        mix, lam, its = Mixture.single(pol), DUAL_FLOOR, 1
    else:
        res = monotone_search(lambda l: (make(l).mean("q_lin"), make(l)), q_target,
                              0.5 * lam_cap, ftol=tol * q_lin_max, x_min=DUAL_FLOOR,
                              x_max=lam_cap)
        lam, its = res.hi.x, res.iterations
        mix = (Mixture.single(res.lo.payload) if res.exact else
               blend_to_target(Mixture.single(res.lo.payload),
                               Mixture.single(res.hi.payload), "q_lin", q_target))
    extra = {"baseline_kind": BaselineKind.LINEAR_DPS_CSIR.value,
             "achieved_q_linear": mix.mean("q_lin")}
    return CsirSolution(lam, mix, float(q_target), mix.mean("rate"), mix.mean("q"), its,
                        0.0, "linear", extra)


# -- mode switching, fixed power ---------------------------------------------

def switching_roots(lam, eh, sys, n_scan: int = 4000):
    """Roots chi1 < chi2 of lam*q(x) = r(x) in the channel gain x.

    q(x) is the harvested energy with all power P to the harvester and
    r(x) the rate with all power to the decoder. The difference is
    negative for large x, so the roots are bracketed by a log-spaced scan
    of the received power. chi1 = 0 when the difference is already
    positive at the smallest scanned power, chi2 = inf when it is still
    positive at the largest.
    """
    p = sys.p_fixed

    def d(y):
        return lam * q_rx(y, eh) - rate_rx(y, sys.sigma2)

    y = np.geomspace(1e-300, 1e6 * max(eh.b, sys.sigma2), n_scan)
    v = d(y)
    up = np.nonzero((v[:-1] <= 0) & (v[1:] > 0))[0]
    down = np.nonzero((v[:-1] > 0) & (v[1:] <= 0))[0]
    if v[0] > 0:
        up = np.concatenate(([-1], up))
    if v[-1] > 0:
        # the rate overtakes lam*q only beyond any physical gain
        down = np.concatenate((down, [-1]))
    if len(up) == 0 or len(down) == 0:
        raise NoRootPair(f"lam*q(x) = r(x) has fewer than two roots at lam={lam}")

    def refine(i):
        a, b = y[i], y[i + 1]
        for _ in range(200):
            m = 0.5 * (a + b)
            if m in (a, b):
                break
            if (d(m) > 0) == (d(a) > 0):
                a = m
            else:
                b = m
        return a if abs(d(a)) <= abs(d(b)) else b

    chi1 = 0.0 if up[0] == -1 else refine(up[0]) / p
    chi2 = math.inf if down[-1] == -1 else refine(down[-1]) / p
    return chi1, chi2


def mode_switch_rule(h, lam, eh, sys):
    h = np.asarray(h, dtype=float)
    try:
        chi1, chi2 = switching_roots(lam, eh, sys)
    except NoRootPair:
        return np.zeros_like(h), (math.nan, math.nan)
    return ((h > chi1) & (h < chi2)).astype(float), (chi1, chi2)


def mode_switch_csir(ensemble, q_target: float, *, eh: NonlinearEhParams, sys: SystemParams,
                     tol: float = 1e-12) -> CsirSolution:
    """Binary split rho in {0, 1} with lambda tuned to E[Q] = q_target."""
    h = _gains(ensemble)
    qmax = q_max_fixed_power(h, eh, sys)
    if q_target < 0 or q_target > qmax * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} exceeds {qmax}")
    roots = {}

    def make(lam):
        rho, chi = mode_switch_rule(h, lam, eh, sys)
        roots[lam] = chi
        p_eh = rho * sys.p_fixed
        return _policy(h, sys.p_fixed - p_eh, p_eh, eh, sys, (lam,))

    if q_target == 0:
        mix, lam, its = Mixture.single(make(DUAL_FLOOR)), DUAL_FLOOR, 1
    elif q_target >= qmax * (1 - 1e-12):
        p_eh = np.where(h > 0, sys.p_fixed, 0.0)
        mix = Mixture.single(_policy(h, sys.p_fixed - p_eh, p_eh, eh, sys, (math.inf,)))
        lam, its = math.inf, 0
    else:
        def ev(lam):
            pol = make(lam)
            return pol.mean("q"), pol
        lam0 = 1 / (sys.sigma2 * LN2 * eh.p_s * eh.t_block)
        res = monotone_search(ev, q_target, lam0, ftol=tol * qmax, x_min=DUAL_FLOOR,
                              x_max=1e300)
        lam, its = res.hi.x, res.iterations
        mix = (Mixture.single(res.lo.payload) if res.exact else
               blend_to_target(Mixture.single(res.lo.payload),
                               Mixture.single(res.hi.payload), "q", q_target))
    chi = roots.get(lam, (math.nan, math.nan))
    extra = {"baseline_kind": BaselineKind.MODE_SWITCH_CSIR.value,
             "chi": [None if not math.isfinite(c) else c for c in chi]}
    return CsirSolution(lam, mix, float(q_target), mix.mean("rate"), mix.mean("q"), its,
                        0.0, "modeswitch", extra)


# -- linear-model joint allocation -------------------------------------------

def linear_alloc_csi(h, lam_l, mu_l, sys):
    """Per-state (P, rho) of the linear-model scheme, multipliers in its own units.

    Both threshold regimes are implemented; the water-filling branch is
    additionally capped at P_max so the policy stays feasible.
    """
    h = np.asarray(h, dtype=float)
    x1 = (1 / (sys.zeta * lam_l) - sys.sigma2) / sys.p_max
    x2 = mu_l / (sys.zeta * lam_l)
    thr = x1 if x2 <= x1 else x2
    split = h > thr
    with np.errstate(divide="ignore", invalid="ignore"):
        hs = np.where(h > 0, h, 1.0)
        rho_o = 1 - (1 / (sys.zeta * lam_l) - sys.sigma2) / (hs * sys.p_max)
        p_wf = np.where(h > 0, np.clip(1 / mu_l - sys.sigma2 / hs, 0.0, sys.p_max), 0.0)
    p = np.where(split, sys.p_max, p_wf)
    rho = np.where(split, np.clip(rho_o, 0.0, 1.0), 0.0)
    return p, rho


def q_max_linear_csi(h, eh, sys, p_avg):
    """max E[zeta h P T] with E[P] <= p_avg and P <= P_max: fill the best gains first."""
    g = np.sort(np.asarray(h, dtype=float))[::-1]
    share = p_avg / sys.p_max * g.size
    k = int(math.floor(share))
    tot = g[:k].sum() * sys.p_max
    if k < g.size:
        tot += (share - k) * g[k] * sys.p_max
    return sys.zeta * eh.t_block * tot / g.size


def linear_dps_csi(ensemble, q_target: float, p_avg: float | None = None, *,
                   eh: NonlinearEhParams, sys: SystemParams, tol: float = 1e-10) -> CsiSolution:
    """Linear-model joint allocation tuned to E[Q_lin] = q_target, E[P] = p_avg."""
    h = _gains(ensemble)
    p_avg = sys.p_avg if p_avg is None else p_avg
    _check_p_avg(p_avg, sys)
    q_lin_max = q_max_linear_csi(h, eh, sys, p_avg)
    if q_target < 0 or q_target > q_lin_max * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} exceeds linear maximum {q_lin_max}")
    lam_cap = 1 / (sys.zeta * sys.sigma2)

    def make(lam, mu):
        p, rho = linear_alloc_csi(h, lam, mu, sys)
        return _policy(h, (1 - rho) * p, rho * p, eh, sys, (lam, mu))

    mu0 = default_mu0(h, sys) * LN2
    if q_target == 0:
        mix, mu, its = power_search(lambda m: make(DUAL_FLOOR, m), p_avg, mu0, tol * p_avg)
        lam = DUAL_FLOOR
    else:
        try:
            res = nested_search(make, "q_lin", q_target, p_avg=p_avg, lam0=0.5 * lam_cap,
                                mu0=mu0, outer_ftol=tol * q_lin_max, inner_ftol=tol * p_avg)
        except InfeasibleTarget as exc:
            raise InfeasibleTarget(f"linear scheme cannot reach q_target={q_target}") from exc
        mix, lam, mu, its = res.mixture, res.lam, res.mu, res.iterations
        if lam > lam_cap * (1 + 1e-12):
            raise InfeasibleTarget(f"linear scheme cannot reach q_target={q_target}")
    extra = {"baseline_kind": BaselineKind.LINEAR_DPS_CSI.value,
             "achieved_q_linear": mix.mean("q_lin")}
    return CsiSolution(lam, mu, mix, float(q_target), p_avg, mix.mean("rate"), mix.mean("q"),
                       mix.mean("p"), "linear", its, 0.0, extra)


# -- binary restricted joint allocation --------------------------------------

def binary_alloc_csi(h, lam, mu, eh, sys):
    """Pick the better of water-filled decoding and pure harvesting per state."""
    h = np.asarray(h, dtype=float)
    p0 = np.atleast_1d(water_fill_id(h, mu, 0.0, sys))
    p1 = np.atleast_1d(p_eh_case_a(h, lam, mu, 0.0, sys.p_max, eh, sys))
    l0 = rate_rx(h * p0, sys.sigma2) - mu * p0
    l1 = lam * q_rx(h * p1, eh) - mu * p1
    pick = l1 > l0 + 1e-12 * np.maximum(1.0, np.abs(l0))
    return np.where(pick, 0.0, p0), np.where(pick, p1, 0.0)


def binary_restricted_csi(ensemble, q_target: float, p_avg: float | None = None, *,
                          eh: NonlinearEhParams, sys: SystemParams, tol: float = 1e-10,
                          q_max: float | None = None) -> CsiSolution:
    h = _gains(ensemble)
    p_avg = sys.p_avg if p_avg is None else p_avg
    _check_p_avg(p_avg, sys)
    q_max = q_max_csi(h, eh, sys, p_avg) if q_max is None else q_max
    if q_target < 0 or q_target > q_max * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} exceeds {q_max}")

    def make(lam, mu):
        p_id, p_eh = binary_alloc_csi(h, lam, mu, eh, sys)
        return _policy(h, p_id, p_eh, eh, sys, (lam, mu))

    mu0 = default_mu0(h, sys)
    if q_target == 0:
        mix, mu, its = power_search(lambda m: make(DUAL_FLOOR, m), p_avg, mu0, tol * p_avg)
        lam = DUAL_FLOOR
    else:
        res = nested_search(make, "q", q_target, p_avg=p_avg, lam0=default_lam0(h, mu0, eh),
                            mu0=mu0, outer_ftol=tol * q_max, inner_ftol=tol * p_avg)
        mix, lam, mu, its = res.mixture, res.lam, res.mu, res.iterations
    extra = {"baseline_kind": BaselineKind.BINARY_RESTRICTED_CSI.value}
    return CsiSolution(lam, mu, mix, float(q_target), p_avg, mix.mean("rate"), mix.mean("q"),
                       mix.mean("p"), "binary", its, _gap(mix, q_target, p_avg), extra)
