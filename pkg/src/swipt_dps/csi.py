"""Joint power allocation and power splitting with transmitter CSI.

Per state the transmit power is split as P_ID (to the decoder) and P_EH
(to the harvester). The problem separates into a water-filling part and
two one-dimensional EH subproblems:

* case A: maximize lam*Q(x, 1) - mu*x on [p_low, p_up] (decoder power fixed
  by water-filling),
* case B: maximize R(P_max - x, 0) + lam*Q(x, 1) on [p_low, p_up] (peak
  power active).

Two multipliers price energy (lam) and average power (mu).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._numerics import bracketed_root, monotone_search
from ._peak import interior_peak
from .errors import DomainError, InfeasibleTarget
from .model import (LN2, NonlinearEhParams, SystemParams, big_g_fn, big_gamma_fn,
                    big_z_fn, big_z_prime_fn, dq_rx, f_fn, logistic_slope, q_rx,
                    rate_rx)
from .policy import Mixture, Policy, blend_to_target

DUAL_FLOOR = 1e-12
TIE_TOL = 1e-12
MODES = ("optimal", "suboptimal", "longterm_only")


def _better(a, b):
    return a > b + TIE_TOL * np.maximum(1.0, np.abs(b))


def _gains(ensemble):
    return np.asarray(getattr(ensemble, "gains", ensemble), dtype=float)


def _first_true(rows):
    rows = np.asarray(rows)
    if not np.all(rows.any(axis=0)):
        raise DomainError("case table is not exhaustive for some state")
    return np.argmax(rows, axis=0) + 1


def _b(*arrays):
    return np.broadcast_arrays(*[np.asarray(a, dtype=float) for a in arrays])


def closed_form_peak(h, ratio, eh):
    """x with Psi(h x) = 1/2 + sqrt(1/4 - ratio/4), the right-hand root.

    ``ratio`` is 4*c/lam for the relevant constant c; the log argument is
    written as ratio/(1 + r)^2 so that it stays accurate for small ratios.
    """
    if np.any(ratio > 1):
        raise DomainError("no stationary point: 4c/lambda exceeds 1")
    r = np.sqrt(1 - ratio)
    with np.errstate(divide="ignore"):
        return (eh.b - np.log(ratio / (1 + r) ** 2) / eh.a) / h


# -- water-filling --------------------------------------------------------

def wf_threshold(mu, sys):
    """Gain below which the decoder gets no power (rates in bits)."""
    return mu * sys.sigma2 * LN2


def water_fill_id(h, mu, p_eh, sys: SystemParams):
    """Decoder power min{1/(mu ln2) - sigma2/h, P_max - p_eh}, or 0 below threshold."""
    h, mu, p_eh = _b(h, mu, p_eh)
    if np.any(mu <= 0):
        raise DomainError("mu must be positive")
    if np.any(p_eh < 0) or np.any(p_eh > sys.p_max):
        raise DomainError("p_eh must lie in [0, p_max]")
    on = h > wf_threshold(mu, sys)
    with np.errstate(divide="ignore"):
        level = 1 / (mu * LN2) - sys.sigma2 / np.where(on, h, 1.0)
    out = np.where(on, np.maximum(np.minimum(level, sys.p_max - p_eh), 0.0), 0.0)
    return float(out) if out.ndim == 0 else out


def p_threshold(h, mu, sys):
    """P_th = max{P_max - 1/(mu ln2) + sigma2/h, 0}."""
    return np.maximum(sys.p_max - 1 / (mu * LN2) + sys.sigma2 / h, 0.0)


# -- case A -----------------------------------------------------------------

def case_rows_a(h, lam, mu, p_low, p_up, eh, sys):
    mz = mu * big_z_fn(h, eh)
    fl = lam * f_fn(h, p_low, eh)
    fu = lam * f_fn(h, p_up, eh)
    q = lam / 4
    return np.stack(np.broadcast_arrays(
        mz >= q,
        (np.maximum(fu, fl) < mz) & (mz < q),
        (fl <= mz) & (mz <= fu),
        (fu <= mz) & (mz <= fl),
        mz <= np.minimum(fu, fl),
    ))


def objective_a(h, x, lam, mu, eh):
    return lam * q_rx(h * x, eh) - mu * x


def p_eh_case_a(h, lam, mu, p_low, p_up, eh: NonlinearEhParams, sys: SystemParams,
                return_case: bool = False):
    """Maximize lam*Q(x, 1) - mu*x over [p_low, p_up] via the A.1-A.5 table."""
    h, lam, mu, p_low, p_up = _b(h, lam, mu, p_low, p_up)
    if np.any(lam <= 0) or np.any(mu <= 0):
        raise DomainError("lambda and mu must be positive")
    if np.any(p_low < 0) or np.any(p_low > p_up):
        raise DomainError("need 0 <= p_low <= p_up")
    shape = h.shape
    h, lam, mu, p_low, p_up = (np.atleast_1d(a).ravel() for a in (h, lam, mu, p_low, p_up))
    out = p_low.copy()
    case = np.ones(h.shape, dtype=int)
    pos = h > 0
    if np.any(pos):
        hp, lp, mp, lo, up = h[pos], lam[pos], mu[pos], p_low[pos], p_up[pos]
        c = _first_true(case_rows_a(hp, lp, mp, lo, up, eh, sys))
        x = lo.copy()
        need = (c == 2) | (c == 4)
        po = np.full_like(hp, np.nan)
        if np.any(need):
            po[need] = closed_form_peak(hp[need], 4 * mp[need] * big_z_fn(hp[need], eh)
                                        / lp[need], eh)
        ob_lo = objective_a(hp, lo, lp, mp, eh)
        ob_up = objective_a(hp, up, lp, mp, eh)
        inside = need & (po >= lo) & (po <= up)
        po_c = np.where(inside, po, lo)
        ob_po = objective_a(hp, po_c, lp, mp, eh)
        x = np.where((c == 2) & inside & _better(ob_po, ob_lo), po_c, x)
        x = np.where((c == 3) & _better(ob_up, ob_lo), up, x)
        x = np.where(c == 4, np.clip(np.where(np.isnan(po), lo, po), lo, up), x)
        x = np.where(c == 5, up, x)
        out[pos] = x
        case[pos] = c
    out = out.reshape(shape)
    case = case.reshape(shape)
    if return_case:
        return out, case
    return float(out) if out.ndim == 0 else out


# -- case B -----------------------------------------------------------------

def case_rows_b(h, lam, p_low, p_up, eh, sys):
    fl = lam * f_fn(h, p_low, eh)
    fu = lam * f_fn(h, p_up, eh)
    gl = big_g_fn(h, p_low, eh, sys)
    gu = big_g_fn(h, p_up, eh, sys)
    gam = big_gamma_fn(h, eh, sys)
    q = lam / 4
    return np.stack(np.broadcast_arrays(
        gam >= q,
        (fl <= gl) & (fu < gu) & (gam < q),
        (fl <= gl) & (fu >= gu) & (gam < q),
        (fl > gl) & (fu < gu) & (gam < q),
        (fl > gl) & (fu >= gu) & (gam < q),
    ))


def case_rows_b_sub(h, lam, p_low, p_up, eh, sys):
    zp = big_z_prime_fn(h, eh, sys)
    fl = lam * f_fn(h, p_low, eh)
    fu = lam * f_fn(h, p_up, eh)
    q = lam / 4
    return np.stack(np.broadcast_arrays(
        zp >= q,
        (np.maximum(fu, fl) < zp) & (zp < q),
        (fl <= zp) & (zp <= fu),
        (fu <= zp) & (zp <= fl),
        zp <= np.minimum(fu, fl),
    ))


def objective_b(h, x, lam, eh, sys):
    """R(P_max - x, 0) + lam*Q(x, 1)."""
    return rate_rx(h * (sys.p_max - x), sys.sigma2) + lam * q_rx(h * x, eh)


def objective_b_sub(h, x, lam, eh, sys):
    """(1 - x/P_max) R(P_max, 0) + lam*Q(x, 1), a lower bound of objective_b."""
    return (1 - x / sys.p_max) * rate_rx(h * sys.p_max, sys.sigma2) + lam * q_rx(h * x, eh)


def stationarity_a(h, x, lam, mu, eh):
    """d/dx of the case-A objective."""
    return lam * h * dq_rx(h * x, eh) - mu


def stationarity_b(h, x, lam, eh, sys):
    """d/dx of the case-B objective."""
    return lam * h * dq_rx(h * x, eh) - h / (LN2 * (h * (sys.p_max - x) + sys.sigma2))


def _phi_b(eh, sys):
    kap = eh.kappa / LN2

    def fun(x, h, lam):
        return lam * logistic_slope(h * x, eh) - kap / (h * (sys.p_max - x) + sys.sigma2)

    def dfun(x, h, lam):
        u = eh.a * (h * x - eh.b)
        return (lam * eh.a * h * logistic_slope(h * x, eh) * np.tanh(-u / 2)
                - kap * h / (h * (sys.p_max - x) + sys.sigma2) ** 2)

    return fun, dfun


def case_b_roots_scan(h, lam, p_low, p_up, eh, sys, n_scan: int = 64):
    """Locate every local maximum of the case-B objective on [p_low, p_up].

    The stationarity residual is sampled on ``n_scan`` points; each
    positive-to-negative sign change is refined by bracketed Newton.
    Returns (best_root, multiplicity) where best_root is NaN if there is no
    interior local maximum.
    """
    h, lam, p_low, p_up = (np.atleast_1d(a).astype(float) for a in _b(h, lam, p_low, p_up))
    t = np.linspace(0.0, 1.0, n_scan)
    xs = p_low[:, None] + (p_up - p_low)[:, None] * t[None, :]
    fun, dfun = _phi_b(eh, sys)
    vals = fun(xs, h[:, None], lam[:, None])
    change = (vals[:, :-1] > 0) & (vals[:, 1:] <= 0)
    mult = change.sum(axis=1)
    best = np.full(h.shape, np.nan)
    best_val = np.full(h.shape, -np.inf)
    rows, cols = np.nonzero(change)
    if rows.size:
        roots = bracketed_root(fun, dfun, xs[rows, cols], xs[rows, cols + 1],
                               args=(h[rows], lam[rows]))
        obj = objective_b(h[rows], roots, lam[rows], eh, sys)
        for r, x, v in zip(rows, roots, obj):
            if v > best_val[r]:
                best[r], best_val[r] = x, v
    return best, mult


def case_b_root(h, lam, p_low, p_up, eh, sys, ftol=1e-10):
    """Interior local maximum of the case-B objective, NaN if none exists.

    The residual is monotone on (max(b/h, p_low), p_up), which gives a
    valid bracket in the usual situation; states whose bracket does not
    change sign are handed to the grid scan.
    """
    h, lam, p_low, p_up = (np.atleast_1d(a).astype(float) for a in _b(h, lam, p_low, p_up))
    out = np.full(h.shape, np.nan)
    lo = np.maximum(eh.b / h, p_low)
    fun, dfun = _phi_b(eh, sys)
    ok = (lo < p_up) & (fun(lo, h, lam) > 0) & (fun(p_up, h, lam) < 0)
    if np.any(ok):
        out[ok] = bracketed_root(fun, dfun, lo[ok], p_up[ok], ftol=ftol, args=(h[ok], lam[ok]))
    rest = ~ok
    if np.any(rest):
        out[rest], _ = case_b_roots_scan(h[rest], lam[rest], p_low[rest], p_up[rest], eh, sys)
    return out


def p_eh_case_b(h, lam, p_low, p_up, eh: NonlinearEhParams, sys: SystemParams,
                variant: str = "optimal", return_case: bool = False, rule: str = "exact"):
    """Harvester power when the peak constraint binds (P_ID = P_max - x).

    For the optimal variant ``rule="exact"`` (default) compares p_low, p_up
    and the unique interior local maximum directly; ``rule="table"`` applies
    the B.1-B.5 table literally, which misses peaks lying left of b/h.
    The suboptimal variant always uses its table, which is exact for the
    lower-bound objective.
    """
    h, lam, p_low, p_up = _b(h, lam, p_low, p_up)
    if np.any(lam <= 0):
        raise DomainError("lambda must be positive")
    if np.any(p_low < 0) or np.any(p_low > p_up) or np.any(p_up > sys.p_max * (1 + 1e-12)):
        raise DomainError("need 0 <= p_low <= p_up <= p_max")
    shape = h.shape
    h, lam, p_low, p_up = (np.atleast_1d(a).ravel() for a in (h, lam, p_low, p_up))
    out = p_low.copy()
    case = np.ones(h.shape, dtype=int)
    pos = h > 0
    if np.any(pos):
        hp, lp, lo, up = h[pos], lam[pos], p_low[pos], p_up[pos]
        if variant == "optimal":
            c = _first_true(case_rows_b(hp, lp, lo, up, eh, sys))
            obj = objective_b
        elif variant == "suboptimal":
            c = _first_true(case_rows_b_sub(hp, lp, lo, up, eh, sys))
            obj = objective_b_sub
        else:
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "optimal" and rule == "exact":
            peak = interior_peak(hp * lo, hp * up, lp, eh.kappa / LN2,
                                 hp * sys.p_max + sys.sigma2, eh) / hp
            ob_lo = objective_b(hp, lo, lp, eh, sys)
            ob_up = objective_b(hp, up, lp, eh, sys)
            x = np.where(_better(ob_up, ob_lo), up, lo)
            best = np.maximum(ob_lo, ob_up)
            has = np.isfinite(peak)
            pk = np.where(has, peak, lo)
            ob_pk = objective_b(hp, pk, lp, eh, sys)
            x = np.where(has & _better(ob_pk, best), pk, x)
            out[pos] = x
            case[pos] = c
            out = out.reshape(shape)
            case = case.reshape(shape)
            if return_case:
                return out, case
            return float(out) if out.ndim == 0 else out
        need = (c == 2) | (c == 4)
        xo = np.full_like(hp, np.nan)
        if np.any(need):
            if variant == "optimal":
                xo[need] = case_b_root(hp[need], lp[need], lo[need], up[need], eh, sys)
            else:
                xo[need] = closed_form_peak(
                    hp[need], 4 * big_z_prime_fn(hp[need], eh, sys) / lp[need], eh)
        inside = need & (xo >= lo) & (xo <= up)
        xo_c = np.where(inside, xo, lo)
        ob_lo = obj(hp, lo, lp, eh, sys)
        ob_up = obj(hp, up, lp, eh, sys)
        ob_xo = obj(hp, xo_c, lp, eh, sys)
        ends = np.where(_better(ob_up, ob_lo), up, lo)
        x = lo.copy()
        x = np.where((c == 2) & inside & _better(ob_xo, ob_lo), xo_c, x)
        x = np.where(c == 3, ends, x)
        # case 4 always has an interior peak; keep endpoints as a guard
        x = np.where(c == 4, np.where(inside, xo_c, ends), x)
        x = np.where(c == 5, up, x)
        out[pos] = x
        case[pos] = c
    out = out.reshape(shape)
    case = case.reshape(shape)
    if return_case:
        return out, case
    return float(out) if out.ndim == 0 else out


# -- per-state joint solution -------------------------------------------------

class PowerSplitAlloc(NamedTuple):
    p_id: np.ndarray
    p_eh: np.ndarray
    p_total: np.ndarray
    rho: np.ndarray
    branch: np.ndarray  # "A" or "B" (or "L" for the long-term-only rule)
    case: np.ndarray


def full_lagrangian(h, p_id, p_eh, lam, mu, eh, sys):
    return (rate_rx(h * p_id, sys.sigma2) - mu * p_id
            + lam * q_rx(h * p_eh, eh) - mu * p_eh)


def split_ratio(p_id, p_eh):
    tot = p_id + p_eh
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, p_eh / np.where(tot > 0, tot, 1.0), 0.0)


def solve_state_csi(h, lam, mu, mode: str = "optimal", *, eh: NonlinearEhParams,
                    sys: SystemParams) -> PowerSplitAlloc:
    """Per-state maximizer of R(P_ID) + lam*Q(P_EH) - mu*(P_ID + P_EH)."""
    if lam <= 0 or mu <= 0:
        raise DomainError("duals must be positive")
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if np.any(h < 0):
        raise DomainError("h must be nonnegative")
    if mode == "longterm_only":
        return _solve_longterm(h, lam, mu, eh, sys)
    if mode not in ("optimal", "suboptimal"):
        raise ValueError(f"unknown mode {mode!r}")
    p_id = np.zeros_like(h)
    p_eh = np.zeros_like(h)
    branch = np.full(h.shape, "A")
    case = np.ones(h.shape, dtype=int)

    silent = h <= wf_threshold(mu, sys)
    if np.any(silent):
        p_eh[silent], case[silent] = p_eh_case_a(h[silent], lam, mu, 0.0, sys.p_max, eh, sys,
                                                 return_case=True)
    act = ~silent
    if np.any(act):
        ha = h[act]
        pth = p_threshold(ha, mu, sys)
        xa, ca = p_eh_case_a(ha, lam, mu, 0.0, pth, eh, sys, return_case=True)
        ida = water_fill_id(ha, mu, xa, sys)
        xb, cb = p_eh_case_b(ha, lam, pth, sys.p_max, eh, sys, variant=mode, return_case=True)
        idb = sys.p_max - xb
        la = full_lagrangian(ha, ida, xa, lam, mu, eh, sys)
        lb = full_lagrangian(ha, idb, xb, lam, mu, eh, sys)
        use_b = _better(lb, la)
        p_id[act] = np.where(use_b, idb, ida)
        p_eh[act] = np.where(use_b, xb, xa)
        branch[act] = np.where(use_b, "B", "A")
        case[act] = np.where(use_b, cb, ca)
    return PowerSplitAlloc(p_id, p_eh, p_id + p_eh, split_ratio(p_id, p_eh), branch, case)


def longterm_thresholds(lam, mu, eh):
    """Gains x1 < x2 splitting the long-term-only EH rule into three regimes."""
    x1 = 4 * mu * eh.kappa / lam
    x2 = mu / (lam * eh.omega * eh.p_s * eh.t_block * eh.a)
    return x1, x2


def _solve_longterm(h, lam, mu, eh, sys):
    on = h > wf_threshold(mu, sys)
    with np.errstate(divide="ignore"):
        p_id = np.where(on, np.maximum(1 / (mu * LN2) - sys.sigma2 / np.where(on, h, 1.0), 0.0),
                        0.0)
    x1, x2 = longterm_thresholds(lam, mu, eh)
    case = np.where(h <= x1, 1, np.where(h < x2, 2, 3))
    p_eh = np.zeros_like(h)
    need = case > 1
    if np.any(need):
        hn = h[need]
        po = closed_form_peak(hn, 4 * mu * big_z_fn(hn, eh) / lam, eh)
        gain = objective_a(hn, po, lam, mu, eh)
        p_eh[need] = np.where((case[need] == 3) | (gain > TIE_TOL * np.maximum(1, 0)), po, 0.0)
    branch = np.full(h.shape, "L")
    return PowerSplitAlloc(p_id, p_eh, p_id + p_eh, split_ratio(p_id, p_eh), branch, case)


# -- dual search --------------------------------------------------------------

def csi_policy(h, alloc: PowerSplitAlloc, eh, sys, duals=()) -> Policy:
    metrics = {
        "rate": rate_rx(h * alloc.p_id, sys.sigma2),
        "q": q_rx(h * alloc.p_eh, eh),
        "p": alloc.p_total,
        "p_id": alloc.p_id,
        "p_eh": alloc.p_eh,
    }
    return Policy(alloc.rho, alloc.p_total, metrics, duals=duals)


@dataclass
class CsiSolution:
    lam: float
    mu: float
    mixture: Mixture
    q_target: float
    p_avg: float
    achieved_rate: float
    achieved_q: float
    achieved_p_avg: float
    mode: str
    iterations: int = 0
    gap_bound: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def p(self):
        return self.mixture.primary.p

    @property
    def rho(self):
        return self.mixture.primary.rho

    def to_json(self, with_policy: bool = True) -> dict:
        out = {
            "lambda": _jf(self.lam), "mu": _jf(self.mu),
            "achieved_rate": self.achieved_rate, "achieved_q": self.achieved_q,
            "achieved_p_avg": self.achieved_p_avg, "q_target": self.q_target,
            "p_avg": self.p_avg, "mode": self.mode, "iterations": self.iterations,
            "gap_bound": self.gap_bound,
        }
        if with_policy:
            out["p"] = self.p.tolist()
            out["rho"] = self.rho.tolist()
            out["time_sharing"] = [
                {"weight": w, "lambda": _jf(pol.duals[0]), "mu": _jf(pol.duals[1]),
                 "p": pol.p.tolist(), "rho": pol.rho.tolist()}
                for w, pol in self.mixture.parts]
        out.update(self.extra)
        return out


def _jf(v):
    if v is None or not math.isfinite(v):
        return None
    return float(v)


@dataclass
class NestedResult:
    mixture: Mixture
    lam: float
    mu: float
    iterations: int


def nested_search(make_policy, outer_key: str, outer_target: float, *, p_avg: float,
                  lam0: float, mu0: float, outer_ftol: float, inner_ftol: float,
                  outer_increasing: bool = True, maxiter: int = 500) -> NestedResult:
    """Two-level multiplier search.

    For each outer multiplier the inner multiplier is tuned (with
    time-sharing) so the mean power equals ``p_avg``; the outer multiplier
    is then tuned so the mean of ``outer_key`` hits ``outer_target``. Each
    level is a monotone search: power falls as its price rises, and along
    the inner solution path the outer metric is monotone because it is the
    derivative of a convex partial dual function.
    """
    count = [0]
    mu_hint = [mu0]

    def inner(lam):
        def ev(mu):
            count[0] += 1
            pol = make_policy(lam, mu)
            return pol.mean("p"), pol

        res = monotone_search(ev, p_avg, mu_hint[0], ftol=inner_ftol, increasing=False,
                              x_min=DUAL_FLOOR, x_max=1e300, maxiter=maxiter)
        mu_hint[0] = res.lo.x
        if res.exact:
            mix = Mixture.single(res.lo.payload)
        else:
            mix = blend_to_target(Mixture.single(res.lo.payload),
                                  Mixture.single(res.hi.payload), "p", p_avg)
        return mix, res.hi.x

    def outer(lam):
        mix, mu = inner(lam)
        return mix.mean(outer_key), (mix, mu)

    res = monotone_search(outer, outer_target, lam0, ftol=outer_ftol,
                          increasing=outer_increasing, x_min=DUAL_FLOOR, x_max=1e300,
                          maxiter=maxiter)
    mix_lo, mu_lo = res.lo.payload
    if res.exact:
        return NestedResult(mix_lo, res.lo.x, mu_lo, count[0])
    mix_hi, mu_hi = res.hi.payload
    mix = blend_to_target(mix_lo, mix_hi, outer_key, outer_target)
    return NestedResult(mix, res.hi.x, mu_hi, count[0])


def power_search(make_policy, p_avg: float, mu0: float, ftol: float,
                 maxiter: int = 500) -> tuple[Mixture, float, int]:
    """Tune mu alone so mean power equals p_avg (time-sharing at jumps)."""
    count = [0]

    def ev(mu):
        count[0] += 1
        pol = make_policy(mu)
        return pol.mean("p"), pol

    res = monotone_search(ev, p_avg, mu0, ftol=ftol, increasing=False,
                          x_min=DUAL_FLOOR, x_max=1e300, maxiter=maxiter)
    if res.exact:
        return Mixture.single(res.lo.payload), res.lo.x, count[0]
    mix = blend_to_target(Mixture.single(res.lo.payload), Mixture.single(res.hi.payload),
                          "p", p_avg)
    return mix, res.hi.x, count[0]


def default_mu0(h, sys):
    """Water level guess for an equal-power allocation."""
    hbar = max(float(np.mean(h)), 1e-300)
    return 1 / (LN2 * (sys.p_avg + sys.sigma2 / hbar))


def default_lam0(h, mu, eh):
    hbar = max(float(np.mean(h)), 1e-300)
    return 4 * mu * eh.kappa / hbar


def _check_p_avg(p_avg, sys):
    if not 0 < p_avg < sys.p_max:
        raise DomainError("p_avg must lie in (0, p_max)")


def q_max_csi_solution(ensemble, eh, sys, p_avg=None, tol=1e-10):
    """Maximal mean harvested energy under the power constraints (rho = 1)."""
    h = _gains(ensemble)
    p_avg = sys.p_avg if p_avg is None else p_avg
    _check_p_avg(p_avg, sys)

    def make(mu):
        x = p_eh_case_a(h, 1.0, mu, 0.0, sys.p_max, eh, sys)
        x = np.atleast_1d(x)
        alloc = PowerSplitAlloc(np.zeros_like(x), x, x, (x > 0).astype(float),
                                np.full(h.shape, "A"), np.ones(h.shape, dtype=int))
        return csi_policy(h, alloc, eh, sys, duals=(1.0, mu))

    mu0 = eh.p_s * eh.t_block / (4 * sys.p_max)
    mix, mu, its = power_search(make, p_avg, mu0, tol * p_avg)
    return mix, mu, its


def q_max_csi(ensemble, eh, sys, p_avg=None) -> float:
    return q_max_csi_solution(ensemble, eh, sys, p_avg)[0].mean("q")


def _gap(mix, q_target, p_avg):
    bounds = []
    for _, pol in mix.parts:
        lam, mu = pol.duals[0], pol.duals[1]
        bounds.append(pol.mean("rate") + lam * (pol.mean("q") - q_target)
                      + mu * (p_avg - pol.mean("p")))
    return max(min(bounds) - mix.mean("rate"), 0.0)


def find_duals(ensemble, q_target: float, p_avg: float | None = None,
               mode: str = "optimal", *, eh: NonlinearEhParams, sys: SystemParams,
               tol: float = 1e-10, q_max: float | None = None,
               warm: tuple | None = None) -> CsiSolution:
    """Tune (lam, mu) so E[Q] = q_target and E[P] = p_avg."""
    h = _gains(ensemble)
    p_avg = sys.p_avg if p_avg is None else p_avg
    _check_p_avg(p_avg, sys)
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if q_max is None:
        q_max = q_max_csi(h, eh, sys, p_avg) if mode != "longterm_only" else math.inf
    if q_target < 0 or q_target > q_max * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} exceeds q_max={q_max}")

    def make(lam, mu):
        alloc = solve_state_csi(h, lam, mu, mode, eh=eh, sys=sys)
        return csi_policy(h, alloc, eh, sys, duals=(lam, mu))

    mu0 = warm[1] if warm else default_mu0(h, sys)
    qscale = q_max if math.isfinite(q_max) else eh.p_s * eh.t_block
    if q_target == 0:
        mix, mu, its = power_search(lambda m: make(DUAL_FLOOR, m), p_avg, mu0, tol * p_avg)
        lam = DUAL_FLOOR
    else:
        lam0 = warm[0] if warm else default_lam0(h, mu0, eh)
        res = nested_search(make, "q", q_target, p_avg=p_avg, lam0=lam0, mu0=mu0,
                            outer_ftol=tol * qscale, inner_ftol=tol * p_avg)
        mix, lam, mu, its = res.mixture, res.lam, res.mu, res.iterations
    return CsiSolution(lam, mu, mix, float(q_target), p_avg, mix.mean("rate"), mix.mean("q"),
                       mix.mean("p"), mode, its, _gap(mix, q_target, p_avg))


def water_filling_rate(ensemble, sys, p_avg=None, tol=1e-10):
    """Rate of the ergodic water-filling allocation with peak power P_max."""
    sol = find_duals(ensemble, 0.0, p_avg, "optimal", eh=NonlinearEhParams(1.0, 1.0, 1.0),
                     sys=sys, tol=tol, q_max=math.inf)
    return sol.achieved_rate


def solve_energy_max(ensemble, rate_target: float, p_avg: float | None = None,
                     mode: str = "optimal", *, eh: NonlinearEhParams, sys: SystemParams,
                     tol: float = 1e-10) -> CsiSolution:
    """Maximize E[Q] subject to E[R] = rate_target and E[P] = p_avg.

    The per-state problem is the rate-max one with multipliers 1/lt and
    mu_t/lt, where lt prices rate and mu_t prices power.
    """
    h = _gains(ensemble)
    p_avg = sys.p_avg if p_avg is None else p_avg
    _check_p_avg(p_avg, sys)
    if rate_target <= 0:
        mix, mu, its = q_max_csi_solution(h, eh, sys, p_avg, tol)
        return CsiSolution(math.inf, mu, mix, mix.mean("q"), p_avg, mix.mean("rate"),
                           mix.mean("q"), mix.mean("p"), "energy_max", its,
                           extra={"rate_target": rate_target})
    wf = find_duals(h, 0.0, p_avg, mode, eh=eh, sys=sys, tol=tol, q_max=math.inf)
    r_max = wf.achieved_rate
    if rate_target > r_max * (1 + 1e-12):
        raise InfeasibleTarget(f"rate_target={rate_target} exceeds {r_max}")
    if rate_target >= r_max * (1 - 1e-12):
        wf.mode = "energy_max"
        wf.extra["rate_target"] = rate_target
        return wf

    def make(lt, mt):
        alloc = solve_state_csi(h, 1 / lt, mt / lt, mode, eh=eh, sys=sys)
        return csi_policy(h, alloc, eh, sys, duals=(1 / lt, mt / lt))

    mu0 = default_mu0(h, sys)
    lt0 = 1 / default_lam0(h, mu0, eh)
    res = nested_search(make, "rate", rate_target, p_avg=p_avg, lam0=lt0, mu0=mu0 * lt0,
                        outer_ftol=tol * r_max, inner_ftol=tol * p_avg)
    mix = res.mixture
    return CsiSolution(1 / res.lam, res.mu / res.lam, mix, mix.mean("q"), p_avg,
                       mix.mean("rate"), mix.mean("q"), mix.mean("p"), "energy_max",
                       res.iterations, extra={"rate_target": rate_target})
