"""Receiver-CSI solvers: optimal and low-complexity power splitting.

The transmitter uses a fixed power P in every block; only the split ratio
rho adapts to the channel. Per-state decisions follow a five-row case
table, and a scalar multiplier lambda prices harvested energy.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._numerics import bracketed_root, monotone_search
from ._peak import interior_peak
from .errors import DomainError, InfeasibleTarget
from .model import (LN2, NonlinearEhParams, SystemParams, f_fn, g_fn, gamma_fn,
                    logistic_slope, psi_rx, q_rx, rate_rx, z_fn)
from .policy import Mixture, Policy, blend_to_target

CASE_TAGS = ("Case1", "Case2", "Case3", "Case4", "Case5")
CASE_TAGS_SUB = ("Case1'", "Case2'", "Case3'", "Case4'", "Case5'")
LAMBDA_FLOOR = 1e-12
TIE_TOL = 1e-12


def _gains(ensemble):
    g = getattr(ensemble, "gains", ensemble)
    return np.asarray(g, dtype=float)


def _better(a, b):
    """a beats b by more than the tie tolerance."""
    return a > b + TIE_TOL * np.maximum(1.0, np.abs(b))


def _first_true(rows):
    rows = np.asarray(rows)
    label = np.argmax(rows, axis=0) + 1
    if not np.all(rows.any(axis=0)):
        raise DomainError("case table is not exhaustive for some state")
    return label


# -- optimal per-state solution ---------------------------------------------

def case_rows_optimal(h, lam, eh: NonlinearEhParams, sys: SystemParams):
    """The five boolean rows of the optimal case table, stacked on axis 0."""
    h = np.asarray(h, dtype=float)
    f0 = lam * f_fn(0.0, sys.p_fixed, eh)
    fh = lam * f_fn(h, sys.p_fixed, eh)
    gh, g0, gam = g_fn(h, eh, sys), g_fn(0.0, eh, sys), gamma_fn(h, eh, sys)
    quarter = lam / 4
    return np.stack(np.broadcast_arrays(
        gam >= quarter,
        (f0 <= gh) & (fh < g0) & (gam < quarter),
        (f0 <= gh) & (fh >= g0),
        (f0 > gh) & (fh < g0) & (gam < quarter),
        (f0 > gh) & (fh >= g0),
    ))


def classify_optimal(h, lam, eh, sys):
    """Case index 1..5 per state; boundary ties go to the first matching row."""
    if np.any(np.asarray(lam) <= 0):
        raise DomainError("lambda must be positive")
    if np.any(np.asarray(h) < 0):
        raise DomainError("h must be nonnegative")
    return _first_true(case_rows_optimal(h, lam, eh, sys))


def _root_residual(eh, sys):
    kap = eh.kappa / LN2

    def fun(x, s, lam):
        return lam * logistic_slope(x * s, eh) - kap / ((1.0 - x) * s + sys.sigma2)

    def dfun(x, s, lam):
        u = eh.a * (x * s - eh.b)
        sl = logistic_slope(x * s, eh)
        return (lam * eh.a * s * sl * np.tanh(-u / 2)
                - kap * s / ((1.0 - x) * s + sys.sigma2) ** 2)

    return fun, dfun


def rho_opt_root(h, lam, eh, sys, ftol=1e-10):
    """Interior stationary point on (b/(hP), 1) where the split is a local max.

    On that interval the energy term's slope falls while the rate penalty
    rises, so the residual is strictly decreasing and the root is unique.
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    s = h * sys.p_fixed
    if np.any(s <= eh.b):
        raise DomainError("the bracket (b/(hP), 1) is empty when hP <= b")
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), s.shape)
    fun, dfun = _root_residual(eh, sys)
    x = bracketed_root(fun, dfun, eh.b / s, np.ones_like(s), ftol=ftol, args=(s, lam_arr))
    return x


def stationary_peak(h, lam, eh, sys):
    """Unique interior local maximizer of R(P, rho) + lam*Q(P, rho) on (0, 1).

    NaN where the Lagrangian has no interior local maximum. Unlike
    ``rho_opt_root`` this also finds peaks left of b/(hP).
    """
    h = np.atleast_1d(np.asarray(h, dtype=float))
    s = h * sys.p_fixed
    y = interior_peak(0.0, s, lam, eh.kappa / LN2, s + sys.sigma2, eh)
    with np.errstate(invalid="ignore", divide="ignore"):
        return y / s


def solve_state_optimal(h, lam, eh, sys, rule: str = "exact"):
    """Optimal split ratio per state for a given lambda.

    ``rule="table"`` applies the five-row case table literally.
    ``rule="exact"`` (default) compares rho = 0, rho = 1 and the unique
    interior local maximum by direct Lagrangian evaluation; it agrees with
    the table except in states whose peak lies left of b/(hP), where the
    table wrongly returns an endpoint.
    """
    scalar = np.ndim(h) == 0
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if rule == "table":
        rho = _solve_table(h, lam, eh, sys)
        return float(rho[0]) if scalar else rho
    if rule != "exact":
        raise ValueError(f"unknown rule {rule!r}")
    if np.any(np.asarray(lam) <= 0):
        raise DomainError("lambda must be positive")
    if np.any(h < 0):
        raise DomainError("h must be nonnegative")
    s = h * sys.p_fixed
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), s.shape)
    l0 = rate_rx(s, sys.sigma2)
    l1 = lam_arr * q_rx(s, eh)
    rho = np.where(_better(l1, l0), 1.0, 0.0)
    best = np.maximum(l0, l1)
    ro = stationary_peak(h, lam_arr, eh, sys)
    has = np.isfinite(ro)
    if np.any(has):
        r = ro[has]
        lro = rate_rx((1 - r) * s[has], sys.sigma2) + lam_arr[has] * q_rx(r * s[has], eh)
        take = _better(lro, best[has])
        rho[has] = np.where(take, r, rho[has])
    rho[h == 0] = 0.0
    return float(rho[0]) if scalar else rho


def _solve_table(h, lam, eh, sys):
    case = classify_optimal(h, lam, eh, sys)
    s = h * sys.p_fixed
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), s.shape)
    l0 = rate_rx(s, sys.sigma2)
    l1 = lam_arr * q_rx(s, eh)
    rho = np.zeros_like(s)
    rho[case == 5] = 1.0
    rho[(case == 3) & _better(l1, l0)] = 1.0
    c24 = (case == 2) | (case == 4)
    inner = c24 & (s > eh.b)
    if np.any(inner):
        ro = rho_opt_root(h[inner], lam_arr[inner], eh, sys)
        lro = (rate_rx((1 - ro) * s[inner], sys.sigma2)
               + lam_arr[inner] * q_rx(ro * s[inner], eh))
        take = (case[inner] == 4) | _better(lro, l0[inner])
        rho[inner] = np.where(take, ro, 0.0)
    # cases 2/4 with an empty root bracket can only peak at an endpoint
    edge = c24 & ~inner
    rho[edge] = np.where(_better(l1[edge], l0[edge]), 1.0, 0.0)
    rho[h == 0] = 0.0
    return rho


# -- low-complexity per-state solution ---------------------------------------

def case_rows_suboptimal(h, lam, eh, sys):
    h = np.asarray(h, dtype=float)
    z = z_fn(h, eh, sys)
    f0 = lam * f_fn(0.0, sys.p_fixed, eh)
    fh = lam * f_fn(h, sys.p_fixed, eh)
    quarter = lam / 4
    return np.stack(np.broadcast_arrays(
        z >= quarter,
        (np.maximum(fh, f0) < z) & (z < quarter),
        (f0 <= z) & (z <= fh),
        (fh < z) & (z < f0),
        z <= np.minimum(fh, f0),
    ))


def classify_suboptimal(h, lam, eh, sys):
    """Primed case index 1..5 per state (h > 0)."""
    if np.any(np.asarray(lam) <= 0):
        raise DomainError("lambda must be positive")
    return _first_true(case_rows_suboptimal(h, lam, eh, sys))


def rho_subopt_closed(h, lam, eh, sys):
    """Closed-form stationary point of the surrogate objective.

    Solves Psi = 1/2 + sqrt(1/4 - z/lambda). The log argument
    (1 - r)/(1 + r) with r = sqrt(1 - 4z/lambda) is rewritten as
    (4z/lambda)/(1 + r)^2 to avoid cancellation when z << lambda.
    """
    h = np.asarray(h, dtype=float)
    ratio = 4 * z_fn(h, eh, sys) / lam
    if np.any(ratio > 1):
        raise DomainError("4 z(h)/lambda exceeds 1; no stationary point")
    r = np.sqrt(1 - ratio)
    with np.errstate(divide="ignore"):
        x = eh.b - np.log(ratio / (1 + r) ** 2) / eh.a
    return x / (h * sys.p_fixed)


def surrogate_lagrangian(h, rho, lam, eh, sys):
    """(1 - rho) R(P, 0) + lambda Q(P, rho)."""
    s = np.asarray(h, dtype=float) * sys.p_fixed
    return (1 - rho) * rate_rx(s, sys.sigma2) + lam * q_rx(rho * s, eh)


def solve_state_suboptimal(h, lam, eh, sys):
    """Split ratio maximizing the surrogate Lagrangian per state."""
    scalar = np.ndim(h) == 0
    h = np.atleast_1d(np.asarray(h, dtype=float))
    rho = np.zeros_like(h)
    pos = h > 0
    if not np.any(pos):
        return 0.0 if scalar else rho
    hp = h[pos]
    lam_arr = np.broadcast_to(np.asarray(lam, dtype=float), h.shape)[pos]
    case = classify_suboptimal(hp, lam_arr, eh, sys)
    s = hp * sys.p_fixed
    l0 = rate_rx(s, sys.sigma2)
    l1 = lam_arr * q_rx(s, eh)
    out = np.zeros_like(hp)
    out[case == 5] = 1.0
    out[(case == 3) & _better(l1, l0)] = 1.0
    c24 = (case == 2) | (case == 4)
    if np.any(c24):
        rs = rho_subopt_closed(hp[c24], lam_arr[c24], eh, sys)
        ok = rs <= 1.0
        rs_ok = np.where(ok, rs, 1.0)
        lrs = surrogate_lagrangian(hp[c24], rs_ok, lam_arr[c24], eh, sys)
        take = (case[c24] == 4) | _better(lrs, l0[c24])
        interior = np.where(take, rs_ok, 0.0)
        # a closed form beyond rho = 1 means the peak is at an endpoint
        endpoint = np.where(_better(l1[c24], l0[c24]), 1.0, 0.0)
        out[c24] = np.where(ok, interior, endpoint)
    rho[pos] = out
    return float(rho[0]) if scalar else rho


SOLVERS = {"optimal": solve_state_optimal, "suboptimal": solve_state_suboptimal}


# -- multiplier search --------------------------------------------------------

def csir_policy(h, rho, eh, sys, lam=None) -> Policy:
    s = h * sys.p_fixed
    metrics = {
        "rate": rate_rx((1 - rho) * s, sys.sigma2),
        "q": q_rx(rho * s, eh),
        "p": np.full_like(h, sys.p_fixed),
    }
    return Policy(rho, np.full_like(h, sys.p_fixed), metrics, duals=(lam,))


@dataclass
class CsirSolution:
    """Result of the lambda search.

    ``mixture`` holds one policy, or two policies time-shared so that the
    energy constraint holds exactly.
    """

    lam: float
    mixture: Mixture
    q_target: float
    achieved_rate: float
    achieved_q: float
    iterations: int
    gap_bound: float
    mode: str = "optimal"
    extra: dict = field(default_factory=dict)

    @property
    def rho(self) -> np.ndarray:
        return self.mixture.primary.rho

    def to_json(self, with_policy: bool = True) -> dict:
        out = {
            "lambda": _json_float(self.lam),
            "achieved_rate": self.achieved_rate,
            "achieved_q": self.achieved_q,
            "q_target": self.q_target,
            "iterations": self.iterations,
            "gap_bound": self.gap_bound,
            "mode": self.mode,
        }
        if with_policy:
            out["rho"] = self.rho.tolist()
            out["time_sharing"] = [{"weight": w, "lambda": _json_float(pol.duals[0]),
                                    "rho": pol.rho.tolist()}
                                   for w, pol in self.mixture.parts]
        out.update(self.extra)
        return out


def _json_float(v):
    if v is None or not math.isfinite(v):
        return None
    return float(v)


def q_max_fixed_power(h, eh, sys) -> float:
    return float(np.mean(q_rx(h * sys.p_fixed, eh)))


def find_lambda(ensemble, q_target: float, mode: str = "optimal", *,
                eh: NonlinearEhParams, sys: SystemParams, tol: float = 1e-10,
                maxiter: int = 200, lam0: float | None = None) -> CsirSolution:
    """Tune lambda so the average harvested energy equals ``q_target``.

    Averages are arithmetic means over the ensemble. If the energy jumps
    across the target between two neighbouring multipliers, the two
    policies are time-shared to meet it exactly.
    """
    h = _gains(ensemble)
    solve = SOLVERS[mode]
    qmax = q_max_fixed_power(h, eh, sys)
    if q_target < 0 or q_target > qmax * (1 + 1e-12):
        raise InfeasibleTarget(f"q_target={q_target} outside [0, {qmax}]")

    def finish(mix, lam, its, probes):
        rate = mix.mean("rate")
        gap = min(p.mean("rate") + p.duals[0] * (p.mean("q") - q_target) for p in probes)
        return CsirSolution(lam, mix, float(q_target), rate, mix.mean("q"), its,
                            max(gap - rate, 0.0), mode)

    if q_target == 0:
        pol = csir_policy(h, solve(h, LAMBDA_FLOOR, eh, sys), eh, sys, LAMBDA_FLOOR)
        return finish(Mixture.single(pol), LAMBDA_FLOOR, 1, [pol])
    if q_target >= qmax * (1 - 1e-12):
        pol = csir_policy(h, (h > 0).astype(float), eh, sys, math.inf)
        mix = Mixture.single(pol)
        return CsirSolution(math.inf, mix, float(q_target), mix.mean("rate"),
                            mix.mean("q"), 0, 0.0, mode)

    def evaluate(lam):
        pol = csir_policy(h, solve(h, lam, eh, sys), eh, sys, lam)
        return pol.mean("q"), pol

    if lam0 is None:
        lam0 = 4 * gamma_fn(0.0, eh, sys)
    res = monotone_search(evaluate, q_target, lam0, ftol=tol * qmax,
                          x_min=LAMBDA_FLOOR, x_max=1e300, maxiter=maxiter)
    if res.exact:
        mix = Mixture.single(res.lo.payload)
        return finish(mix, res.lo.x, res.iterations, [res.lo.payload])
    mix = blend_to_target(Mixture.single(res.lo.payload), Mixture.single(res.hi.payload),
                          "q", q_target)
    return finish(mix, res.hi.x, res.iterations, [res.lo.payload, res.hi.payload])


def solve_partial_csit(ensemble, q_target: float, p_th: float, mode: str = "optimal", *,
                       eh: NonlinearEhParams, sys: SystemParams, n_grid: int = 41,
                       resolution: float | None = None):
    """Pick the fixed transmit power P in (0, p_th] with the best rate at
    ``q_target``, solving the receiver-side problem for every candidate P.

    A coarse grid locates the best cell, then golden-section search refines
    it to ``resolution`` (default p_th * 1e-3).
    """
    if not p_th > 0:
        raise DomainError("p_th must be positive")
    h = _gains(ensemble)
    resolution = p_th * 1e-3 if resolution is None else resolution
    cache = {}

    def value(p):
        if p not in cache:
            sp = replace(sys, p_fixed=p)
            if q_target > q_max_fixed_power(h, eh, sp) * (1 + 1e-12):
                cache[p] = (-math.inf, None)
            else:
                sol = find_lambda(h, min(q_target, q_max_fixed_power(h, eh, sp)), mode,
                                  eh=eh, sys=sp)
                cache[p] = (sol.achieved_rate, sol)
        return cache[p][0]

    grid = np.linspace(0, p_th, n_grid)[1:]
    vals = [value(float(p)) for p in grid]
    k = int(np.argmax(vals))
    if not math.isfinite(vals[k]):
        raise InfeasibleTarget("q_target exceeds the harvestable energy at p_th")
    a = float(grid[k - 1]) if k > 0 else float(grid[0]) * 1e-3
    b = float(grid[min(k + 1, len(grid) - 1)])
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    while b - a > resolution:
        if value(c) >= value(d):
            b, d = d, c
            c = b - invphi * (b - a)
        else:
            a, c = c, d
            d = a + invphi * (b - a)
    best = max(cache, key=lambda p: (cache[p][0], p))
    return best, cache[best][1]
