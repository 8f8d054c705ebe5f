"""Rate-energy region sweeps, Q_max endpoints, CSV/JSON output and the
brute-force oracle used to check the solvers on small ensembles."""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import linprog

from . import baselines, csi, csir
from .errors import GuardrailExceeded, InfeasibleTarget
from .model import NonlinearEhParams, SystemParams, q_rx, rate_rx

CSV_COLUMNS = ("q_target", "rate", "energy", "scheme", "mode")
TOP_FRACTION = 1 - 1e-6
ORACLE_MAX_STATES = 256


def _gains(ensemble):
    return np.asarray(getattr(ensemble, "gains", ensemble), dtype=float)


@dataclass
class REPoint:
    rate: float
    energy: float
    q_target: float
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RERegion:
    points: list
    scheme: str
    case: str
    ensemble_meta: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def q_targets(self):
        return np.array([p.q_target for p in self.points])

    @property
    def rates(self):
        return np.array([p.rate for p in self.points])

    @property
    def energies(self):
        return np.array([p.energy for p in self.points])

    def to_json(self) -> dict:
        return {
            "scheme": self.scheme,
            "case": self.case,
            "ensemble_meta": self.ensemble_meta,
            "points": [{"q_target": p.q_target, "rate": p.rate, "energy": p.energy,
                        **p.diagnostics} for p in self.points],
            "errors": self.errors,
        }


# -- endpoints ----------------------------------------------------------------

def q_max_csir(ensemble, eh: NonlinearEhParams, sys: SystemParams) -> float:
    """Mean harvested energy with all received power sent to the harvester."""
    return csir.q_max_fixed_power(_gains(ensemble), eh, sys)


def q_max_csi(ensemble, eh: NonlinearEhParams, sys: SystemParams, p_avg=None) -> float:
    """Largest mean harvested energy under the average and peak power limits."""
    return csi.q_max_csi(_gains(ensemble), eh, sys, p_avg)


# -- scheme registry ----------------------------------------------------------

@dataclass(frozen=True)
class Scheme:
    name: str
    case: str
    solve: Callable          # (h, q, eh, sys, warm) -> solution
    q_max: Callable          # (h, eh, sys) -> float
    endpoint: Callable       # (h, eh, sys) -> solution or None


def _csir_endpoint(h, eh, sys):
    return csir.find_lambda(h, q_max_csir(h, eh, sys), eh=eh, sys=sys)


def _csi_endpoint(h, eh, sys):
    mix, mu, its = csi.q_max_csi_solution(h, eh, sys)
    return csi.CsiSolution(math.inf, mu, mix, mix.mean("q"), sys.p_avg, mix.mean("rate"),
                           mix.mean("q"), mix.mean("p"), "qmax", its)


def _csir_mode(mode):
    def solve(h, q, eh, sys, warm):
        return csir.find_lambda(h, q, mode, eh=eh, sys=sys)
    return solve


def _csi_mode(mode):
    def solve(h, q, eh, sys, warm):
        qm = q_max_csi(h, eh, sys)
        w = (warm.lam, warm.mu) if warm is not None and math.isfinite(warm.lam) else None
        return csi.find_duals(h, q, mode=mode, eh=eh, sys=sys, q_max=qm, warm=w)
    return solve


def _lin_csir_qmax(h, eh, sys):
    return sys.zeta * sys.p_fixed * eh.t_block * float(np.mean(h))


def _lin_csi_qmax(h, eh, sys):
    return baselines.q_max_linear_csi(h, eh, sys, sys.p_avg)


SCHEMES = {
    "csir": {
        "optimal": Scheme("optimal", "csir", _csir_mode("optimal"), q_max_csir, _csir_endpoint),
        "suboptimal": Scheme("suboptimal", "csir", _csir_mode("suboptimal"), q_max_csir,
                             _csir_endpoint),
        "linear": Scheme("linear", "csir",
                         lambda h, q, eh, sys, w: baselines.linear_dps_csir(h, q, eh=eh, sys=sys),
                         _lin_csir_qmax,
                         lambda h, eh, sys: baselines.linear_dps_csir(
                             h, _lin_csir_qmax(h, eh, sys), eh=eh, sys=sys)),
        "modeswitch": Scheme("modeswitch", "csir",
                             lambda h, q, eh, sys, w: baselines.mode_switch_csir(
                                 h, q, eh=eh, sys=sys),
                             q_max_csir,
                             lambda h, eh, sys: baselines.mode_switch_csir(
                                 h, q_max_csir(h, eh, sys), eh=eh, sys=sys)),
    },
    "csi": {
        "optimal": Scheme("optimal", "csi", _csi_mode("optimal"), q_max_csi, _csi_endpoint),
        "suboptimal": Scheme("suboptimal", "csi", _csi_mode("suboptimal"), q_max_csi,
                             _csi_endpoint),
        "longterm": Scheme("longterm", "csi", _csi_mode("longterm_only"), q_max_csi,
                           _csi_endpoint),
        "linear": Scheme("linear", "csi",
                         lambda h, q, eh, sys, w: baselines.linear_dps_csi(h, q, eh=eh, sys=sys),
                         _lin_csi_qmax, lambda h, eh, sys: None),
        "binary": Scheme("binary", "csi",
                         lambda h, q, eh, sys, w: baselines.binary_restricted_csi(
                             h, q, eh=eh, sys=sys, q_max=q_max_csi(h, eh, sys)),
                         q_max_csi, _csi_endpoint),
    },
}


def get_scheme(case: str, name: str) -> Scheme:
    try:
        return SCHEMES[case][name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r} for case {case!r}") from None


def _point(sol, q_target, elapsed):
    diag = sol.to_json(with_policy=False)
    diag.pop("q_target", None)
    diag["seconds"] = elapsed
    return REPoint(float(sol.achieved_rate), float(sol.achieved_q), float(q_target), diag)


def _solve_point(case, name, h, q, eh, sys):
    scheme = get_scheme(case, name)
    t0 = time.perf_counter()
    try:
        sol = scheme.solve(h, q, eh, sys, None)
    except (InfeasibleTarget, ArithmeticError, RuntimeError, ValueError) as exc:
        return None, {"q_target": q, "error": type(exc).__name__, "message": str(exc)}
    return _point(sol, q, time.perf_counter() - t0), None


def sweep_region(scheme, ensemble, n_points: int, eh: NonlinearEhParams, sys: SystemParams,
                 case: str = "csir", endpoint: bool = True, workers: int = 1) -> RERegion:
    """Solve ``scheme`` on a uniform grid of energy targets.

    The grid is linspace(0, q_max*(1 - 1e-6), n_points); the exact q_max
    point is appended from the all-harvest policy when ``endpoint`` is set.
    Failed points are recorded in ``errors`` and skipped. With one worker
    each point is warm-started from the previous one; with more, points
    are solved independently in a process pool (order is preserved).
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    if isinstance(scheme, str):
        scheme = get_scheme(case, scheme)
    h = _gains(ensemble)
    meta = dict(getattr(ensemble, "meta", {}) or {})
    meta.setdefault("n", int(h.size))
    meta.setdefault("seed", getattr(ensemble, "seed", None))
    qm = scheme.q_max(h, eh, sys)
    meta["q_max"] = qm
    region = RERegion([], scheme.name, scheme.case, meta)
    grid = [float(q) for q in np.linspace(0.0, qm * TOP_FRACTION, n_points)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(_solve_point, scheme.case, scheme.name, h, q, eh, sys)
                    for q in grid]
            for f in futs:
                pt, err = f.result()
                if err is None:
                    region.points.append(pt)
                else:
                    region.errors.append(err)
    else:
        warm = None
        for q in grid:
            t0 = time.perf_counter()
            try:
                sol = scheme.solve(h, q, eh, sys, warm)
            except (InfeasibleTarget, ArithmeticError, RuntimeError, ValueError) as exc:
                region.errors.append({"q_target": q, "error": type(exc).__name__,
                                      "message": str(exc)})
                continue
            warm = sol
            region.points.append(_point(sol, q, time.perf_counter() - t0))
    if endpoint:
        t0 = time.perf_counter()
        try:
            sol = scheme.endpoint(h, eh, sys)
        except (InfeasibleTarget, ArithmeticError, RuntimeError, ValueError) as exc:
            region.errors.append({"q_target": qm, "error": type(exc).__name__,
                                  "message": str(exc)})
            sol = None
        if sol is not None:
            region.points.append(_point(sol, qm, time.perf_counter() - t0))
    return region


# -- serialization ------------------------------------------------------------

def write_region_csv(regions, path) -> None:
    """CSV with one row per point; floats written with repr for exact round trips."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for reg in regions:
            for p in reg.points:
                w.writerow([repr(float(p.q_target)), repr(float(p.rate)), repr(float(p.energy)),
                            reg.scheme, reg.case])


def read_region_csv(path) -> list[RERegion]:
    regions: dict = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["scheme"], row["mode"])
            if key not in regions:
                regions[key] = RERegion([], row["scheme"], row["mode"])
            regions[key].points.append(REPoint(float(row["rate"]), float(row["energy"]),
                                               float(row["q_target"])))
    return list(regions.values())


def write_region_json(regions, path) -> None:
    with open(path, "w") as fh:
        json.dump([r.to_json() for r in regions], fh, indent=1, allow_nan=False)
        fh.write("\n")


# -- brute-force oracle -------------------------------------------------------

def _lp_mix(rates, energies, q_target, powers=None, p_avg=None):
    """Best time-sharing of candidate policies: max sum w*R, sum w*Q >= q, sum w = 1."""
    n = len(rates)
    # rows are normalized; harvested energies are tiny in absolute terms
    qs = max(float(np.max(energies)), 1e-300)
    a_ub = [-np.asarray(energies) / qs]
    b_ub = [-q_target / qs]
    if powers is not None:
        a_ub.append(np.asarray(powers) / p_avg)
        b_ub.append(1.0)
    res = linprog(-np.asarray(rates), A_ub=np.vstack(a_ub), b_ub=np.array(b_ub),
                  A_eq=np.ones((1, n)), b_eq=[1.0], bounds=(0, None), method="highs")
    if res.status != 0:
        raise InfeasibleTarget(f"oracle: no mixture reaches q_target={q_target}")
    return np.clip(res.x, 0, None)


def _zoom(grid, w, factor):
    used = grid[w > 1e-12]
    used = used[np.isfinite(used) & (used > 0)]
    if used.size == 0:
        return None
    return used.min() / factor, used.max() * factor


def _oracle_csir(h, q_target, eh, sys, n_rho, n_lam, stages):
    rho = np.linspace(0.0, 1.0, n_rho)
    s = h[:, None] * sys.p_fixed
    r_tab = rate_rx((1 - rho[None, :]) * s, sys.sigma2)
    q_tab = q_rx(rho[None, :] * s, eh)

    def columns(lams):
        rs, qs = [], []
        for lam in lams:
            k = np.argmax(r_tab + lam * q_tab, axis=1)
            idx = np.arange(h.size)
            rs.append(r_tab[idx, k].mean())
            qs.append(q_tab[idx, k].mean())
        return np.array(rs), np.array(qs)

    # lam = 0 and lam = inf bound the family: pure decoding and pure harvesting
    lams = np.concatenate(([0.0], np.geomspace(1e-6, 1e14, n_lam), [math.inf]))
    rs, qs = columns(lams[1:-1])
    rs = np.concatenate(([r_tab[:, 0].mean()], rs, [r_tab[:, -1].mean()]))
    qs = np.concatenate(([q_tab[:, 0].mean()], qs, [q_tab[:, -1].mean()]))
    for _ in range(stages - 1):
        w = _lp_mix(rs, qs, q_target)
        span = _zoom(lams, w, 1.2)
        if span is None:
            break
        new = np.geomspace(span[0], span[1], n_lam)
        r2, q2 = columns(new)
        lams = np.concatenate((lams, new))
        rs = np.concatenate((rs, r2))
        qs = np.concatenate((qs, q2))
    w = _lp_mix(rs, qs, q_target)
    return float(w @ rs), float(w @ qs), None, int(lams.size)


def _oracle_csi(h, q_target, eh, sys, n_pow, n_dual, stages, p_avg):
    pw = np.linspace(0.0, sys.p_max, n_pow)
    r_tab = rate_rx(h[:, None] * pw[None, :], sys.sigma2)
    q_tab = q_rx(h[:, None] * pw[None, :], eh)
    n_st = h.size
    chunk = max(1, 4096 // n_st)

    def summarize(lam_col, mu, x_id, x_eh):
        # x_* have shape (L, N)
        return np.column_stack((lam_col, np.full(lam_col.shape, mu),
                                rate_rx(h * x_id, sys.sigma2).mean(axis=1),
                                q_rx(h * x_eh, eh).mean(axis=1),
                                (x_id + x_eh).mean(axis=1)))

    def columns(lams, mus, polish=True):
        out = []
        lams = np.asarray(lams, dtype=float)
        fin = lams[np.isfinite(lams)]
        has_inf = bool(np.any(np.isinf(lams)))
        rows = np.arange(n_st)[None, :]
        for mu in mus:
            # best decoding power within the remaining budget: prefix max over P_ID
            f = r_tab - mu * pw[None, :]
            rev_f = np.maximum.accumulate(f, axis=1)[:, ::-1]   # k -> best P_ID <= P_max - pw[k]
            rev_arg = _prefix_argmax(f)[:, ::-1]
            base = -mu * pw[None, None, :] + rev_f[None]
            for i in range(0, fin.size, chunk):
                lc = fin[i:i + chunk]
                k = np.argmax(lc[:, None, None] * q_tab[None] + base, axis=2)
                kid = rev_arg[rows, k]
                x_id, x_eh = pw[kid], pw[k]
                if polish:
                    x_id, x_eh = _polish(h, x_id, x_eh, lc, mu, pw[1], eh, sys)
                out.append(summarize(lc, mu, x_id, x_eh))
            if has_inf:
                k = np.argmax(q_tab - mu * pw[None, :], axis=1)[None, :]
                x_id, x_eh = np.zeros(k.shape), pw[k]
                if polish:
                    x_id, x_eh = _polish(h, x_id, x_eh, None, mu, pw[1], eh, sys)
                out.append(summarize(np.array([math.inf]), mu, x_id, x_eh))
        return np.vstack(out)

    lam_grid = np.concatenate(([0.0], np.geomspace(1e-3, 1e9, n_dual - 2), [math.inf]))
    mu_grid = np.geomspace(1e-4, 1e7, n_dual)
    # the coarse global grid only locates the relevant multipliers
    cols = columns(lam_grid, mu_grid, polish=False)
    dl = math.log(1e12) / (n_dual - 3)
    dm = math.log(1e11) / (n_dual - 1)
    m = 41
    for _ in range(stages - 1):
        # local grid spanning +-2 steps around every column the mixture uses
        w = _lp_mix(cols[:, 2], cols[:, 3], q_target, cols[:, 4], p_avg)
        new = []
        for lam, mu in cols[w > 1e-12, :2]:
            mus = mu * np.exp(np.linspace(-2 * dm, 2 * dm, m))
            if lam == 0 or math.isinf(lam):
                lams = np.array([lam])
            else:
                lams = lam * np.exp(np.linspace(-2 * dl, 2 * dl, m))
            new.append(columns(lams, mus))
        cols = np.vstack([cols] + new)
        dl, dm = 4 * dl / (m - 1), 4 * dm / (m - 1)
    w = _lp_mix(cols[:, 2], cols[:, 3], q_target, cols[:, 4], p_avg)
    return float(w @ cols[:, 2]), float(w @ cols[:, 3]), float(w @ cols[:, 4]), len(cols)


def _polish(h, x_id, x_eh, lam, mu, width, eh, sys, levels=3, n=21):
    """Refine grid maximizers by nested local grids, each 10x finer.

    ``x_id``, ``x_eh`` have shape (L, N) for L multipliers ``lam`` (None
    means pure harvesting, where the objective is Q - mu*P_EH).
    """
    off = np.linspace(-1.0, 1.0, n)
    hh = h[None, :, None]
    for _ in range(levels):
        c_eh = np.clip(x_eh[..., None] + width * off, 0.0, sys.p_max)
        if lam is None:
            v_eh = q_rx(hh * c_eh, eh) - mu * c_eh
            x_eh = np.take_along_axis(c_eh, np.argmax(v_eh, axis=-1)[..., None], -1)[..., 0]
        else:
            v_eh = lam[:, None, None] * q_rx(hh * c_eh, eh) - mu * c_eh
            c_id = np.clip(x_id[..., None] + width * off, 0.0, sys.p_max)
            v_id = rate_rx(hh * c_id, sys.sigma2) - mu * c_id
            tot = v_eh[..., :, None] + v_id[..., None, :]
            tot = np.where(c_eh[..., :, None] + c_id[..., None, :] <= sys.p_max, tot, -np.inf)
            flat = np.argmax(tot.reshape(*tot.shape[:2], -1), axis=-1)
            i, j = np.divmod(flat, n)
            x_eh = np.take_along_axis(c_eh, i[..., None], -1)[..., 0]
            x_id = np.take_along_axis(c_id, j[..., None], -1)[..., 0]
        width /= 10
    return x_id, x_eh


def _prefix_argmax(f):
    """Index of the running maximum along axis 1 (first occurrence)."""
    k = np.arange(f.shape[1])[None, :]
    best = np.maximum.accumulate(f, axis=1)
    hit = np.where(f >= best, k, 0)
    return np.maximum.accumulate(hit, axis=1)


def oracle_solve(ensemble, q_target: float, case: str, eh: NonlinearEhParams,
                 sys: SystemParams, resolution: float | None = None, *,
                 n_dual: int | None = None, stages: int | None = None) -> REPoint:
    """Brute-force reference point for small ensembles.

    Each state's subproblem is maximized by exhaustive search over a grid
    (rho with step ``resolution``, default 1e-4, for csir; transmit powers
    with step P_max*1e-3 for csi) for every multiplier on a geometric grid
    (500 lambdas, or 150 x 150 (lambda, mu) pairs). The grid is zoomed
    around the multipliers that matter, and the best mixture of the
    resulting policies meeting the constraints is picked by a linear
    program.
    """
    h = _gains(ensemble)
    if h.size > ORACLE_MAX_STATES:
        raise GuardrailExceeded(f"oracle limited to {ORACLE_MAX_STATES} states, got {h.size}")
    t0 = time.perf_counter()
    if case == "csir":
        step = 1e-4 if resolution is None else resolution
        n_rho = int(math.ceil(1 / step)) + 1
        r, q, p, ncol = _oracle_csir(h, q_target, eh, sys, n_rho, n_dual or 500, stages or 3)
    elif case == "csi":
        step = 1e-3 if resolution is None else resolution
        n_pow = int(math.ceil(1 / step)) + 1
        r, q, p, ncol = _oracle_csi(h, q_target, eh, sys, n_pow, n_dual or 150, stages or 5,
                                    sys.p_avg)
    else:
        raise ValueError(f"unknown case {case!r}")
    diag = {"columns": ncol, "seconds": time.perf_counter() - t0}
    if p is not None:
        diag["achieved_p_avg"] = p
    return REPoint(r, q, float(q_target), diag)
