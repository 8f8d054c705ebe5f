"""Root finding and monotone multiplier search used by every solver."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .errors import InfeasibleTarget, NoRootInBracket, NonConvergence

EPS = np.finfo(float).eps


def bracketed_root(fun, dfun, lo, hi, ftol=1e-10, maxiter=200, args=(), polish=True):
    """Vectorised safeguarded Newton iteration inside a sign-change bracket.

    ``fun(x, *args)`` and ``dfun(x, *args)`` return residuals and
    derivatives elementwise; ``args`` are arrays broadcastable to ``lo``.
    Newton steps that leave the bracket or fail to halve the previous step
    fall back to bisection. Only unconverged entries are iterated; an
    entry stops when ``|fun| <= ftol`` or its Newton step drops to rounding
    level, so ``ftol=0`` asks for full precision. With ``polish`` one more
    Newton step is taken from the converged points, which roughly squares
    the error for the price of two extra evaluations.
    """
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    if lo.size == 0:
        return lo
    args = tuple(np.broadcast_to(np.asarray(a, dtype=float), lo.shape) for a in args)
    flo = fun(lo, *args)
    fhi = fun(hi, *args)
    if np.any(np.sign(flo) * np.sign(fhi) > 0) or np.any(~(lo <= hi)):
        raise NoRootInBracket("residual signs do not bracket a root")
    shape = lo.shape
    lo, hi, flo, fhi = lo.ravel(), hi.ravel(), flo.ravel(), fhi.ravel()
    args = tuple(a.ravel() for a in args)
    slo = np.sign(flo)
    x = np.where(flo == 0, lo, np.where(fhi == 0, hi, 0.5 * (lo + hi)))
    dx_old = hi - lo
    act = np.nonzero((flo != 0) & (fhi != 0))[0]
    def finish():
        if polish:
            _polish(fun, dfun, x, lo, hi, args)
        return x.reshape(shape)

    for _ in range(maxiter + 1):
        if act.size == 0:
            return finish()
        sub = tuple(a[act] for a in args)
        xa = x[act]
        fx = fun(xa, *sub)
        tiny = 4 * EPS * np.maximum(np.abs(xa), 1e-300)
        keep = ~((np.abs(fx) <= ftol) | (hi[act] - lo[act] <= tiny))
        act, xa, fx = act[keep], xa[keep], fx[keep]
        sub = tuple(a[keep] for a in sub)
        if act.size == 0:
            return finish()
        if _ == maxiter:
            break
        same = np.sign(fx) == slo[act]
        la = np.where(same, xa, lo[act])
        ha = np.where(same, hi[act], xa)
        lo[act], hi[act] = la, ha
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = xa - fx / dfun(xa, *sub)
        bad = (~np.isfinite(xn) | (xn <= la) | (xn >= ha)
               | (np.abs(xn - xa) > 0.5 * np.abs(dx_old[act])))
        xn = np.where(bad, 0.5 * (la + ha), xn)
        dx_old[act] = np.abs(xn - xa)
        x[act] = xn
        # a Newton step below rounding level means x is as good as it gets
        done = ~bad & (np.abs(xn - xa) <= tiny[keep])
        act = act[~done]
    raise NonConvergence("bracketed_root hit maxiter")


def _polish(fun, dfun, x, lo, hi, args):
    """One in-bracket Newton step, kept only where the residual shrinks."""
    f0 = fun(x, *args)
    with np.errstate(divide="ignore", invalid="ignore"):
        xn = x - f0 / dfun(x, *args)
    ok = np.isfinite(xn) & (xn >= lo) & (xn <= hi) & (f0 != 0)
    if not np.any(ok):
        return
    idx = np.nonzero(ok)[0]
    f1 = fun(xn[idx], *(a[idx] for a in args))
    better = np.abs(f1) < np.abs(f0[idx])
    x[idx[better]] = xn[idx[better]]


@dataclass
class Probe:
    x: float
    value: float
    payload: Any


@dataclass
class SearchResult:
    lo: Probe
    hi: Probe
    iterations: int

    @property
    def exact(self) -> bool:
        return self.lo is self.hi


def monotone_search(evaluate: Callable[[float], tuple[float, Any]], target: float,
                    x0: float, ftol: float, increasing: bool = True,
                    x_min: float = 1e-12, x_max: float = 1e30,
                    xtol: float = 1e-13, maxiter: int = 200) -> SearchResult:
    """Find a positive multiplier x where a monotone, possibly jumping,
    function crosses ``target``.

    Works on log(x) with an Illinois false-position update. The result is
    a single probe hitting the target exactly, or two probes whose values
    straddle it, either both within ``ftol`` of the target or at bracket
    width ``xtol`` (relative), ready for time-sharing. Stopping on a
    one-sided ``ftol`` hit would leave the constraint off by up to ftol,
    which costs a lot of objective when the multiplier is large.
    """
    sgn = 1.0 if increasing else -1.0
    its = 0

    def probe(x):
        nonlocal its
        its += 1
        v, pay = evaluate(x)
        return Probe(x, v, pay)

    def resid(p):
        return sgn * (p.value - target)

    def close(p):
        return abs(p.value - target) <= ftol

    x0 = min(max(x0, x_min), x_max)
    p = probe(x0)
    if p.value == target:
        return SearchResult(p, p, its)
    lo = hi = None
    if resid(p) < 0:
        lo, step = p, math.log(10.0)
        while True:
            x = min(lo.x * math.exp(step), x_max)
            q = probe(x)
            if q.value == target:
                return SearchResult(q, q, its)
            if resid(q) > 0:
                hi = q
                break
            lo = q
            if x >= x_max:
                if close(q):
                    return SearchResult(q, q, its)
                raise InfeasibleTarget("target not reached at the largest multiplier")
            step *= 2
    else:
        hi, step = p, math.log(10.0)
        while True:
            x = max(hi.x * math.exp(-step), x_min)
            q = probe(x)
            if q.value == target:
                return SearchResult(q, q, its)
            if resid(q) < 0:
                lo = q
                break
            hi = q
            if x <= x_min:
                return SearchResult(q, q, its)
            step *= 2

    wlo, whi = 1.0, 1.0
    side, run = 0, 0
    for _ in range(maxiter):
        tlo, thi = math.log(lo.x), math.log(hi.x)
        if (close(lo) and close(hi)) or thi - tlo <= xtol * max(1.0, abs(tlo)):
            return SearchResult(lo, hi, its)
        rlo, rhi = resid(lo) * wlo, resid(hi) * whi
        t = tlo - rlo * (thi - tlo) / (rhi - rlo) if rhi != rlo else 0.5 * (tlo + thi)
        w = thi - tlo
        t = min(max(t, tlo + 0.02 * w), thi - 0.02 * w)
        if run >= 3:
            # false position keeps landing on one side; take a plain bisection
            t, run = 0.5 * (tlo + thi), 0
        q = probe(math.exp(t))
        if q.value == target:
            return SearchResult(q, q, its)
        if resid(q) < 0:
            lo = q
            run = run + 1 if side == -1 else 1
            whi = whi * 0.5 if side == -1 else 1.0
            wlo = 1.0
            side = -1
        else:
            hi = q
            run = run + 1 if side == 1 else 1
            wlo = wlo * 0.5 if side == 1 else 1.0
            whi = 1.0
            side = 1
    raise NonConvergence("multiplier search hit maxiter")
