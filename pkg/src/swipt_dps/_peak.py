"""Interior maximum of R(D - y) + lam*Q(y) in the received EH power y.

Stationarity reads lam*Psi(1 - Psi) = c/(D - y). Taking logs, the
function psi(y) = ln(lam*Psi(1 - Psi)) + ln(D - y) is concave, so the
residual changes sign at most twice (-, +, -) and the larger sign change
is the only interior local maximum. It can sit on either side of the
inflection point y = b.
"""
from __future__ import annotations

import numpy as np

from ._numerics import bracketed_root
from .model import NonlinearEhParams, logistic_slope


def _phi(c, eh):
    def fun(y, lam, d):
        return lam * logistic_slope(y, eh) - c / (d - y)

    def dfun(y, lam, d):
        u = eh.a * (y - eh.b)
        return lam * eh.a * logistic_slope(y, eh) * np.tanh(-u / 2) - c / (d - y) ** 2

    return fun, dfun


def _log_slope_derivs(eh):
    def fun(y, d):
        return -eh.a * np.tanh(eh.a * (y - eh.b) / 2) - 1 / (d - y)

    def dfun(y, d):
        u = eh.a * (y - eh.b) / 2
        return -eh.a * eh.a / 2 / np.cosh(u) ** 2 - 1 / (d - y) ** 2

    return fun, dfun


def interior_peak(y_lo, y_hi, lam, c, d, eh: NonlinearEhParams, ftol: float = 1e-10):
    """Unique interior local maximizer on (y_lo, y_hi), NaN where none exists.

    Parameters
    ----------
    y_lo, y_hi : array
        Interval in received-power units, y_hi < d.
    lam : array or float
        Energy price.
    c : float
        Rate-term constant (bits convention), kappa/ln2.
    d : array
        Received information power plus noise at y = 0.
    """
    y_lo, y_hi, lam, d = (np.atleast_1d(a).astype(float)
                          for a in np.broadcast_arrays(y_lo, y_hi, lam, d))
    out = np.full(y_lo.shape, np.nan)
    fun, dfun = _phi(c, eh)
    f_hi = fun(y_hi, lam, d)
    live = (y_hi > y_lo) & (f_hi < 0)
    # lam*Psi(1-Psi) <= lam/4 and c/(d-y) >= c/(d-y_lo) on the interval
    live &= lam / 4 > c / (d - y_lo)
    if not np.any(live):
        return out

    # start of the decreasing stretch: the inflection point when the
    # residual is positive there, otherwise the maximizer of the log form
    start = np.full(y_lo.shape, np.nan)
    b_in = live & (eh.b > y_lo) & (eh.b < y_hi)
    f_b = np.where(b_in, fun(np.where(b_in, eh.b, y_lo), lam, d), -1.0)
    quick = b_in & (f_b > 0)
    start[quick] = eh.b
    past = live & (eh.b <= y_lo)
    start[past] = y_lo[past]

    slow = live & ~quick & ~past
    if np.any(slow):
        lo = y_lo[slow]
        hi = np.minimum(y_hi[slow], eh.b)
        g, dg = _log_slope_derivs(eh)
        ds = d[slow]
        glo, ghi = g(lo, ds), g(hi, ds)
        ym = np.where(glo <= 0, lo, np.where(ghi >= 0, hi, np.nan))
        mid = np.isnan(ym)
        if np.any(mid):
            ym[mid] = bracketed_root(g, dg, lo[mid], hi[mid], ftol=0.0, args=(ds[mid],))
        start[slow] = ym

    f_start = np.where(live, fun(np.where(live, start, y_lo), lam, d), -1.0)
    go = live & (f_start > 0)
    if np.any(go):
        out[go] = bracketed_root(fun, dfun, start[go], y_hi[go], ftol=ftol,
                                 args=(lam[go], d[go]))
    return out
