"""Rate and energy-harvesting model primitives.

Every function broadcasts over numpy arrays. Rates are in bits/s/Hz, so any
derivative of the rate carries a ``1/ln 2`` factor. The helper functions
used by the case tables (``g``, ``gamma``, ``G``, ``Gamma``) are derived from
that same convention.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import DomainError

LN2 = math.log(2.0)


@dataclass(frozen=True)
class NonlinearEhParams:
    """Logistic harvester constants.

    Parameters
    ----------
    a : float
        Charging rate (1/W).
    b : float
        Turn-on threshold (W).
    p_s : float
        Saturation power (W).
    t_block : float
        Block duration (s).
    """

    a: float
    b: float
    p_s: float
    t_block: float = 1.0
    omega: float = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("a", "b", "p_s", "t_block"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")
        object.__setattr__(self, "omega", float(expit(-self.a * self.b)))

    @property
    def one_minus_omega(self) -> float:
        return float(expit(self.a * self.b))

    @property
    def kappa(self) -> float:
        """(1 - Omega) / (P_s T a), the constant shared by every helper."""
        return self.one_minus_omega / (self.p_s * self.t_block * self.a)


@dataclass(frozen=True)
class SystemParams:
    """Noise level and power budgets."""

    sigma2: float
    p_fixed: float = 2.0
    p_avg: float = 2.0
    p_max: float = 4.0
    zeta: float = 1.0

    def __post_init__(self):
        for name in ("sigma2", "p_fixed", "p_avg", "p_max"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be positive and finite, got {v}")
        if not self.p_max > self.p_avg:
            raise DomainError("p_max must exceed p_avg")
        if not 0 < self.zeta <= 1:
            raise DomainError("zeta must lie in (0, 1]")


def _check_state(h, p, rho):
    h = np.asarray(h, dtype=float)
    p = np.asarray(p, dtype=float)
    rho = np.asarray(rho, dtype=float)
    if np.any(h < 0) or np.any(p < 0) or np.any(np.isnan(h)) or np.any(np.isnan(p)):
        raise DomainError("h and p must be nonnegative")
    if np.any(rho < 0) or np.any(rho > 1) or np.any(np.isnan(rho)):
        raise DomainError("rho must lie in [0, 1]")
    return h, p, rho


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


# -- unchecked kernels, written in terms of received power s = h*p ----------

def rate_rx(s, sigma2):
    """log2(1 + s/sigma2) for received information power s."""
    return np.log1p(s / sigma2) / LN2


def psi_rx(x, eh: NonlinearEhParams):
    """Logistic value for received EH power x."""
    return expit(eh.a * (x - eh.b))


def q_rx(x, eh: NonlinearEhParams):
    """Harvested energy for received EH power x.

    Uses (Psi - Omega)/(1 - Omega) = Psi * (1 - exp(-a x)), which is exact
    algebra and returns 0 at x = 0 without cancellation.
    """
    return eh.p_s * eh.t_block * expit(eh.a * (x - eh.b)) * -np.expm1(-eh.a * x)


def dq_rx(x, eh: NonlinearEhParams):
    """dQ/dx for received EH power x."""
    u = eh.a * (x - eh.b)
    return eh.p_s * eh.t_block * eh.a * expit(u) * expit(-u) / eh.one_minus_omega


def logistic_slope(x, eh: NonlinearEhParams):
    """Psi (1 - Psi) at received EH power x, always <= 1/4."""
    u = eh.a * (x - eh.b)
    return expit(u) * expit(-u)


# -- public checked API -------------------------------------------------------

def rate(h, p, rho, sys: SystemParams):
    """Achievable rate log2(1 + (1-rho) h p / sigma2) in bits/s/Hz."""
    h, p, rho = _check_state(h, p, rho)
    return _out(rate_rx((1.0 - rho) * h * p, sys.sigma2))


def psi(h, p, rho, eh: NonlinearEhParams):
    """Logistic function of the received EH power rho*h*p."""
    h, p, rho = _check_state(h, p, rho)
    return _out(psi_rx(rho * h * p, eh))


def q_nonlinear(h, p, rho, eh: NonlinearEhParams):
    """Harvested energy under the logistic model, in [0, P_s T)."""
    h, p, rho = _check_state(h, p, rho)
    return _out(q_rx(rho * h * p, eh))


def q_linear(h, p, rho, sys: SystemParams, t_block: float = 1.0):
    """Harvested energy under the linear model zeta*rho*h*p*T."""
    h, p, rho = _check_state(h, p, rho)
    return _out(sys.zeta * rho * h * p * t_block)


class CsirHelpers(NamedTuple):
    f: np.ndarray
    g: np.ndarray
    gamma: np.ndarray
    z: np.ndarray


class CsiHelpers(NamedTuple):
    f_low: np.ndarray
    f_up: np.ndarray
    g_low: np.ndarray
    g_up: np.ndarray
    z: np.ndarray
    gamma: np.ndarray
    z_prime: np.ndarray


def f_fn(x, p, eh):
    """Logistic slope with full power p routed to the harvester."""
    return logistic_slope(np.asarray(x, dtype=float) * p, eh)


def g_fn(x, eh, sys):
    return eh.kappa / (LN2 * (np.asarray(x, dtype=float) * sys.p_fixed + sys.sigma2))


def gamma_fn(x, eh, sys):
    s = np.maximum(np.asarray(x, dtype=float) * sys.p_fixed - eh.b, 0.0)
    return eh.kappa / (LN2 * (s + sys.sigma2))


def z_fn(x, eh, sys):
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise DomainError("z(x) needs x > 0")
    s = x * sys.p_fixed
    return eh.kappa * rate_rx(s, sys.sigma2) / s


def helpers_csir(x, eh: NonlinearEhParams, sys: SystemParams) -> CsirHelpers:
    """f, g, gamma and z evaluated at gain x with the fixed CSIR power.

    ``z`` is undefined at x = 0 and is returned as NaN there.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0) or np.any(np.isnan(x)):
        raise DomainError("x must be nonnegative")
    pos = x > 0
    z = np.full(x.shape, np.nan)
    if np.any(pos):
        z[pos] = z_fn(x[pos], eh, sys)
    return CsirHelpers(
        _out(f_fn(x, sys.p_fixed, eh)),
        _out(g_fn(x, eh, sys)),
        _out(gamma_fn(x, eh, sys)),
        _out(z if z.ndim else z[()]),
    )


def big_g_fn(x, p, eh, sys):
    return eh.kappa / (LN2 * (np.asarray(x, dtype=float) * (sys.p_max - p) + sys.sigma2))


def big_z_fn(x, eh):
    return eh.kappa / np.asarray(x, dtype=float)


def big_gamma_fn(x, eh, sys):
    s = np.maximum(np.asarray(x, dtype=float) * sys.p_max - eh.b, 0.0)
    return eh.kappa / (LN2 * (s + sys.sigma2))


def big_z_prime_fn(x, eh, sys):
    s = np.asarray(x, dtype=float) * sys.p_max
    return eh.kappa * rate_rx(s, sys.sigma2) / s


def helpers_csi(x, p_low, p_up, eh: NonlinearEhParams, sys: SystemParams) -> CsiHelpers:
    """Helpers for the joint power/split tables at gain x > 0."""
    x = np.asarray(x, dtype=float)
    p_low = np.asarray(p_low, dtype=float)
    p_up = np.asarray(p_up, dtype=float)
    if np.any(~(x > 0)):
        raise DomainError("x must be positive")
    if np.any(p_low < 0) or np.any(p_low > p_up) or np.any(p_up > sys.p_max):
        raise DomainError("need 0 <= p_low <= p_up <= p_max")
    return CsiHelpers(
        _out(f_fn(x, p_low, eh)),
        _out(f_fn(x, p_up, eh)),
        _out(big_g_fn(x, p_low, eh, sys)),
        _out(big_g_fn(x, p_up, eh, sys)),
        _out(big_z_fn(x, eh)),
        _out(big_gamma_fn(x, eh, sys)),
        _out(big_z_prime_fn(x, eh, sys)),
    )


def lagrangian_csir(h, p, rho, lam, eh, sys):
    """R(p, rho) + lam * Q(p, rho) without argument checks."""
    s = np.asarray(h, dtype=float) * p
    return rate_rx((1.0 - rho) * s, sys.sigma2) + lam * q_rx(rho * s, eh)


def dL_drho(h, p, rho, lam, eh: NonlinearEhParams, sys: SystemParams):
    """Derivative of R(p, rho) + lam*Q(p, rho) with respect to rho."""
    h, p, rho = _check_state(h, p, rho)
    if np.any(np.asarray(lam) < 0):
        raise DomainError("lambda must be nonnegative")
    s = h * p
    energy = lam * s * dq_rx(rho * s, eh)
    info = s / (LN2 * ((1.0 - rho) * s + sys.sigma2))
    return _out(energy - info)
