"""Two exponential samples with reciprocal means (Fisher's Nile problem).

Data model: ``X_1j`` has mean ``theta`` and ``X_2j`` has mean ``1/theta``,
so that ``S(X_1) = theta U_1`` and ``S(X_2) = U_2 / theta`` with
``U_i ~ Gam(n, 1)``.  Then ``T = sqrt(S_1/S_2) = theta V`` (the MLE) and
``H = sqrt(S_1 S_2)`` is ancillary.  Given ``H = h``, ``log V`` has density
``exp(-2h cosh s) / (2 K0(2h))``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from imcond.engine import ConditionalModel
from imcond.errors import DomainError
from imcond.finder import ScaleFamily
from imcond.numerics import Tabulated, bessel_k0

__all__ = ["NileModel", "nile_cpl", "nile_naive_cpl", "nile_density", "nile_family", "nile_naive_interval"]


def nile_family() -> ScaleFamily:
    """``(S_1, S_2) = (theta U_1, U_2/theta)``."""
    return ScaleFamily(
        g=lambda th: np.array([th, 1.0 / th]),
        dlog_g=lambda th: np.array([1.0 / th, -1.0 / th]),
    )


def nile_density(v, h):
    """Conditional density of ``V = sqrt(U_1/U_2)`` given ``sqrt(U_1 U_2) = h``."""
    v = np.asarray(v, dtype=float)
    return np.exp(-h * (1.0 / v + v)) / (2.0 * v * bessel_k0(2.0 * h))


def _sums(x):
    x1, x2 = (np.asarray(a, dtype=float) for a in x)
    s1, s2 = float(np.sum(x1)), float(np.sum(x2))
    if not (s1 > 0 and s2 > 0):
        raise DomainError("both samples must have positive sums")
    return s1, s2


class NileModel(ConditionalModel):
    """Conditional IM for the Nile problem.

    Data are ``(x1, x2)`` (two samples) or a pair of sums ``(s1, s2)``.  The
    auxiliary variable is carried on the log scale, ``s = log V``.
    """

    theta_bounds = (0.0, math.inf)

    def statistic(self, x):
        s1, s2 = _sums(x)
        return math.sqrt(s1 / s2)

    def feature(self, x, theta0=None):
        s1, s2 = _sums(x)
        return math.sqrt(s1 * s2)

    def conditional_law(self, h, theta0=None):
        h = float(h)
        w = 8.0 / math.sqrt(2.0 * h) if h > 0.5 else 8.0
        return Tabulated.from_logpdf(lambda s: -2.0 * h * np.cosh(s), -w, w)

    def reduced_map(self, v, theta):
        return theta * math.exp(v)

    def solve_aux(self, t, theta):
        with np.errstate(divide="ignore"):
            return float(np.log(t) - np.log(theta))

    def solve_theta(self, t, v):
        return t * math.exp(-v)


def nile_cpl(x1, x2, theta: float) -> float:
    """``1 - |1 - 2 F_h(T/theta)|``."""
    return NileModel().cpl((x1, x2), theta)


def _naive_cdf(v, n):
    v = np.asarray(v, dtype=float)
    return special.betainc(n, n, v * v / (1.0 + v * v))


def nile_naive_cpl(t: float, n: int, theta):
    """Plausibility from the marginal law of ``V`` alone, ignoring ``h``.

    ``V^2/(1+V^2) = U_1/(U_1+U_2) ~ Beta(n, n)``.
    """
    return 1.0 - np.abs(1.0 - 2.0 * _naive_cdf(t / np.asarray(theta, dtype=float), n))


def nile_naive_interval(t: float, n: int, alpha: float):
    b = special.betaincinv(n, n, np.array([alpha / 2, 1 - alpha / 2]))
    v = np.sqrt(b / (1.0 - b))
    return float(t / v[1]), float(t / v[0])
