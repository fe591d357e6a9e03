"""Correlation of a standard bivariate normal sample (local conditional IM).

With ``x1 = sum (a+b)^2 / 2`` and ``x2 = sum (a-b)^2 / 2`` over the pairs
``(a, b)``: ``x1 = (1+theta) U1``, ``x2 = (1-theta) U2``, ``U_i ~ ChiSq(n)``.
Anchored at ``theta0`` the feature ``(1+theta0) log u1 + (1-theta0) log u2``
is locally free of theta, and ``T = log(x1/x2) = z(theta) + V``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import optimize, special

from imcond.engine import ConditionalModel
from imcond.errors import DomainError, EstimationError, ParameterDomainError
from imcond.finder import ScaleFamily
from imcond.numerics import Tabulated

__all__ = [
    "BVNModel",
    "bvn_reduce",
    "bvn_cpl",
    "bvn_family",
    "bvn_loglik",
    "bvn_mle",
    "bvn_fisher_info",
    "bvn_log_density",
    "z",
]


def z(theta):
    theta = np.asarray(theta, dtype=float)
    out = np.log1p(theta) - np.log1p(-theta)
    return out if out.ndim else float(out)


def bvn_reduce(pairs):
    """Raw ``(n, 2)`` pairs to ``(x1, x2, n)``."""
    p = np.asarray(pairs, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 1:
        raise DomainError("expected an (n, 2) array of pairs")
    s, d = p[:, 0] + p[:, 1], p[:, 0] - p[:, 1]
    return 0.5 * float(s @ s), 0.5 * float(d @ d), p.shape[0]


def bvn_family() -> ScaleFamily:
    return ScaleFamily(
        g=lambda th: np.array([1.0 + th, 1.0 - th]),
        dlog_g=lambda th: np.array([1.0 / (1.0 + th), -1.0 / (1.0 - th)]),
    )


def bvn_loglik(theta, x1, x2, n):
    th = np.asarray(theta, dtype=float)
    return -0.5 * n * (np.log1p(th) + np.log1p(-th)) - 0.5 * x1 / (1.0 + th) - 0.5 * x2 / (1.0 - th)


def _logcosh(x):
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def bvn_log_density(v, h0, theta0, n):
    """Unnormalised log-density of ``V`` given the anchored feature ``h0``."""
    v = np.asarray(v, dtype=float)
    e = np.exp(np.minimum(_logcosh(v / 2.0) + 0.5 * (h0 - theta0 * v), 700.0))
    return -0.5 * n * theta0 * v - e


def _mode(h0, theta0, n):
    """Mode of the (log-concave) conditional density and the curvature there.

    Safeguarded Newton on the derivative, which is strictly decreasing.
    """

    def parts(v):
        e = math.exp(min(float(_logcosh(v / 2.0)) + 0.5 * (h0 - theta0 * v), 700.0))
        th = math.tanh(v / 2.0)
        g = -0.5 * n * theta0 - 0.5 * e * (th - theta0)
        dg = -e * (0.25 * (th - theta0) ** 2 + 0.25 * (1.0 - th * th))
        return g, dg

    lo, hi, step = -1.0, 1.0, 1.0
    while parts(lo)[0] <= 0:
        step *= 2.0
        lo -= step
    step = 1.0
    while parts(hi)[0] >= 0:
        step *= 2.0
        hi += step
    v = 0.5 * (lo + hi)
    for _ in range(200):
        g, dg = parts(v)
        if g > 0:
            lo = v
        else:
            hi = v
        nxt = v - g / dg if dg < 0 else 0.5 * (lo + hi)
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - v) < 1e-12 * (1.0 + abs(v)):
            v = nxt
            break
        v = nxt
    return v, -parts(v)[1]


def _check_theta(theta):
    if not -1.0 < theta < 1.0:
        raise ParameterDomainError(f"correlation must lie in (-1, 1), got {theta!r}")


class BVNModel(ConditionalModel):
    """Local conditional IM for the correlation; data are ``(x1, x2)`` sums."""

    local = True
    theta_bounds = (-1.0, 1.0)

    def __init__(self, n: int):
        super().__init__()
        if n < 1:
            raise ParameterDomainError("n must be positive")
        self.n = int(n)

    @staticmethod
    def _check(x):
        x1, x2 = float(x[0]), float(x[1])
        if not (x1 > 0 and x2 > 0):
            raise DomainError("sums of squares must be positive")
        return x1, x2

    def statistic(self, x):
        x1, x2 = self._check(x)
        return math.log(x1 / x2)

    def feature(self, x, theta0=None):
        x1, x2 = self._check(x)
        _check_theta(theta0)
        return (1 + theta0) * math.log(x1 / (1 + theta0)) + (1 - theta0) * math.log(x2 / (1 - theta0))

    def conditional_law(self, h, theta0=None):
        h, n = float(h), self.n

        def logf(v):
            return bvn_log_density(v, h, theta0, n)

        m, curv = _mode(h, theta0, n)
        sd = 1.0 / math.sqrt(curv)
        return Tabulated.from_logpdf(logf, m - 10 * sd, m + 10 * sd)

    def reduced_map(self, v, theta):
        return z(theta) + v

    def solve_aux(self, t, theta):
        return t - z(theta)

    def solve_theta(self, t, v):
        return math.tanh((t - v) / 2.0)

    def to_unbounded(self, theta):
        return math.atanh(theta)

    def from_unbounded(self, phi):
        return math.tanh(phi)

    def interval_hint(self, x):
        return self.statistic(x) / 2.0, 1.0 / math.sqrt(self.n)

    def cpl(self, x, theta):
        _check_theta(theta)
        return super().cpl(x, theta)

    # comparators

    def mle(self, x):
        return bvn_mle(*self._check(x), self.n)

    def mle_interval(self, x, alpha):
        x1, x2 = self._check(x)
        th = bvn_mle(x1, x2, self.n)
        n = self.n
        info = -(0.5 * n / (1 + th) ** 2 + 0.5 * n / (1 - th) ** 2 - x1 / (1 + th) ** 3 - x2 / (1 - th) ** 3)
        if not info > 0:
            raise EstimationError("observed information is not positive at the estimate")
        half = special.ndtri(1 - alpha / 2) / math.sqrt(info)
        return th - half, th + half

    def posterior(self, x, points: int = 4001):
        """Jeffreys-prior posterior of ``zeta = atanh(theta)``."""
        x1, x2 = self._check(x)
        n = self.n

        def logpost(zeta):
            th = np.tanh(zeta)
            info = bvn_fisher_info(th, n)
            return bvn_loglik(th, x1, x2, n) + 0.5 * np.log(info) + np.log1p(-th * th)

        c = 0.5 * math.log(x1 / x2)
        s = 1.0 / math.sqrt(n)
        return Tabulated.from_logpdf(logpost, c - 10 * s, c + 10 * s, points=points)

    def bayes_interval(self, x, alpha):
        q = self.posterior(x).quantile(np.array([alpha / 2, 1 - alpha / 2]))
        return math.tanh(q[0]), math.tanh(q[1])


def bvn_fisher_info(theta, n, rel_step: float = 1e-4):
    """Expected information: minus the second derivative of the log-likelihood
    at the expected sums ``(n(1+theta), n(1-theta))``, by central differences."""
    th = np.asarray(theta, dtype=float)
    d = rel_step * (1.0 - np.abs(th))
    e1, e2 = n * (1.0 + th), n * (1.0 - th)
    f0 = bvn_loglik(th, e1, e2, n)
    fp = bvn_loglik(th + d, e1, e2, n)
    fm = bvn_loglik(th - d, e1, e2, n)
    return -(fp - 2.0 * f0 + fm) / (d * d)


def bvn_mle(x1, x2, n) -> float:
    """Maximiser of the correlation log-likelihood (bounded search on atanh scale)."""
    f = lambda zeta: -float(bvn_loglik(math.tanh(zeta), x1, x2, n))
    grid = np.linspace(-8.0, 8.0, 161)
    vals = np.array([f(g) for g in grid])
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(f, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
    if not res.success:
        raise EstimationError("correlation MLE search failed")
    return math.tanh(res.x)


def bvn_cpl(x1: float, x2: float, n: int, theta: float) -> float:
    """``1 - |1 - 2 F_{h0, theta}(T - z(theta))|`` with the model anchored at theta."""
    return BVNModel(n).cpl((x1, x2), theta)
