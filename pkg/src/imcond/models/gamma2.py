"""Shape and scale of a gamma sample, from the complete sufficient statistic.

``T1 = sum x`` satisfies ``T1 = theta2 * Gam(n theta1, 1)`` and
``T2 = mean(log x) - log(T1/n)`` has a law ``G_{theta1}`` free of the scale;
``G`` is estimated by simulation, once per shape value.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np
from scipy import optimize, special

from imcond.errors import DomainError, EstimationError, InvariantViolationError, ParameterDomainError
from imcond.numerics import RngStream, Tabulated, float_key

__all__ = ["Gamma2Model", "gamma2_stats", "gamma2_cpl", "gamma2_mle", "gamma2_fisher_info", "Gamma2Comparators"]

MIN_DRAWS = 10_000


def gamma2_stats(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2 or np.any(~(x > 0)):
        raise DomainError("need at least two positive observations")
    t1 = float(x.sum())
    t2 = float(np.mean(np.log(x)) - math.log(t1 / x.size))
    return t1, min(t2, 0.0)


def _t2_draws(shape, n, draws, rng):
    u = rng.gamma(shape, size=(draws, n))
    return np.mean(np.log(u), axis=1) - np.log(np.mean(u, axis=1))


class Gamma2Model:
    """Square-random-set conditional IM for ``(shape, scale)``.

    Data for :meth:`cpl` are the statistics ``(t1, t2)``.  Every shape value
    gets its own random stream ``stream.child(float_key(shape))``, so results
    do not depend on the order in which a grid is visited.
    """

    prs_kind = "square_2d"
    local = False

    def __init__(self, n: int, stream: RngStream, mc_draws: int = MIN_DRAWS, cache_size: int = 512):
        if mc_draws < MIN_DRAWS:
            raise ParameterDomainError(f"mc_draws must be at least {MIN_DRAWS}")
        if n < 2:
            raise ParameterDomainError("n must be at least 2")
        self.n = int(n)
        self.stream = stream
        self.mc_draws = int(mc_draws)
        self._g = OrderedDict()
        self._cache_size = cache_size

    def t2_sample(self, shape: float) -> np.ndarray:
        """Sorted simulated ``T2`` values under ``shape``."""
        key = float(shape)
        out = self._g.get(key)
        if out is None:
            rng = self.stream.child(float_key(key)).generator()
            out = np.sort(_t2_draws(key, self.n, self.mc_draws, rng))
            self._g[key] = out
            if len(self._g) > self._cache_size:
                self._g.popitem(last=False)
        return out

    def g_cdf(self, shape, t2):
        s = self.t2_sample(shape)
        return np.searchsorted(s, t2, side="right") / s.size

    def cpl(self, t, theta) -> float:
        t1, t2 = float(t[0]), float(t[1])
        if t2 > 0:
            raise InvariantViolationError(f"t2 must be nonpositive, got {t2!r}")
        a, b = float(theta[0]), float(theta[1])
        if not (a > 0 and b > 0):
            raise ParameterDomainError("shape and scale must be positive")
        f = special.gammainc(self.n * a, t1 / b)
        g = self.g_cdf(a, t2)
        return float(1.0 - max(abs(2 * f - 1), abs(2 * g - 1)) ** 2)

    def cpl_many(self, t, thetas) -> np.ndarray:
        th = np.asarray(thetas, dtype=float)
        t1, t2 = float(t[0]), float(t[1])
        if t2 > 0:
            raise InvariantViolationError(f"t2 must be nonpositive, got {t2!r}")
        out = np.empty(th.shape[0])
        shapes = th[:, 0]
        for a in np.unique(shapes):
            sel = shapes == a
            f = special.gammainc(self.n * a, t1 / th[sel, 1])
            g = self.g_cdf(a, t2)
            out[sel] = 1.0 - np.maximum(np.abs(2 * f - 1), abs(2 * g - 1)) ** 2
        return out


def gamma2_cpl(t1, t2, theta1, theta2, n, stream: RngStream, mc_draws: int = MIN_DRAWS) -> float:
    return Gamma2Model(n, stream, mc_draws).cpl((t1, t2), (theta1, theta2))


def _loglik(a, b, t1, slog, n):
    return (a - 1.0) * slog - t1 / b - n * a * np.log(b) - n * special.gammaln(a)


def gamma2_mle(t1, t2, n):
    """``log a - digamma(a) = -t2`` and ``b = t1 / (n a)``."""
    if not t2 < 0:
        raise EstimationError("the shape MLE is infinite when t2 = 0")
    f = lambda la: la - special.digamma(math.exp(la)) + t2
    a = math.exp(optimize.brentq(f, -30.0, 30.0, xtol=1e-14))
    return a, t1 / (n * a)


def _observed_info(a, b, t1, n):
    return np.array([[n * special.polygamma(1, a), n / b], [n / b, 2 * t1 / b**3 - n * a / b**2]])


def gamma2_fisher_info(a, b, n, rel_step: float = 1e-4):
    """Expected information by a central-difference Hessian of the
    log-likelihood at the expected statistics (vectorised over a, b)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    et1 = n * a * b
    eslog = n * (special.digamma(a) + np.log(b))
    ha, hb = rel_step * a, rel_step * b

    def ll(da, db):
        return _loglik(a + da, b + db, et1, eslog, n)

    f0 = ll(0, 0)
    iaa = -(ll(ha, 0) - 2 * f0 + ll(-ha, 0)) / ha**2
    ibb = -(ll(0, hb) - 2 * f0 + ll(0, -hb)) / hb**2
    iab = -(ll(ha, hb) - ll(ha, -hb) - ll(-ha, hb) + ll(-ha, -hb)) / (4 * ha * hb)
    return iaa, iab, ibb


class Gamma2Comparators:
    """Wald region at the MLE and the Jeffreys-prior posterior on a log grid."""

    def __init__(self, x):
        self.x = np.asarray(x, dtype=float)
        self.n = self.x.size
        self.t1, self.t2 = gamma2_stats(self.x)
        self.slog = float(np.sum(np.log(self.x)))
        self.mle = gamma2_mle(self.t1, self.t2, self.n)
        self.info = _observed_info(*self.mle, self.t1, self.n)

    def wald_contains(self, theta, alpha):
        d = np.asarray(theta, dtype=float) - np.asarray(self.mle)
        q = np.einsum("...i,ij,...j->...", d, self.info, d)
        return q <= -2.0 * math.log(alpha)

    def wald_intervals(self, alpha):
        cov = np.linalg.inv(self.info)
        half = special.ndtri(1 - alpha / 2) * np.sqrt(np.diag(cov))
        return [(self.mle[i] - half[i], self.mle[i] + half[i]) for i in range(2)]

    def posterior_grid(self, points: int = 301, span: float = 8.0):
        """Posterior of ``(log a, log b)`` on a square grid around the MLE."""
        cov = np.linalg.inv(self.info)
        la0, lb0 = math.log(self.mle[0]), math.log(self.mle[1])
        sa = math.sqrt(cov[0, 0]) / self.mle[0]
        sb = math.sqrt(cov[1, 1]) / self.mle[1]
        ga = np.linspace(la0 - span * sa, la0 + span * sa, points)
        gb = np.linspace(lb0 - span * sb, lb0 + span * sb, points)
        A, B = np.meshgrid(np.exp(ga), np.exp(gb), indexing="ij")
        iaa, iab, ibb = gamma2_fisher_info(A, B, self.n)
        det = iaa * ibb - iab * iab
        lp = _loglik(A, B, self.t1, self.slog, self.n) + 0.5 * np.log(det) + np.log(A) + np.log(B)
        w = np.exp(lp - lp.max())
        return ga, gb, w / w.sum()

    def posterior_sample(self, rng, size=5000, points: int = 301):
        ga, gb, w = self.posterior_grid(points)
        idx = rng.choice(w.size, size=size, p=w.ravel())
        i, j = np.unravel_index(idx, w.shape)
        da, db = ga[1] - ga[0], gb[1] - gb[0]
        la = ga[i] + (rng.random(size) - 0.5) * da
        lb = gb[j] + (rng.random(size) - 0.5) * db
        return np.column_stack([np.exp(la), np.exp(lb)])

    def bayes_intervals(self, alpha, points: int = 301):
        ga, gb, w = self.posterior_grid(points)
        out = []
        for grid, marg in ((ga, w.sum(axis=1)), (gb, w.sum(axis=0))):
            law = Tabulated(grid, np.log(np.maximum(marg, 1e-300)))
            q = law.quantile(np.array([alpha / 2, 1 - alpha / 2]))
            out.append((math.exp(q[0]), math.exp(q[1])))
        return out
