"""Location of a Student-t sample with known degrees of freedom."""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from imcond.engine import ConditionalModel
from imcond.errors import DomainError, EstimationError, ParameterDomainError
from imcond.numerics import Tabulated

__all__ = ["StudentTModel", "t_mle", "t_loglik", "student_t_cpl"]


def t_loglik(x, nu, theta):
    r = np.asarray(x, dtype=float)[..., None] - np.asarray(theta, dtype=float)
    return -0.5 * (nu + 1.0) * np.sum(np.log1p(r * r / nu), axis=-2)


def t_mle(x, nu: float, tol: float = 1e-13, max_iter: int = 500) -> float:
    """Maximum-likelihood location of a t sample.

    The likelihood can be multimodal, so iteratively reweighted means are run
    from every observation and the median at once; the best local maximum is
    then refined by Newton steps on the score.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise DomainError("need a 1-D sample of size >= 2")
    if not np.all(np.isfinite(x)):
        raise DomainError("sample contains non-finite values")
    # centre first so the result is exactly shift-equivariant up to rounding
    c = float(np.median(x))
    y = x - c
    th = np.concatenate([[0.0], y])
    for _ in range(max_iter):
        r = y[:, None] - th
        w = 1.0 / (nu + r * r)
        new = (w * y[:, None]).sum(axis=0) / w.sum(axis=0)
        done = np.max(np.abs(new - th)) < 1e-10 * (1.0 + np.max(np.abs(th)))
        th = new
        if done:
            break
    ll = t_loglik(y, nu, th)
    best = float(th[int(np.argmax(ll))])
    for _ in range(100):
        r = y - best
        d = nu + r * r
        score = np.sum(r / d)
        hess = np.sum((r * r - nu) / (d * d))
        if hess >= 0:
            break
        step = score / hess
        best -= step
        if abs(step) < tol * (1.0 + abs(best)):
            break
    r = y - best
    if abs(np.sum(r / (nu + r * r))) > 1e-8 * (1.0 + np.sum(1.0 / np.sqrt(nu + r * r))):
        raise EstimationError("t location estimate did not converge")
    return best + c


class StudentTModel(ConditionalModel):
    """``T(X) = theta + V``, ``V | (X - T(X)) = h`` with density
    proportional to ``prod_i (nu + (v + h_i)^2)^(-(nu+1)/2)``.

    ``estimator="mle"`` uses the maximum-likelihood location; ``"first"``
    uses ``T(x) = x_1``, a cruder but equally valid choice.
    """

    def __init__(self, nu: float, estimator: str = "mle"):
        super().__init__()
        if not nu > 0:
            raise ParameterDomainError("degrees of freedom must be positive")
        if estimator not in ("mle", "first"):
            raise ParameterDomainError(f"unknown estimator {estimator!r}")
        self.nu = float(nu)
        self.estimator = estimator

    def statistic(self, x):
        x = np.asarray(x, dtype=float)
        return float(x[0]) if self.estimator == "first" else t_mle(x, self.nu)

    def feature(self, x, theta0=None):
        x = np.asarray(x, dtype=float)
        return x - self.statistic(x)

    def conditional_law(self, h, theta0=None):
        h = np.asarray(h, dtype=float)
        nu = self.nu
        scale = math.sqrt(nu / max(nu - 2.0, 0.5)) / math.sqrt(h.size)
        centre = -float(np.median(h))

        def logf(v):
            r = np.asarray(v, dtype=float)[..., None] + h
            return -0.5 * (nu + 1.0) * np.sum(np.log(nu + r * r), axis=-1)

        return Tabulated.from_logpdf(logf, centre - 8 * scale, centre + 8 * scale)

    def reduced_map(self, v, theta):
        return theta + v

    def solve_aux(self, t, theta):
        return t - theta

    def solve_theta(self, t, v):
        return t - v

    def mle_interval(self, x, alpha):
        """Wald interval from the observed information at the MLE."""
        t = t_mle(x, self.nu)
        r = np.asarray(x, dtype=float) - t
        d = self.nu + r * r
        info = (self.nu + 1.0) * np.sum((self.nu - r * r) / (d * d))
        if not info > 0:
            raise EstimationError("observed information is not positive at the estimate")
        half = special.ndtri(1 - alpha / 2) / math.sqrt(info)
        return t - half, t + half

    def posterior(self, x):
        """Flat-prior posterior of theta as a tabulated law."""
        x = np.asarray(x, dtype=float)
        t = t_mle(x, self.nu)
        scale = math.sqrt(self.nu / max(self.nu - 2.0, 0.5)) / math.sqrt(x.size)
        return Tabulated.from_logpdf(lambda th: t_loglik(x, self.nu, th), t - 8 * scale, t + 8 * scale)

    def bayes_interval(self, x, alpha):
        q = self.posterior(x).quantile(np.array([alpha / 2, 1 - alpha / 2]))
        return float(q[0]), float(q[1])


def student_t_cpl(x, nu: float, theta: float) -> float:
    """Conditional plausibility of ``{theta}`` for a t-location sample."""
    return StudentTModel(nu).cpl(x, theta)
