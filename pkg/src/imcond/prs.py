"""Nested predictive random sets represented by ranking functions.

A nested random set is the sublevel family ``S_t = {v : rank(v) <= t}``
indexed by the rank of a draw ``V`` from the reference auxiliary law.  All of
the bookkeeping reduces to the distribution of ``rank(V)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import optimize

from imcond.errors import ConfigurationError, ModelInconsistencyError
from imcond.numerics import Dist1D

__all__ = [
    "RankingPRS",
    "NestedSet",
    "default_1d",
    "default_for",
    "square_2d",
    "ellipse_elastic",
    "prs_singleton_plausibility",
    "minimal_rank",
    "conflict_probability",
    "elastic_envelope",
]

PRS_KINDS = ("default_1d", "square_2d", "ellipse_elastic")


@dataclass(frozen=True)
class RankingPRS:
    """Nested predictive random set ``{v : rank(v) <= rank(V)}``.

    ``rank_cdf(t)`` is ``P{rank(V) <= t}`` under the reference law; for
    empirical laws ``rank_draws`` holds the ranks of reference draws instead.
    Ties are broken toward inclusion, so the sets are closed.
    """

    kind: str
    rank: Callable[[np.ndarray], np.ndarray]
    rank_cdf: Callable[[np.ndarray], np.ndarray] | None = None
    rank_draws: np.ndarray | None = None
    sampler: Callable[[np.random.Generator, int], np.ndarray] | None = None
    elastic: bool = False

    def upper_tail(self, t):
        """P{rank(V) >= t}."""
        t = np.asarray(t, dtype=float)
        if self.rank_cdf is not None:
            # continuous rank laws: no atoms, so P{rank >= t} = 1 - P{rank <= t}
            return np.clip(1.0 - self.rank_cdf(t), 0.0, 1.0)
        if self.rank_draws is not None:
            srt = self.rank_draws
            return 1.0 - np.searchsorted(srt, t, side="left") / srt.size
        raise ConfigurationError("predictive random set has neither a rank CDF nor reference draws")

    def contains(self, v, threshold):
        return self.rank(np.asarray(v, dtype=float)) <= threshold

    def draw_threshold(self, rng: np.random.Generator, size=None):
        if self.sampler is None:
            raise ConfigurationError("predictive random set has no sampler")
        return self.rank(self.sampler(rng, size))


@dataclass(frozen=True)
class NestedSet:
    """One member ``{v : rank(v) <= threshold}`` of a nested family."""

    prs: RankingPRS
    threshold: float

    def __contains__(self, v):
        return bool(np.all(self.prs.contains(v, self.threshold)))


def _uniform_sampler(d):
    def sample(rng, size=None):
        shape = (d,) if size is None else (size, d)
        u = rng.random(shape)
        return u[..., 0] if d == 1 else u

    return sample


def default_1d() -> RankingPRS:
    """``S = {u : |u - 1/2| <= |U - 1/2|}``, ``U ~ Unif(0, 1)``."""
    return RankingPRS(
        kind="default_1d",
        rank=lambda u: np.abs(np.asarray(u, dtype=float) - 0.5),
        rank_cdf=lambda t: np.clip(2.0 * t, 0.0, 1.0),
        sampler=_uniform_sampler(1),
    )


def default_for(law: Dist1D) -> RankingPRS:
    """Default random set carried to the scale of ``law`` by its CDF."""
    return RankingPRS(
        kind="default_1d",
        rank=lambda v: np.abs(law.cdf(v) - 0.5),
        rank_cdf=lambda t: np.clip(2.0 * t, 0.0, 1.0),
        sampler=lambda rng, size=None: law.sample(rng, size),
    )


def square_2d() -> RankingPRS:
    """Random square ``max_i |u_i - 1/2| <= max_i |U_i - 1/2|`` on ``(0,1)^2``."""
    return RankingPRS(
        kind="square_2d",
        rank=lambda u: np.max(np.abs(np.asarray(u, dtype=float) - 0.5), axis=-1),
        rank_cdf=lambda t: np.clip(2.0 * t, 0.0, 1.0) ** 2,
        sampler=_uniform_sampler(2),
    )


def ellipse_elastic(draws, center=None, shape=None) -> RankingPRS:
    """Elliptical random set fitted to reference draws.

    The center and shape matrix default to the sample mean and covariance of
    ``draws``; the rank law is the empirical law of the draws' ranks.
    """
    draws = np.asarray(draws, dtype=float)
    c = draws.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    s = np.cov(draws, rowvar=False) if shape is None else np.asarray(shape, dtype=float)
    prec = np.linalg.inv(np.atleast_2d(s))

    def rank(v):
        d = np.asarray(v, dtype=float) - c
        return np.einsum("...i,ij,...j->...", d, prec, d)

    def sample(rng, size=None):
        idx = rng.integers(draws.shape[0], size=size)
        return draws[idx]

    return RankingPRS(
        kind="ellipse_elastic",
        rank=rank,
        rank_draws=np.sort(rank(draws)),
        sampler=sample,
        elastic=True,
    )


def prs_singleton_plausibility(prs: RankingPRS, v) -> float | np.ndarray:
    """P{S contains v} = P{rank(V) >= rank(v)}."""
    r = prs.rank(np.asarray(v, dtype=float))
    out = prs.upper_tail(r)
    return float(out) if np.ndim(out) == 0 else out


def minimal_rank(prs: RankingPRS, assoc, x) -> float:
    """Smallest rank threshold ``t0`` at which ``Theta_x(S_t)`` is nonempty.

    Uses ``assoc.min_rank`` when the association supplies one; otherwise
    minimises ``rank(u_{x,theta})`` over ``assoc.theta_range`` for a scalar
    parameter (grid search then bounded Brent refinement).
    """
    custom = getattr(assoc, "min_rank", None)
    if custom is not None:
        return float(custom(prs, x))
    rng = getattr(assoc, "theta_range", None)
    if rng is None:
        raise ConfigurationError("association provides neither min_rank nor theta_range for the emptiness test")
    lo, hi = rng
    grid = np.linspace(lo, hi, 401)
    vals = np.array([prs.rank(assoc.solve_u(x, th)) for th in grid])
    if not np.any(np.isfinite(vals)):
        raise ModelInconsistencyError("no parameter value is compatible with the data at any rank threshold")
    i = int(np.nanargmin(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(
        lambda th: float(prs.rank(assoc.solve_u(x, th))),
        bounds=(a, b),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(min(res.fun, vals[i]))


def conflict_probability(prs: RankingPRS, assoc, x) -> float:
    """P{Theta_x(S) is empty} = P{rank(V) < t0}."""
    t0 = minimal_rank(prs, assoc, x)
    return float(1.0 - prs.upper_tail(t0))


def elastic_envelope(prs: RankingPRS, assoc, x, v_star) -> NestedSet:
    """Stretch ``S(v*)`` to the smallest nested set meeting the data.

    Returns ``S(v*)`` itself when ``Theta_x(S(v*))`` is already nonempty.
    """
    t0 = minimal_rank(prs, assoc, x)
    if not np.isfinite(t0):
        raise ModelInconsistencyError("no threshold yields a nonempty parameter set")
    r = float(prs.rank(np.asarray(v_star, dtype=float)))
    return NestedSet(prs, max(r, t0))
