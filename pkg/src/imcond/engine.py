"""Associate / predict / combine: baseline and conditional inferential models."""

from __future__ import annotations

import abc
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
from scipy import optimize

from imcond.errors import ConfigurationError, DomainError, UnsupportedAssertionError
from imcond.numerics import Dist1D
from imcond.prs import (
    PRS_KINDS,
    RankingPRS,
    default_for,
    minimal_rank,
    prs_singleton_plausibility,
)

__all__ = [
    "Association",
    "Assertion",
    "ConditionalModel",
    "Region",
    "pl_singleton",
    "cpl_singleton",
    "cbel",
    "cpl",
    "plausibility_interval",
    "plausibility_region",
]


@dataclass(frozen=True)
class Association:
    """Baseline association ``x = forward(theta, u)``, ``u ~ aux law``.

    ``solve_u(x, theta)`` returns the unique auxiliary value consistent with
    ``(x, theta)``.  ``theta_range`` bounds a scalar parameter for numeric
    emptiness tests; ``min_rank`` may supply the exact smallest rank.
    """

    forward: Callable[[Any, Any], Any]
    solve_u: Callable[[Any, Any], np.ndarray]
    aux_sampler: Callable[[np.random.Generator, int | None], np.ndarray]
    dims: tuple[int, int, int]
    theta_range: tuple[float, float] | None = None
    min_rank: Callable[[RankingPRS, Any], float] | None = None


@dataclass(frozen=True)
class Assertion:
    """A hypothesis about a scalar parameter.

    kinds: ``singleton`` ({theta = value}), ``lower`` ({theta <= value}),
    ``upper`` ({theta >= value}), ``region`` (grid points satisfying
    ``predicate``), ``full`` and ``empty``.
    """

    kind: str
    value: float | None = None
    predicate: Callable[[np.ndarray], np.ndarray] | None = None
    grid: np.ndarray | None = None

    @classmethod
    def singleton(cls, value):
        return cls("singleton", float(value))

    @classmethod
    def lower(cls, value):
        return cls("lower", float(value))

    @classmethod
    def upper(cls, value):
        return cls("upper", float(value))

    @classmethod
    def region(cls, predicate, grid):
        return cls("region", predicate=predicate, grid=np.asarray(grid, dtype=float))

    @classmethod
    def full(cls):
        return cls("full")

    @classmethod
    def empty(cls):
        return cls("empty")

    def complement(self) -> "Assertion":
        if self.kind == "full":
            return Assertion.empty()
        if self.kind == "empty":
            return Assertion.full()
        if self.kind == "lower":
            return Assertion.upper(self.value)
        if self.kind == "upper":
            return Assertion.lower(self.value)
        if self.kind == "region":
            pred = self.predicate
            return Assertion.region(lambda th: ~np.asarray(pred(th), dtype=bool), self.grid)
        raise UnsupportedAssertionError("the complement of a singleton is not representable as an Assertion")

    def contains(self, theta) -> np.ndarray:
        th = np.asarray(theta, dtype=float)
        if self.kind == "full":
            return np.ones(th.shape, dtype=bool)
        if self.kind == "empty":
            return np.zeros(th.shape, dtype=bool)
        if self.kind == "singleton":
            return th == self.value
        if self.kind == "lower":
            return th <= self.value
        if self.kind == "upper":
            return th >= self.value
        return np.asarray(self.predicate(th), dtype=bool)


class ConditionalModel(abc.ABC):
    """Reduced association ``T(x) = b(V_T, theta)`` with ``V_T`` drawn from
    its conditional law given the observed feature ``H(x)``.

    Local models anchor the feature at ``theta0`` and are evaluated with
    ``theta0`` equal to the asserted value.
    """

    local: bool = False
    prs_kind: str = "default_1d"
    theta_bounds: tuple[float, float] = (-math.inf, math.inf)
    monotone: bool = True
    cache_size: int = 256

    def __init__(self):
        self._laws: OrderedDict = OrderedDict()

    @abc.abstractmethod
    def statistic(self, x):
        """T(x)."""

    @abc.abstractmethod
    def feature(self, x, theta0=None):
        """H(x), or H_{theta0}(x) for local models."""

    @abc.abstractmethod
    def conditional_law(self, h, theta0=None) -> Dist1D:
        """Law of V_T given eta(U) = h."""

    @abc.abstractmethod
    def reduced_map(self, v, theta):
        """b(v, theta)."""

    @abc.abstractmethod
    def solve_aux(self, t, theta):
        """The v with t = b(v, theta)."""

    def solve_theta(self, t, v):
        """The theta with t = b(v, theta) (scalar monotone models)."""
        raise NotImplementedError

    # local models search for interval endpoints on an unbounded scale
    def to_unbounded(self, theta):
        return theta

    def from_unbounded(self, phi):
        return phi

    def interval_hint(self, x) -> tuple[float, float]:
        """(center, scale) on the unbounded scale for endpoint searches."""
        raise NotImplementedError

    def law_for(self, x, theta0=None) -> Dist1D:
        h = self.feature(x, theta0 if self.local else None)
        key = (np.asarray(h, dtype=float).tobytes(), None if not self.local else float(theta0))
        law = self._laws.get(key)
        if law is None:
            law = self.conditional_law(h, theta0 if self.local else None)
            self._laws[key] = law
            if len(self._laws) > self.cache_size:
                self._laws.popitem(last=False)
        else:
            self._laws.move_to_end(key)
        return law

    def cpl(self, x, theta) -> float:
        law = self.law_for(x, theta)
        v = self.solve_aux(self.statistic(x), theta)
        return float(prs_singleton_plausibility(default_for(law), v))

    def cpl_many(self, x, thetas) -> np.ndarray:
        return np.array([self.cpl(x, th) for th in thetas])


def _check_prs(model: ConditionalModel, prs):
    if prs is None:
        return
    kind = prs if isinstance(prs, str) else getattr(prs, "kind", None)
    if kind not in PRS_KINDS:
        raise ConfigurationError(f"unknown predictive random set {kind!r}")
    if kind != model.prs_kind:
        raise ConfigurationError(f"{type(model).__name__} is built on the {model.prs_kind} random set, not {kind}")


def pl_singleton(assoc: Association, prs: RankingPRS, x, theta, conflict: str = "normalize") -> float:
    """Baseline plausibility of ``{theta}``.

    ``conflict="normalize"`` conditions on ``Theta_x(S)`` being nonempty;
    ``"elastic"`` stretches a conflicting set to the smallest nonempty one.
    """
    r = float(prs.rank(np.asarray(assoc.solve_u(x, theta), dtype=float)))
    t0 = minimal_rank(prs, assoc, x)
    if conflict == "normalize":
        denom = float(prs.upper_tail(t0))
        return min(1.0, float(prs.upper_tail(r)) / denom) if denom > 0 else 1.0
    if conflict == "elastic":
        return 1.0 if r <= t0 else float(prs.upper_tail(r))
    raise ConfigurationError(f"unknown conflict treatment {conflict!r}")


def cpl_singleton(model: ConditionalModel, prs, x, theta) -> float:
    """Conditional plausibility of the singleton assertion ``{theta}``."""
    _check_prs(model, prs)
    return model.cpl(x, theta)


def cpl(model: ConditionalModel, prs, x, assertion: Assertion) -> float:
    """Conditional plausibility ``1 - cbel(A^c)``."""
    if assertion.kind == "singleton":
        return cpl_singleton(model, prs, x, assertion.value)
    return 1.0 - cbel(model, prs, x, assertion.complement())


def cbel(model: ConditionalModel, prs, x, assertion: Assertion) -> float:
    """Conditional belief ``P{Theta_T(S) subset A | Theta_T(S) nonempty}``.

    Scalar, non-local models with the default random set.  With rank
    ``rho(theta) = |F(v_theta) - 1/2|``, the random parameter set is
    ``{theta : rho(theta) <= R}`` with ``R ~ Unif(0, 1/2)``, so the belief is
    ``P{t0 <= R < inf_{A^c} rho} / P{R >= t0}``.
    """
    _check_prs(model, prs)
    if model.local:
        raise UnsupportedAssertionError("local conditional IMs are only calibrated for singleton assertions")
    if model.prs_kind != "default_1d":
        raise UnsupportedAssertionError("belief for general assertions needs a scalar model")
    t = model.statistic(x)
    law = model.law_for(x)
    rank_prs = default_for(law)

    def rho(theta):
        return float(rank_prs.rank(model.solve_aux(t, theta)))

    theta_hat = float(model.solve_theta(t, law.quantile(0.5)))
    lo_b, hi_b = model.theta_bounds
    t0 = 0.0 if lo_b <= theta_hat <= hi_b else min(rho(lo_b), rho(hi_b))
    kind = assertion.kind
    if kind == "full":
        inf_c = math.inf
    elif kind in ("empty", "singleton"):
        inf_c = t0
    elif kind in ("lower", "upper"):
        if not model.monotone:
            raise UnsupportedAssertionError("interval assertions need b monotone in theta")
        s = assertion.value
        if kind == "lower":
            inf_c = t0 if theta_hat > s else (rho(s) if s < hi_b else math.inf)
        else:
            inf_c = t0 if theta_hat < s else (rho(s) if s > lo_b else math.inf)
    elif kind == "region":
        grid = assertion.grid
        outside = grid[~assertion.contains(grid)]
        inf_c = min((rho(th) for th in outside), default=math.inf)
    else:
        raise UnsupportedAssertionError(f"unknown assertion kind {kind!r}")
    denom = float(rank_prs.upper_tail(t0))
    num = float(rank_prs.upper_tail(t0) - rank_prs.upper_tail(inf_c)) if math.isfinite(inf_c) else denom
    return max(0.0, min(1.0, num / denom))


def plausibility_interval(model: ConditionalModel, prs, x, alpha: float) -> tuple[float, float] | None:
    """``{theta : cpl(theta) > alpha}`` for a scalar parameter.

    Non-local models use quantiles of the conditional law; local models
    locate the two crossings of ``cpl - alpha`` by bracketing and Brent's
    method on the model's unbounded scale.  Returns ``None`` (empty) for
    ``alpha >= 1``.
    """
    _check_prs(model, prs)
    if alpha >= 1:
        return None
    if alpha <= 0:
        return model.theta_bounds
    t = model.statistic(x)
    if not model.local:
        law = model.law_for(x)
        q = law.quantile(np.array([alpha / 2, 1 - alpha / 2]))
        ends = sorted(float(model.solve_theta(t, qi)) for qi in q)
        return ends[0], ends[1]
    return _local_interval(model, x, alpha)


def _local_interval(model: ConditionalModel, x, alpha, points: int = 33, span: float = 8.0):
    center, scale = model.interval_hint(x)

    def g(phi):
        return model.cpl(x, model.from_unbounded(phi)) - alpha

    ks = np.linspace(-span, span, points)
    for _ in range(8):
        phis = center + ks * scale
        vals = np.array([g(p) for p in phis])
        above = np.flatnonzero(vals > 0)
        if above.size == 0:
            scale /= 4.0
            continue
        i, j = above[0], above[-1]
        if i == 0 or j == points - 1:
            scale *= 2.0
            continue
        lo = optimize.brentq(g, phis[i - 1], phis[i], xtol=1e-12)
        hi = optimize.brentq(g, phis[j], phis[j + 1], xtol=1e-12)
        return float(model.from_unbounded(lo)), float(model.from_unbounded(hi))
    raise DomainError("could not bracket the plausibility interval")


@dataclass
class Region:
    """Grid evaluation of a plausibility function and its level set."""

    points: np.ndarray
    cpl: np.ndarray
    alpha: float
    inside: np.ndarray = field(init=False)

    def __post_init__(self):
        self.inside = self.cpl > self.alpha

    def selected(self):
        return self.points[self.inside], self.cpl[self.inside]


def plausibility_region(model, prs, x, alpha: float, grid) -> Region:
    """Evaluate ``cpl`` on every grid point and keep those with ``cpl > alpha``.

    For local models each point is evaluated with the model anchored at that
    point.
    """
    _check_prs(model, prs)
    pts = np.asarray(grid, dtype=float)
    vals = np.asarray(model.cpl_many(x, pts), dtype=float)
    return Region(pts, vals, float(alpha))
