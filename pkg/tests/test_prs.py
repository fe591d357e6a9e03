import numpy as np
import pytest
from scipy import stats

from imcond.engine import Association
from imcond.errors import ConfigurationError, ModelInconsistencyError
from imcond.numerics import Gamma
from imcond.prs import (
    NestedSet,
    RankingPRS,
    conflict_probability,
    default_1d,
    default_for,
    elastic_envelope,
    ellipse_elastic,
    minimal_rank,
    prs_singleton_plausibility,
    square_2d,
)
from imcond.validate import dkw_slack, ks_critical


def test_default_plausibility_is_uniform(rng):
    prs = default_1d()
    pl = prs_singleton_plausibility(prs, rng.random(5000))
    assert stats.kstest(pl, "uniform").statistic < ks_critical(5000)


def test_default_for_law_uses_cdf_scale(rng):
    law = Gamma(3.0)
    prs = default_for(law)
    assert prs_singleton_plausibility(prs, law.quantile(0.5)) == pytest.approx(1.0)
    pl = prs_singleton_plausibility(prs, law.sample(rng, 5000))
    assert stats.kstest(pl, "uniform").statistic < ks_critical(5000)


def test_square_rank_law(rng):
    prs = square_2d()
    u = rng.random((20000, 2))
    r = prs.rank(u)
    # P(rank <= t) = (2t)^2
    for t in (0.1, 0.25, 0.4):
        assert np.mean(r <= t) == pytest.approx((2 * t) ** 2, abs=4 * np.sqrt(0.25 / 20000))


def test_nestedness_on_grid():
    prs = square_2d()
    g = np.stack(np.meshgrid(np.linspace(0, 1, 21), np.linspace(0, 1, 21)), axis=-1).reshape(-1, 2)
    for t1, t2 in [(0.1, 0.2), (0.2, 0.2), (0.05, 0.45)]:
        assert np.all(~prs.contains(g, t1) | prs.contains(g, t2))


def test_ties_go_to_inclusion():
    s = NestedSet(default_1d(), 0.25)
    assert 0.75 in s and 0.25 in s and 0.8 not in s


def test_validity_dominance_square_with_conflict(rng):
    # Q(V) = P{S excludes V} is stochastically no larger than uniform
    prs = square_2d()
    v = rng.random((10_000, 2))
    pl = prs_singleton_plausibility(prs, v)
    q = np.sort(1.0 - pl)
    ecdf = np.arange(1, q.size + 1) / q.size
    assert np.all(ecdf >= q - dkw_slack(q.size))


def test_ellipse_prs_empirical_law(rng):
    draws = rng.multivariate_normal([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]], size=4000)
    prs = ellipse_elastic(draws)
    assert prs.elastic and prs.kind == "ellipse_elastic"
    assert prs_singleton_plausibility(prs, draws.mean(axis=0)) == pytest.approx(1.0)
    fresh = rng.multivariate_normal([1.0, -1.0], [[2.0, 0.5], [0.5, 1.0]], size=3000)
    pl = prs_singleton_plausibility(prs, fresh)
    assert stats.kstest(pl, "uniform").statistic < ks_critical(3000) + 0.02


def test_upper_tail_needs_a_law():
    with pytest.raises(ConfigurationError):
        RankingPRS("default_1d", rank=lambda u: u).upper_tail(0.1)


def _shifted_assoc(offset):
    # u in (0,1); x = theta^2 + offset, theta in [0, 1]: compatible u is x - theta^2 clipped
    def solve_u(x, theta):
        return np.clip(x - theta * theta, 0.0, 1.0)

    return Association(
        forward=lambda th, u: th * th + u,
        solve_u=solve_u,
        aux_sampler=lambda rng, size=None: rng.random(size),
        dims=(1, 1, 1),
        theta_range=(0.0, 1.0),
    )


def test_minimal_rank_by_search_matches_bisection():
    prs = default_1d()
    assoc = _shifted_assoc(0.0)
    x = 1.9  # u = 1.9 - theta^2 >= 0.9, closest to 1/2 at theta = 1
    t0 = minimal_rank(prs, assoc, x)
    assert t0 == pytest.approx(0.4, abs=1e-9)
    # independent bisection on the threshold: smallest t with a compatible theta
    grid = np.linspace(0, 1, 20001)
    lo, hi = 0.0, 0.5
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.any(np.abs(assoc.solve_u(x, grid) - 0.5) <= mid):
            hi = mid
        else:
            lo = mid
    assert t0 == pytest.approx(hi, abs=1e-7)
    assert conflict_probability(prs, assoc, x) == pytest.approx(0.8, abs=1e-8)


def test_elastic_envelope_stretches_only_when_needed():
    prs = default_1d()
    assoc = _shifted_assoc(0.0)
    stretched = elastic_envelope(prs, assoc, 1.9, 0.55)
    assert stretched.threshold == pytest.approx(0.4, abs=1e-9)
    kept = elastic_envelope(prs, assoc, 0.6, 0.1)
    assert kept.threshold == pytest.approx(0.4)


def test_minimal_rank_needs_a_range():
    prs = default_1d()
    assoc = Association(lambda t, u: u, lambda x, t: x, lambda r, s=None: r.random(s), (1, 1, 1))
    with pytest.raises(ConfigurationError):
        minimal_rank(prs, assoc, 0.3)


def test_minimal_rank_inconsistent():
    prs = default_1d()
    assoc = Association(
        lambda t, u: u, lambda x, t: np.nan, lambda r, s=None: r.random(s), (1, 1, 1), theta_range=(0, 1)
    )
    with pytest.raises(ModelInconsistencyError):
        minimal_rank(prs, assoc, 0.3)
