import math

import numpy as np
import pytest

from imcond.errors import DegenerateFamilyError, EquivarianceError
from imcond.finder import (
    ScaleFamily,
    diffeq_residual,
    location_family_decomposition,
    scale_family_eta,
)
from imcond.models.bvn import bvn_family
from imcond.models.nile import nile_family
from imcond.models.student_t import t_mle
from imcond.models.varcomp import VCDesign, vc_family


def test_nile_feature_is_log_product():
    for th in (0.2, 1.0, 7.0):
        eta = scale_family_eta(nile_family(), th)
        assert np.allclose(eta.C, [[1 / math.sqrt(2), 1 / math.sqrt(2)]], atol=1e-14)


@pytest.mark.parametrize("theta0", [-0.8, -0.1, 0.0, 0.5, 0.95])
def test_bvn_feature_direction(theta0):
    c = scale_family_eta(bvn_family(), theta0).C[0]
    want = np.array([1 + theta0, 1 - theta0])
    want /= np.linalg.norm(want)
    assert np.allclose(c, want, atol=1e-13)


@pytest.mark.parametrize("theta0", [(0.0, 1.0), (1.0, 1.0), (3.0, 0.2)])
def test_vc_feature_annihilates_jacobian(theta0):
    fam = vc_family(VCDesign((4, 4, 4, 8, 48)))
    eta = scale_family_eta(fam, np.array(theta0))
    assert eta.C.shape == (2, 4)
    assert np.max(np.abs(eta.C @ fam.jacobian(np.array(theta0)))) < 1e-12
    assert np.allclose(eta.C @ eta.C.T, np.eye(2), atol=1e-12)


def test_residual_vanishes_at_anchor_only():
    fam = bvn_family()
    eta = scale_family_eta(bvn_family(), 0.3)
    x = np.array([14.0, 9.0])
    assert diffeq_residual(eta, fam.solve_u, x, 0.3) < 1e-8
    assert diffeq_residual(eta, fam.solve_u, x, -0.4) > 1e-2


def test_residual_vc_under_perturbation():
    d = VCDesign((4, 4, 4, 8, 48))
    fam = vc_family(d)
    x = np.array([30.0, 9.0, 5.0, 60.0])
    th0 = np.array([1.0, 1.0])
    eta = scale_family_eta(fam, th0)
    assert diffeq_residual(eta, fam.solve_u, x, th0) < 1e-8
    # scaling both components together moves along the null direction
    assert diffeq_residual(eta, fam.solve_u, x, 1.2 * th0) < 1e-8
    assert diffeq_residual(eta, fam.solve_u, x, np.array([1.2, 1.0])) > 1e-3


def test_observed_feature_identity(rng):
    fam = vc_family(VCDesign((2, 2, 3)))
    th = np.array([0.7, 1.3])
    eta = scale_family_eta(fam, th)
    u = rng.chisquare(2, size=3)
    x = fam.g(th) * u
    assert np.allclose(eta.observed(x, fam), eta(u), atol=1e-10)


def test_degenerate_families():
    with pytest.raises(DegenerateFamilyError):
        square = ScaleFamily(g=lambda t: np.asarray(t), dlog_g=lambda t: np.diag(1 / np.asarray(t)))
        scale_family_eta(square, np.array([1.0, 2.0]))
    flat = ScaleFamily(g=lambda t: np.ones(3), dlog_g=lambda t: np.zeros(3))
    with pytest.raises(DegenerateFamilyError):
        scale_family_eta(flat, 1.0)


def test_signs_are_deterministic():
    a = scale_family_eta(bvn_family(), -0.3).C
    b = scale_family_eta(bvn_family(), -0.3).C
    assert np.array_equal(a, b)
    assert a[0, 0] > 0


def test_mle_passes_equivariance():
    dec = location_family_decomposition(lambda x: t_mle(x, 4.0), checks=30)
    x = np.array([0.3, -1.0, 2.2, 0.9])
    assert np.allclose(dec.H(x), dec.eta(x - 1.7), atol=1e-8)
    assert dec.T(x) == pytest.approx(1.7 + dec.tau(x - 1.7), abs=1e-8)


def test_non_equivariant_statistic_rejected():
    with pytest.raises(EquivarianceError) as info:
        location_family_decomposition(lambda x: float(np.mean(x**3)) ** (1 / 3) if np.mean(x**3) > 0 else 0.0)
    assert info.value.violation > 0
