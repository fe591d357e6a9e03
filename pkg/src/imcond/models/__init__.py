"""The six worked models, each built on the generic engine."""

from imcond.models.bvn import BVNModel, bvn_cpl, bvn_reduce
from imcond.models.gamma2 import Gamma2Comparators, Gamma2Model, gamma2_cpl, gamma2_stats
from imcond.models.nile import NileModel, nile_cpl, nile_naive_cpl
from imcond.models.normal_mean import normalmean_pl
from imcond.models.student_t import StudentTModel, student_t_cpl, t_mle
from imcond.models.varcomp import MCMCSettings, VCDesign, vc_cpl, vc_cpl_grid, vc_sufficient

__all__ = [
    "BVNModel",
    "bvn_cpl",
    "bvn_reduce",
    "Gamma2Comparators",
    "Gamma2Model",
    "gamma2_cpl",
    "gamma2_stats",
    "NileModel",
    "nile_cpl",
    "nile_naive_cpl",
    "normalmean_pl",
    "StudentTModel",
    "student_t_cpl",
    "t_mle",
    "MCMCSettings",
    "VCDesign",
    "vc_cpl",
    "vc_cpl_grid",
    "vc_sufficient",
]
