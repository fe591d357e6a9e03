"""Monte Carlo harness: interval coverage and length, uniformity of
plausibility at the truth, and comparator intervals.

Replication ``r`` of an experiment draws everything from
``RngStream(master_seed, r)``, and results are merged in replication order,
so the output is the same for any number of worker processes.
"""

from __future__ import annotations

import enum
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special, stats

from imcond.engine import plausibility_interval
from imcond.errors import ConfigurationError, ImcondError, ParameterDomainError
from imcond.models.bvn import BVNModel
from imcond.models.gamma2 import Gamma2Comparators
from imcond.models.nile import NileModel
from imcond.models.normal_mean import normalmean_pl
from imcond.models.student_t import StudentTModel
from imcond.numerics import RngStream

__all__ = [
    "ModelId",
    "ExperimentSpec",
    "ExperimentResult",
    "QQResult",
    "run_coverage",
    "qq_uniformity",
    "comparator_interval",
    "simulate",
    "ks_critical",
    "dkw_slack",
    "worker_count",
]

MAX_FAILURE_RATE = 0.001


class ModelId(str, enum.Enum):
    NORMAL_MEAN = "normal-mean"
    STUDENT_T = "t"
    NILE = "nile"
    GAMMA2 = "gamma2"
    BVN = "bvn"
    VC = "vc"


METHODS = {
    ModelId.NORMAL_MEAN: ("cim",),
    ModelId.STUDENT_T: ("cim", "mle", "bayes_flat"),
    ModelId.NILE: ("cim",),
    ModelId.BVN: ("lcim", "mle", "bayes_jeffreys"),
}


@dataclass(frozen=True)
class ExperimentSpec:
    """One cell of a coverage table.

    ``truth`` is a finite set of parameter values; each replication draws
    one uniformly.  ``nu`` is the t degrees of freedom.
    """

    model: ModelId
    n: int
    truth: tuple[float, ...]
    reps: int
    alpha: float
    method: str
    master_seed: int
    nu: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "model", ModelId(self.model))
        object.__setattr__(self, "truth", tuple(float(t) for t in np.atleast_1d(self.truth)))
        if self.reps < 100:
            raise ParameterDomainError("reps must be at least 100")
        if not 0 < self.alpha < 1:
            raise ParameterDomainError("alpha must lie in (0, 1)")
        if self.method not in METHODS.get(self.model, ()):
            raise ConfigurationError(f"method {self.method!r} is not available for model {self.model.value!r}")
        if self.model is ModelId.STUDENT_T and not (self.nu and self.nu > 0):
            raise ParameterDomainError("the t model needs nu > 0")
        if not self.truth:
            raise ParameterDomainError("truth set is empty")


@dataclass
class ExperimentResult:
    coverage: float
    mean_length: float
    mc_se: float
    reps: int
    failures: int
    records: np.ndarray | None = field(default=None, repr=False)


@dataclass
class QQResult:
    ks: float
    dominance: bool
    excess: float
    critical: float
    values: np.ndarray = field(repr=False)


def ks_critical(n: int, level: float = 0.01) -> float:
    """Upper ``level`` point of the one-sample KS statistic for ``n`` points."""
    return float(stats.kstwo.ppf(1 - level, n))


def dkw_slack(n: int, level: float = 0.01) -> float:
    return math.sqrt(math.log(2.0 / level) / (2.0 * n))


def worker_count() -> int:
    env = os.environ.get("IMCOND_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigurationError(f"IMCOND_THREADS must be an integer, got {env!r}") from None
        return max(1, k)
    return max(1, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# simulation


def simulate(model: ModelId, theta, n: int, rng: np.random.Generator, nu: float | None = None):
    """One data set from ``model`` at ``theta`` in the form the model consumes."""
    model = ModelId(model)
    if model is ModelId.STUDENT_T:
        return theta + rng.standard_t(nu, size=n)
    if model is ModelId.NILE:
        return rng.exponential(theta, size=n), rng.exponential(1.0 / theta, size=n)
    if model is ModelId.BVN:
        return (1.0 + theta) * rng.chisquare(n), (1.0 - theta) * rng.chisquare(n)
    if model is ModelId.NORMAL_MEAN:
        x = theta + rng.standard_normal(2)
        return x[0] + x[1], x[0] - x[1]
    if model is ModelId.GAMMA2:
        return rng.gamma(theta[0], theta[1], size=n)
    raise ConfigurationError(f"no simulator for {model.value!r}")


def _make_model(spec: ExperimentSpec):
    if spec.model is ModelId.STUDENT_T:
        return StudentTModel(spec.nu)
    if spec.model is ModelId.NILE:
        return NileModel()
    if spec.model is ModelId.BVN:
        return BVNModel(spec.n)
    return None


def comparator_interval(model, method: str, x, alpha: float):
    """MLE-Wald or posterior central interval for a supported model.

    ``model`` is a model object (``StudentTModel``, ``BVNModel``) or the
    string ``"gamma2"``, for which ``x`` is the raw sample and a pair of
    marginal intervals (shape, scale) is returned.
    """
    if isinstance(model, str) and ModelId(model) is ModelId.GAMMA2:
        comp = Gamma2Comparators(x)
        if method == "mle":
            return comp.wald_intervals(alpha)
        if method == "bayes_jeffreys":
            return comp.bayes_intervals(alpha)
        raise ConfigurationError(f"method {method!r} is not available for gamma2")
    if method == "mle" and isinstance(model, (StudentTModel, BVNModel)):
        return model.mle_interval(x, alpha)
    if method == "bayes_flat" and isinstance(model, StudentTModel):
        return model.bayes_interval(x, alpha)
    if method == "bayes_jeffreys" and isinstance(model, BVNModel):
        return model.bayes_interval(x, alpha)
    raise ConfigurationError(f"method {method!r} is not available for {type(model).__name__}")


def _interval(spec: ExperimentSpec, model, x):
    if spec.method in ("cim", "lcim"):
        if spec.model is ModelId.NORMAL_MEAN:
            half = math.sqrt(2.0) * special.ndtri(1 - spec.alpha / 2) / 2.0
            return x[0] / 2.0 - half, x[0] / 2.0 + half
        return plausibility_interval(model, None, x, spec.alpha)
    return comparator_interval(model, spec.method, x, spec.alpha)


def _rep(spec: ExperimentSpec, model, rep: int):
    rng = RngStream(spec.master_seed, rep).generator()
    theta = spec.truth[int(rng.integers(len(spec.truth)))] if len(spec.truth) > 1 else spec.truth[0]
    x = simulate(spec.model, theta, spec.n, rng, spec.nu)
    lo, hi = _interval(spec, model, x)
    return float(lo <= theta <= hi), float(hi - lo)


def _run_chunk(spec: ExperimentSpec, start: int, stop: int):
    model = _make_model(spec)
    out = np.empty((stop - start, 3))
    for i, rep in enumerate(range(start, stop)):
        try:
            cov, length = _rep(spec, model, rep)
            out[i] = (cov, length, 0.0)
        except (ImcondError, ArithmeticError, ValueError):
            out[i] = (0.0, 0.0, 1.0)
    return start, out


def _chunks(reps: int, workers: int):
    size = max(1, min(250, math.ceil(reps / (4 * workers))))
    return [(s, min(reps, s + size)) for s in range(0, reps, size)]


def run_coverage(spec: ExperimentSpec, workers: int | None = None, keep_records: bool = False) -> ExperimentResult:
    """Coverage, mean length and Monte Carlo standard error of one cell.

    Replications that raise a numeric error are dropped and counted; the run
    aborts when they reach 0.1% of ``reps``.
    """
    workers = worker_count() if workers is None else max(1, int(workers))
    chunks = _chunks(spec.reps, workers)
    records = np.empty((spec.reps, 3))
    if workers == 1:
        for s, e in chunks:
            records[s:e] = _run_chunk(spec, s, e)[1]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_chunk, spec, s, e) for s, e in chunks]
            for f in futs:
                s, block = f.result()
                records[s : s + block.shape[0]] = block
    failed = records[:, 2] == 1.0
    nfail = int(failed.sum())
    if nfail and nfail >= MAX_FAILURE_RATE * spec.reps:
        raise ImcondError(f"{nfail} of {spec.reps} replications failed numerically; aborting")
    ok = records[~failed]
    m = ok.shape[0]
    cov = math.fsum(ok[:, 0]) / m
    length = math.fsum(ok[:, 1]) / m
    return ExperimentResult(
        coverage=cov,
        mean_length=length,
        mc_se=math.sqrt(cov * (1.0 - cov) / m),
        reps=m,
        failures=nfail,
        records=records if keep_records else None,
    )


# ---------------------------------------------------------------------------
# uniformity of plausibility at the truth


_QQ_MODELS = (ModelId.NORMAL_MEAN, ModelId.STUDENT_T, ModelId.NILE, ModelId.BVN)


def _pl_at_truth(model: ModelId, variant: str, theta, n, nu, rng):
    x = simulate(model, theta, n, rng, nu)
    if model is ModelId.NORMAL_MEAN:
        v = "conditional_1d" if variant in ("conditional", "conditional_1d") else variant
        if v == "baseline":
            v = "baseline_2d"
        return float(normalmean_pl(x, theta, v))
    if model is ModelId.STUDENT_T:
        return StudentTModel(nu).cpl(x, theta)
    if model is ModelId.NILE:
        return NileModel().cpl(x, theta)
    if model is ModelId.BVN:
        return BVNModel(n).cpl(x, theta)
    raise AssertionError("unreachable")


def qq_uniformity(
    model,
    variant: str,
    reps: int,
    stream: RngStream,
    theta=0.0,
    n: int = 2,
    nu: float | None = None,
    level: float = 0.01,
) -> QQResult:
    """KS distance of the plausibility-at-truth sample to ``Unif(0, 1)``.

    ``dominance`` holds when the empirical CDF never exceeds the uniform CDF
    by more than the DKW band at ``level``; ``excess`` is the raw largest
    exceedance.  Replication ``r`` uses ``stream.child(r)``.
    """
    model = ModelId(model)
    if model not in _QQ_MODELS:
        raise ConfigurationError(f"uniformity check is not available for {model.value!r}")
    vals = np.empty(reps)
    for r in range(reps):
        vals[r] = _pl_at_truth(model, variant, theta, n, nu, stream.child(r).generator())
    vals.sort()
    ks = float(stats.kstest(vals, "uniform").statistic)
    # sup_p (F_emp(p) - p), attained just at the sample points
    excess = float(np.max(np.arange(1, reps + 1) / reps - vals))
    return QQResult(
        ks=ks,
        dominance=bool(excess <= dkw_slack(reps, level)),
        excess=excess,
        critical=ks_critical(reps, level),
        values=vals,
    )
