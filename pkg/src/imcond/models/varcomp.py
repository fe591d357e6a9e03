"""One-way random effects: local conditional IM for ``(theta_alpha, theta_eps)``.

The contrasts ``K^T y`` split into ``L`` independent scaled chi-squares,
``X_l = (lambda_l theta_alpha + theta_eps) U_l``, one per distinct eigenvalue
of ``K^T Z Z^T K``.  Anchored at ``theta0``, ``L - 2`` log-linear features of
``U`` are conditioned on, and the remaining two coordinates

    tau(U) = (sum_{l<L} log U_l, log U_L)

are predicted with an elastic ellipse fitted to Metropolis-Hastings draws
from their conditional law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from imcond.errors import (
    ConfigurationError,
    DesignDegeneracyError,
    DomainError,
    ModelInconsistencyError,
    ParameterDomainError,
)
from imcond.finder import ScaleFamily, scale_family_eta
from imcond.numerics import RngStream, float_key, mh_sample_batch

__all__ = [
    "VCDesign",
    "MCMCSettings",
    "vc_sufficient",
    "vc_family",
    "vc_tau_setup",
    "vc_cpl",
    "vc_cpl_grid",
    "vc_simulate",
    "vc_design_from_groups",
]


@dataclass(frozen=True)
class VCDesign:
    """Group sizes plus every design-derived quantity."""

    sizes: tuple[int, ...]
    n: int = field(init=False)
    K: np.ndarray = field(init=False, repr=False)
    M: np.ndarray = field(init=False, repr=False)
    lambdas: np.ndarray = field(init=False)
    mult: np.ndarray = field(init=False)
    P: tuple[np.ndarray, ...] = field(init=False, repr=False)

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise DesignDegeneracyError("need at least two groups of positive size")
        if max(sizes) < 2:
            raise DesignDegeneracyError("at least one group needs two observations")
        n = sum(sizes)
        Z = np.zeros((n, len(sizes)))
        Z[np.arange(n), np.repeat(np.arange(len(sizes)), sizes)] = 1.0
        K = linalg.helmert(n).T
        M = K.T @ Z @ Z.T @ K
        M = 0.5 * (M + M.T)
        evals, evecs = np.linalg.eigh(M)
        order = np.argsort(-evals, kind="stable")
        evals, evecs = evals[order], evecs[:, order]
        tol = 1e-8 * max(np.max(np.abs(evals)), 1.0)
        groups = [[0]]
        for i in range(1, evals.size):
            if evals[groups[-1][0]] - evals[i] <= tol:
                groups[-1].append(i)
            else:
                groups.append([i])
        for g in groups:
            if evals[g[0]] - evals[g[-1]] > tol:
                raise DesignDegeneracyError("eigenvalues cannot be clustered unambiguously")
        lam = np.array([evals[g].mean() for g in groups])
        if abs(lam[-1]) > tol:
            raise DesignDegeneracyError("design has no within-group degrees of freedom")
        lam[-1] = 0.0
        object.__setattr__(self, "sizes", sizes)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "mult", np.array([len(g) for g in groups]))
        object.__setattr__(self, "P", tuple(evecs[:, g] for g in groups))

    @property
    def L(self) -> int:
        return self.lambdas.size

    @property
    def groups(self) -> np.ndarray:
        return np.repeat(np.arange(len(self.sizes)), self.sizes)


def vc_sufficient(y, design: VCDesign):
    """``(X_1..X_L, lambdas, multiplicities)`` with ``X_l = |P_l^T K^T y|^2``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (design.n,):
        raise DomainError(f"expected {design.n} responses, got shape {y.shape}")
    ky = design.K.T @ y
    x = np.array([float(np.sum((p.T @ ky) ** 2)) for p in design.P])
    return x, design.lambdas.copy(), design.mult.copy()


def vc_family(design: VCDesign) -> ScaleFamily:
    lam = design.lambdas

    def g(th):
        return lam * th[0] + th[1]

    def dlog_g(th):
        gv = g(th)
        return np.column_stack([lam / gv, 1.0 / gv])

    return ScaleFamily(g=g, dlog_g=dlog_g)


@dataclass(frozen=True)
class MCMCSettings:
    steps: int = 4000
    burn_in: int = 1000
    tune: bool = True


@dataclass(frozen=True)
class TauSetup:
    """Conditional law of tau given the anchored feature, as ``w = a + Q tau``."""

    a: np.ndarray
    Q: np.ndarray
    r: np.ndarray
    v_star: np.ndarray
    B: np.ndarray

    def logdensity(self, tau):
        w = self.a + np.asarray(tau, dtype=float) @ self.Q.T
        return np.sum(0.5 * self.r * w - 0.5 * np.exp(w), axis=-1)


def _check_theta(theta):
    ta, te = float(theta[0]), float(theta[1])
    if not (ta >= 0 and te > 0 and math.isfinite(ta) and math.isfinite(te)):
        raise ParameterDomainError("need theta_alpha >= 0 and theta_eps > 0")
    return np.array([ta, te])


def vc_tau_setup(x, design: VCDesign, theta0) -> TauSetup:
    """Build ``B = [Pi; 1..1 0; 0..0 1]`` at ``theta0`` and the affine map
    from ``tau`` to ``log U`` on the slice ``eta(U) = H_{theta0}(x)``."""
    th = _check_theta(theta0)
    L = design.L
    if L < 3:
        raise ConfigurationError("the design has L < 3 components, so there is nothing to condition on")
    fam = vc_family(design)
    eta = scale_family_eta(fam, th)
    logu0 = np.log(x) - fam.log_g(th)
    h0 = eta.C @ logu0
    B = np.vstack([eta.C, np.r_[np.ones(L - 1), 0.0], np.r_[np.zeros(L - 1), 1.0]])
    if abs(np.linalg.det(B)) <= 1e-6:
        raise ConfigurationError("the chosen tau makes the linear map singular")
    Binv = np.linalg.inv(B)
    a = Binv[:, : L - 2] @ h0
    Q = Binv[:, L - 2 :]
    v_star = np.array([logu0[:-1].sum(), logu0[-1]])
    return TauSetup(a=a, Q=Q, r=design.mult.astype(float), v_star=v_star, B=B)


def _mode_and_cov(setup: TauSetup, start):
    tau = np.asarray(start, dtype=float).copy()
    f = setup.logdensity(tau)
    for _ in range(200):
        w = setup.a + setup.Q @ tau
        e = np.exp(w)
        grad = setup.Q.T @ (0.5 * setup.r - 0.5 * e)
        hess = -(setup.Q.T * (0.5 * e)) @ setup.Q
        step = np.linalg.solve(hess, -grad)
        t = 1.0
        while t > 1e-8:
            cand = tau + t * step
            fc = setup.logdensity(cand)
            if np.isfinite(fc) and fc >= f - 1e-12:
                break
            t *= 0.5
        tau, f = cand, fc
        if np.max(np.abs(t * step)) < 1e-10:
            break
    w = setup.a + setup.Q @ tau
    hess = -(setup.Q.T * (0.5 * np.exp(w))) @ setup.Q
    return tau, np.linalg.inv(-hess)


def _elastic_pl(draws, v_star, T, L):
    """Elastic-ellipse plausibility of ``v_star`` from conditional draws."""
    c = draws.mean(axis=0)
    S = np.cov(draws, rowvar=False)
    prec = np.linalg.inv(S)
    dr = draws - c
    ranks = np.sort(np.einsum("ij,jk,ik->i", dr, prec, dr))
    d = v_star - c
    r = float(d @ prec @ d)
    # feasible auxiliary values: a.v <= T1 - (L-1) T2 (theta_alpha >= 0)
    avec = np.array([1.0, -(L - 1.0)])
    bound = T[0] - (L - 1.0) * T[1]
    gap = float(avec @ c) - bound
    t0 = gap * gap / float(avec @ S @ avec) if gap > 0 else 0.0
    if r <= t0:
        return 1.0
    return float(1.0 - np.searchsorted(ranks, r, side="left") / ranks.size)


def vc_cpl_grid(y, design: VCDesign, thetas, mcmc: MCMCSettings, stream: RngStream) -> np.ndarray:
    """Local conditional plausibility at each ``theta`` (rows of ``thetas``).

    Each point runs its own chain on ``stream.child(float_key(theta_alpha),
    float_key(theta_eps))``; chains are advanced together for speed but the
    value at a point does not depend on the rest of the grid.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    x, _, _ = vc_sufficient(y, design)
    if np.any(~(x > 0)):
        raise DomainError("a sum of squares is zero; the data are degenerate")
    L = design.L
    T = np.array([np.log(x[:-1]).sum(), math.log(x[-1])])
    setups, modes, chols = [], [], []
    for th in thetas:
        s = vc_tau_setup(x, design, th)
        m, cov = _mode_and_cov(s, s.v_star)
        setups.append(s)
        modes.append(m)
        chols.append(np.linalg.cholesky(cov))
    A = np.stack([s.a for s in setups])
    Qm = np.stack([s.Q for s in setups])
    R = design.mult.astype(float)
    modes = np.stack(modes)
    chols = np.stack(chols)

    # chains run on whitened coordinates: tau = mode + chol @ zeta
    def logdensity(zeta, idx):
        tau = modes[idx] + np.einsum("kij,kj->ki", chols[idx], zeta)
        w = A[idx] + np.einsum("kij,kj->ki", Qm[idx], tau)
        return np.sum(0.5 * R * w - 0.5 * np.exp(w), axis=-1)

    streams = [stream.child(float_key(th[0]), float_key(th[1])) for th in thetas]
    k = thetas.shape[0]
    res = mh_sample_batch(
        logdensity,
        np.zeros((k, 2)),
        mcmc.steps,
        np.full((k, 2), 1.7),
        streams,
        burn_in=mcmc.burn_in,
        tune=mcmc.tune,
    )
    out = np.empty(k)
    for j in range(k):
        draws = modes[j] + res.samples[j] @ chols[j].T
        out[j] = _elastic_pl(draws, setups[j].v_star, T, L)
    return out


def vc_cpl(y, design: VCDesign, theta, mcmc: MCMCSettings | None = None, stream: RngStream | None = None) -> float:
    """Local conditional plausibility of ``{theta}``."""
    if stream is None:
        raise ConfigurationError("vc_cpl needs a random stream")
    return float(vc_cpl_grid(y, design, [theta], mcmc or MCMCSettings(), stream)[0])


def vc_simulate(design: VCDesign, theta, rng: np.random.Generator, mu: float = 0.0) -> np.ndarray:
    ta, te = _check_theta(theta)
    alpha = rng.normal(scale=math.sqrt(ta), size=len(design.sizes))
    eps = rng.normal(scale=math.sqrt(te), size=design.n)
    return mu + alpha[design.groups] + eps


def vc_design_from_groups(groups, y):
    """Order observations by group (first appearance) and build the design."""
    groups = np.asarray(groups)
    y = np.asarray(y, dtype=float)
    if groups.shape != y.shape:
        raise DomainError("group labels and responses differ in length")
    _, first, inv = np.unique(groups, return_index=True, return_inverse=True)
    rank = np.argsort(np.argsort(first))
    code = rank[inv]
    order = np.argsort(code, kind="stable")
    sizes = tuple(int(c) for c in np.bincount(code))
    if len(sizes) < 2:
        raise ModelInconsistencyError("need at least two groups")
    return VCDesign(sizes), y[order]
