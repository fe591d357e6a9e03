"""Observed-feature construction for scale and location associations.

For a component-wise scale family ``x_l = g_l(theta) u_l`` a log-linear
feature ``eta(u) = C log u`` is free of ``theta`` near ``theta0`` exactly when
``C @ dlog_g(theta0) = 0``.  The rows of ``C`` therefore span the orthogonal
complement of the columns of ``dlog_g(theta0)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from imcond.errors import DegenerateFamilyError, EquivarianceError, ParameterDomainError

__all__ = [
    "ScaleFamily",
    "EtaSpec",
    "Decomposition",
    "scale_family_eta",
    "diffeq_residual",
    "location_family_decomposition",
]


@dataclass(frozen=True)
class ScaleFamily:
    """``x_l = g_l(theta) * u_l`` with positive scale maps."""

    g: Callable[[np.ndarray], np.ndarray]
    dlog_g: Callable[[np.ndarray], np.ndarray]

    def log_g(self, theta):
        gv = np.asarray(self.g(theta), dtype=float)
        if np.any(gv <= 0):
            raise ParameterDomainError("scale maps must be positive")
        return np.log(gv)

    def solve_u(self, x, theta):
        return np.asarray(x, dtype=float) / np.asarray(self.g(theta), dtype=float)

    def jacobian(self, theta) -> np.ndarray:
        """``dlog_g(theta)`` as an ``L x dim(theta)`` matrix."""
        w = np.asarray(self.dlog_g(theta), dtype=float)
        return w[:, None] if w.ndim == 1 else w


@dataclass(frozen=True)
class EtaSpec:
    """Log-linear feature ``eta(u) = C log u`` anchored at ``theta0``."""

    C: np.ndarray
    theta0: np.ndarray | float | None = None

    def __call__(self, u):
        return np.log(np.asarray(u, dtype=float)) @ self.C.T

    def observed(self, x, family: ScaleFamily):
        """``H(x) = C log x - C log g(theta0)``, equal to ``eta(u_{x, theta0})``."""
        return self(x) - self.C @ family.log_g(self.theta0)


def _fix_signs(rows: np.ndarray) -> np.ndarray:
    out = rows.copy()
    for i, r in enumerate(out):
        nz = np.flatnonzero(np.abs(r) > 1e-12)
        if nz.size and r[nz[0]] < 0:
            out[i] = -r
    return out


def scale_family_eta(fam: ScaleFamily, theta0) -> EtaSpec:
    """Orthonormal ``C`` whose rows annihilate ``dlog_g(theta0)``.

    Built from a complete QR factorisation; each row is signed so its first
    nonzero entry is positive, making the result deterministic.
    """
    w = fam.jacobian(theta0)
    big_l, d = w.shape
    if d >= big_l:
        raise DegenerateFamilyError(f"need more components ({big_l}) than parameters ({d})")
    sv = np.linalg.svd(w, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
        raise DegenerateFamilyError("dlog_g(theta0) does not have full column rank")
    q, _ = np.linalg.qr(w, mode="complete")
    c = _fix_signs(q[:, d:].T)
    return EtaSpec(c, theta0)


def diffeq_residual(eta, solve_u, x, theta, step=None) -> float:
    """Max-norm of the central-difference derivative of ``eta(u_{x,theta})``.

    ``solve_u(x, theta)`` returns ``u_{x,theta}``.  The default step for each
    coordinate is ``max(1e-5, 1e-5 |theta_j|)``.
    """
    th = np.atleast_1d(np.asarray(theta, dtype=float))
    scalar = np.ndim(theta) == 0
    worst = 0.0
    for j in range(th.size):
        h = step if step is not None else max(1e-5, 1e-5 * abs(th[j]))
        up, dn = th.copy(), th.copy()
        up[j] += h
        dn[j] -= h
        a = eta(solve_u(x, up[0] if scalar else up))
        b = eta(solve_u(x, dn[0] if scalar else dn))
        deriv = (np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) / (2.0 * h)
        worst = max(worst, float(np.max(np.abs(deriv))))
    return worst


@dataclass(frozen=True)
class Decomposition:
    """Location decomposition ``T(x) = theta + T(u)``, ``x - T(x) 1 = u - T(u) 1``."""

    T: Callable[[np.ndarray], float]

    def H(self, x):
        x = np.asarray(x, dtype=float)
        return x - self.T(x)

    def tau(self, u):
        return self.T(u)

    def eta(self, u):
        u = np.asarray(u, dtype=float)
        return u - self.T(u)


def location_family_decomposition(T, checks: int = 100, seed: int = 0, n: int = 8, tol: float = 1e-8) -> Decomposition:
    """Check ``T(x + c) = T(x) + c`` on random ``(x, c)`` and return the pieces.

    Raises :class:`EquivarianceError` carrying the first offending shift.
    """
    rng = np.random.default_rng(seed)
    for _ in range(checks):
        x = rng.standard_t(3, size=n)
        c = float(rng.normal(scale=10.0))
        viol = abs(T(x + c) - T(x) - c)
        if not viol <= tol * max(1.0, abs(c)):
            raise EquivarianceError(c, viol)
    return Decomposition(T)
