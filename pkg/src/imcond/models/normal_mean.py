"""Normal mean from two observations: the square random set on both residuals
against the one-dimensional random set on the informative residual alone.

With ``y1 = x1 + x2`` and ``y2 = x1 - x2``: ``y1 = 2 theta + V1``, ``y2 = V2``,
``V1, V2`` iid ``N(0, 2)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special

from imcond.engine import Association, pl_singleton
from imcond.errors import ConfigurationError
from imcond.prs import square_2d

__all__ = ["normalmean_pl", "normalmean_pl_engine", "normalmean_association", "to_y"]

_SQRT2 = math.sqrt(2.0)


def to_y(x1, x2):
    return x1 + x2, x1 - x2


def _g(z):
    # distribution function of |N(0, 1)|
    return 2.0 * special.ndtr(z) - 1.0


def normalmean_association() -> Association:
    """Baseline association on the uniform scale: ``u_i = Phi(v_i / sqrt 2)``."""

    def solve_u(y, theta):
        return special.ndtr(np.array([y[0] - 2.0 * theta, y[1]]) / _SQRT2)

    def forward(theta, u):
        v = _SQRT2 * special.ndtri(np.asarray(u, dtype=float))
        return np.array([2.0 * theta + v[0], v[1]])

    def min_rank(prs, y):
        # theta can zero the first residual, never the second
        return float(abs(special.ndtr(y[1] / _SQRT2) - 0.5))

    return Association(
        forward=forward,
        solve_u=solve_u,
        aux_sampler=lambda rng, size=None: rng.random((2,) if size is None else (size, 2)),
        dims=(1, 2, 2),
        min_rank=min_rank,
    )


def normalmean_pl(y, theta, variant: str = "conditional_1d", conflict: str = "normalize"):
    """Plausibility of ``{theta}`` from ``y = (y1, y2)``.

    ``baseline_2d`` predicts both residuals with a random square and
    ``conflict`` chooses normalisation or elastic stretching; the result is
    ``(1 - G(m)^2) / (1 - G(|y2|/sqrt 2)^2)`` with ``m`` the larger scaled
    residual when normalising.  ``conditional_1d`` uses
    ``1 - |2 Phi((y1 - 2 theta)/sqrt 2) - 1|``.
    """
    y1, y2 = float(y[0]), float(y[1])
    theta = np.asarray(theta, dtype=float)
    if variant == "conditional_1d":
        return 1.0 - np.abs(2.0 * special.ndtr((y1 - 2.0 * theta) / _SQRT2) - 1.0)
    if variant != "baseline_2d":
        raise ConfigurationError(f"unknown variant {variant!r}")
    a = np.abs(y1 - 2.0 * theta) / _SQRT2
    b = abs(y2) / _SQRT2
    if conflict == "normalize":
        num = 1.0 - _g(np.maximum(a, b)) ** 2
        den = 1.0 - _g(b) ** 2
        return np.where(den > 0, np.minimum(num / np.where(den > 0, den, 1.0), 1.0), 1.0)
    if conflict == "elastic":
        return np.where(a <= b, 1.0, 1.0 - _g(a) ** 2)
    raise ConfigurationError(f"unknown conflict treatment {conflict!r}")


def normalmean_pl_engine(y, theta, conflict="normalize"):
    """Same baseline plausibility routed through the generic engine."""
    return pl_singleton(normalmean_association(), square_2d(), y, theta, conflict)
