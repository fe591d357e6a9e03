"""Numerical kernels shared by every model: 1-D distributions, quadrature,
the modified Bessel function K0, random-walk Metropolis-Hastings and
reproducible random streams."""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, optimize, special

from imcond.errors import (
    DomainError,
    ImcondError,
    InitializationError,
    IntegrandError,
    ParameterDomainError,
)

__all__ = [
    "RngStream",
    "Dist1D",
    "Normal",
    "ChiSq",
    "Gamma",
    "StudentT",
    "Tabulated",
    "cdf",
    "quantile",
    "quad",
    "bessel_k0",
    "MHResult",
    "mh_sample",
    "mh_sample_batch",
    "tune_proposal",
    "float_key",
]


_trapz = getattr(np, "trapezoid", None) or np.trapz

# ---------------------------------------------------------------------------
# random streams


def float_key(value: float) -> int:
    """Map a float to a stable unsigned 64-bit integer (its IEEE bit pattern)."""
    return struct.unpack("<Q", struct.pack("<d", float(value) + 0.0))[0]


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(master_seed, stream_index)``.

    The generator is Philox, keyed through a ``SeedSequence`` built from the
    seed, the index and an optional path of child keys, so the same key gives
    the same draws regardless of platform, process or evaluation order.
    """

    master_seed: int
    stream_index: int = 0
    path: tuple[int, ...] = ()

    def __post_init__(self):
        for k in (self.master_seed, self.stream_index, *self.path):
            if int(k) < 0 or int(k) >= 2**64:
                raise ParameterDomainError(f"stream key {k} outside [0, 2**64)")

    def child(self, *keys: int) -> "RngStream":
        return RngStream(self.master_seed, self.stream_index, self.path + tuple(int(k) for k in keys))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([int(self.master_seed), int(self.stream_index), *map(int, self.path)])
        return np.random.Generator(np.random.Philox(ss))


# ---------------------------------------------------------------------------
# distributions


class Dist1D:
    """A univariate distribution with density, CDF and quantile function."""

    kind: str = ""
    support: tuple[float, float] = (-math.inf, math.inf)

    def logpdf(self, x):
        raise NotImplementedError

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        raise NotImplementedError

    def _ppf(self, p):
        raise NotImplementedError

    def quantile(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(~((p_arr > 0) & (p_arr < 1))):
            raise DomainError(f"quantile probability must lie in (0, 1), got {p!r}")
        y = np.asarray(self._ppf(p_arr), dtype=float)
        y = self._polish(y, p_arr)
        return y if np.ndim(p) else float(y)

    def _polish(self, y, p):
        # Two Newton steps on cdf(y) - p; fall back to Brent where that fails.
        y = np.array(y, dtype=float, copy=True)
        for _ in range(2):
            f = self.pdf(y)
            step = np.where(f > 0, (self.cdf(y) - p) / np.where(f > 0, f, 1.0), 0.0)
            y_new = y - step
            better = np.abs(self.cdf(y_new) - p) < np.abs(self.cdf(y) - p)
            y = np.where(better & np.isfinite(y_new), y_new, y)
        bad = np.abs(self.cdf(y) - p) > 1e-10
        if np.any(bad):
            flat_y, flat_p = y.reshape(-1), p.reshape(-1)
            for i in np.flatnonzero(bad.reshape(-1)):
                flat_y[i] = _bracketed_inverse(self.cdf, float(flat_p[i]), float(flat_y[i]), self.support)
            y = flat_y.reshape(y.shape)
        return y

    def sample(self, rng: np.random.Generator, size=None):
        u = rng.random(size)
        u = np.clip(u, 1e-300, 1 - 1e-16)
        return self.quantile(u)


def _bracketed_inverse(F, p, guess, support):
    lo_s, hi_s = support
    guess = guess if np.isfinite(guess) else 0.0
    width = 1.0
    lo = guess - width if not np.isfinite(lo_s) else max(lo_s, guess - width)
    hi = guess + width if not np.isfinite(hi_s) else min(hi_s, guess + width)
    for _ in range(200):
        if F(lo) <= p:
            break
        width *= 2
        lo = guess - width if not np.isfinite(lo_s) else lo_s + (lo - lo_s) / 2
    for _ in range(200):
        if F(hi) >= p:
            break
        width *= 2
        hi = guess + width if not np.isfinite(hi_s) else hi_s - (hi_s - hi) / 2
    return optimize.brentq(lambda y: float(F(y)) - p, lo, hi, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=500)


def _positive(name, value):
    if not (np.isfinite(value) and value > 0):
        raise ParameterDomainError(f"{name} must be positive and finite, got {value!r}")
    return float(value)


class Normal(Dist1D):
    kind = "normal"

    def __init__(self, mu: float = 0.0, sigma: float = 1.0):
        self.mu = float(mu)
        self.sigma = _positive("sigma", sigma)

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * math.log(2 * math.pi)

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def _ppf(self, p):
        return self.mu + self.sigma * special.ndtri(p)


class Gamma(Dist1D):
    kind = "gamma"
    support = (0.0, math.inf)

    def __init__(self, shape: float, scale: float = 1.0):
        self.shape = _positive("shape", shape)
        self.scale = _positive("scale", scale)

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            y = x / self.scale
            out = (self.shape - 1) * np.log(y) - y - special.gammaln(self.shape) - math.log(self.scale)
        return np.where(x > 0, out, -np.inf)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return special.gammainc(self.shape, np.maximum(x, 0.0) / self.scale)

    def _ppf(self, p):
        return self.scale * special.gammaincinv(self.shape, p)


class ChiSq(Gamma):
    kind = "chisq"

    def __init__(self, df: float):
        self.df = _positive("df", df)
        super().__init__(self.df / 2.0, 2.0)


class StudentT(Dist1D):
    kind = "student_t"

    def __init__(self, df: float, location: float = 0.0):
        self.df = _positive("df", df)
        self.location = float(location)

    def logpdf(self, x):
        nu = self.df
        z = np.asarray(x, dtype=float) - self.location
        return (
            special.gammaln((nu + 1) / 2)
            - special.gammaln(nu / 2)
            - 0.5 * math.log(nu * math.pi)
            - (nu + 1) / 2 * np.log1p(z * z / nu)
        )

    def cdf(self, x):
        return special.stdtr(self.df, np.asarray(x, dtype=float) - self.location)

    def _ppf(self, p):
        return self.location + special.stdtrit(self.df, p)


class Tabulated(Dist1D):
    """Distribution given by a log-density tabulated on an increasing grid.

    The density is linearly interpolated between nodes and normalised with the
    trapezoid rule, so the CDF is piecewise quadratic and is inverted exactly.
    Outside the grid the density is zero.
    """

    kind = "tabulated"

    def __init__(self, grid, logdensity):
        x = np.asarray(grid, dtype=float)
        lf = np.asarray(logdensity, dtype=float)
        if x.ndim != 1 or x.shape != lf.shape or x.size < 2:
            raise ParameterDomainError("grid and log-density must be equal-length 1-D arrays (>= 2 points)")
        if np.any(np.diff(x) <= 0):
            raise ParameterDomainError("tabulation grid must be strictly increasing")
        if np.any(np.isnan(lf)) or not np.any(np.isfinite(lf)):
            raise ParameterDomainError("log-density must be finite somewhere and never NaN")
        f = np.exp(lf - np.max(lf))
        dx = np.diff(x)
        cells = 0.5 * (f[1:] + f[:-1]) * dx
        total = cells.sum()
        self.grid = x
        self.density = f / total
        self.log_norm = float(np.max(lf) + math.log(total))
        self._dx = dx
        self._cum = np.concatenate([[0.0], np.cumsum(cells) / total])
        self._cum[-1] = 1.0
        self.support = (float(x[0]), float(x[-1]))

    @classmethod
    def from_logpdf(
        cls,
        logpdf: Callable[[np.ndarray], np.ndarray],
        lo: float,
        hi: float,
        points: int = 2049,
        tail: float = 1e-12,
        coarse: int = 257,
    ) -> "Tabulated":
        """Tabulate an unnormalised log-density.

        ``[lo, hi]`` is widened by doubling until the density mass beyond the
        edges is negligible, then the grid is re-laid over the region holding
        all but ``tail`` of the mass.
        """
        if not hi > lo:
            raise ParameterDomainError("need hi > lo")
        for _ in range(64):
            g = np.linspace(lo, hi, coarse)
            lf = np.asarray(logpdf(g), dtype=float)
            if np.any(np.isnan(lf)):
                raise ParameterDomainError("log-density evaluated to NaN")
            m = np.max(lf)
            f = np.exp(lf - m)
            mass = _trapz(f, g)
            edge = (hi - lo) * np.array([f[0], f[-1]]) / mass
            if edge[0] < tail * 1e-3 and edge[1] < tail * 1e-3:
                break
            w = hi - lo
            if edge[0] >= tail * 1e-3:
                lo -= w
            if edge[1] >= tail * 1e-3:
                hi += w
        c = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(g))])
        c /= c[-1]
        i0 = max(int(np.searchsorted(c, tail / 10)) - 1, 0)
        i1 = min(int(np.searchsorted(c, 1 - tail / 10)) + 1, coarse - 1)
        fine = np.linspace(g[i0], g[i1], points)
        return cls(fine, logpdf(fine))

    def logpdf(self, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(x))

    def pdf(self, x):
        return np.interp(x, self.grid, self.density, left=0.0, right=0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, self.grid[0], self.grid[-1])
        i = np.clip(np.searchsorted(self.grid, xc, side="right") - 1, 0, self.grid.size - 2)
        d = xc - self.grid[i]
        f0 = self.density[i]
        slope = (self.density[i + 1] - f0) / self._dx[i]
        out = self._cum[i] + f0 * d + 0.5 * slope * d * d
        return np.clip(out, 0.0, 1.0)

    def _ppf(self, p):
        p = np.asarray(p, dtype=float)
        i = np.clip(np.searchsorted(self._cum, p, side="right") - 1, 0, self.grid.size - 2)
        b = p - self._cum[i]
        f0 = self.density[i]
        slope = (self.density[i + 1] - f0) / self._dx[i]
        disc = np.sqrt(np.maximum(f0 * f0 + 2.0 * slope * b, 0.0))
        denom = f0 + disc
        with np.errstate(divide="ignore", invalid="ignore"):
            d = np.where(denom > 0, 2.0 * b / denom, 0.0)
        return np.clip(self.grid[i] + d, self.grid[i], self.grid[i + 1])

    def quantile(self, p):
        p_arr = np.asarray(p, dtype=float)
        if np.any(~((p_arr > 0) & (p_arr < 1))):
            raise DomainError(f"quantile probability must lie in (0, 1), got {p!r}")
        y = self._ppf(p_arr)
        return y if np.ndim(p) else float(y)

    def mean(self) -> float:
        return float(_trapz(self.grid * self.density, self.grid))


def cdf(dist: Dist1D, x):
    """P{X <= x} for ``X ~ dist``."""
    return dist.cdf(x)


def quantile(dist: Dist1D, p):
    """Smallest y with cdf(dist, y) >= p, for p in (0, 1)."""
    return dist.quantile(p)


# ---------------------------------------------------------------------------
# quadrature


class QuadratureError(ImcondError, ArithmeticError):
    pass


def quad(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10) -> float:
    """Adaptive Gauss-Kronrod quadrature of ``f`` over ``(a, b)``.

    Infinite limits are handled by widening a finite core by doubling until
    the integrand is negligible at its edges, then mapping the remaining tails
    onto finite intervals.  Raises :class:`IntegrandError` if ``f`` returns a
    non-finite value.
    """
    if a == b:
        return 0.0
    if a > b:
        return -quad(f, b, a, tol)

    def g(x):
        v = f(x)
        if not np.isfinite(v):
            raise IntegrandError(x, v)
        return float(v)

    def piece(lo, hi):
        with warnings.catch_warnings():
            warnings.simplefilter("error", integrate.IntegrationWarning)
            try:
                val, err = integrate.quad(g, lo, hi, epsabs=0.0, epsrel=tol, limit=1000)
            except integrate.IntegrationWarning as exc:
                raise QuadratureError(f"quadrature over ({lo}, {hi}) did not converge: {exc}") from None
        return val

    if math.isfinite(a) and math.isfinite(b):
        return piece(a, b)

    # finite core [lo, hi] grown until the integrand is negligible at infinite ends
    lo = a if math.isfinite(a) else (min(b, 0.0) - 1.0 if math.isfinite(b) else -1.0)
    hi = b if math.isfinite(b) else (max(a, 0.0) + 1.0 if math.isfinite(a) else 1.0)
    peak = 0.0
    for _ in range(60):
        peak = max(peak, max(abs(g(x)) for x in np.linspace(lo, hi, 33)))
        edges = []
        if not math.isfinite(a):
            edges.append(abs(g(lo)))
        if not math.isfinite(b):
            edges.append(abs(g(hi)))
        peak = max(peak, *edges)
        if peak > 0 and max(edges) <= 1e-3 * tol * peak:
            break
        if not math.isfinite(a):
            lo = lo - (hi - lo)
        if not math.isfinite(b):
            hi = hi + (hi - lo)
    total = piece(lo, hi)
    if not math.isfinite(a):
        total += piece(-math.inf, lo)
    if not math.isfinite(b):
        total += piece(hi, math.inf)
    return total


# ---------------------------------------------------------------------------
# special functions


def bessel_k0(x):
    """Modified Bessel function of the second kind, order zero, for x > 0."""
    x_arr = np.asarray(x, dtype=float)
    if np.any(~(x_arr > 0)):
        raise DomainError(f"K0 requires x > 0, got {x!r}")
    out = special.k0(x_arr)
    return out if np.ndim(x) else float(out)


# ---------------------------------------------------------------------------
# Metropolis-Hastings

PILOT_STEPS = 1000
PILOT_ROUNDS = 20
BURN_IN = 2000
_BLOCK = 512


@dataclass
class MHResult:
    samples: np.ndarray  # (steps, d) for one chain, (k, steps, d) for a batch
    acceptance_rate: np.ndarray | float
    proposal_scale: np.ndarray
    tuned: np.ndarray | bool = field(default=True)


class _BlockNoise:
    """Per-chain noise drawn in blocks from each chain's own generator, so a
    chain's path does not depend on which other chains share the batch."""

    def __init__(self, gens, d):
        self.gens = gens
        self.d = d
        k = len(gens)
        self.z = np.empty((k, _BLOCK, d))
        self.u = np.empty((k, _BLOCK))
        self.pos = np.full(k, _BLOCK)

    def draw(self, active):
        need = active[self.pos[active] >= _BLOCK]
        for j in need:
            g = self.gens[j]
            self.z[j] = g.standard_normal((_BLOCK, self.d))
            self.u[j] = g.random(_BLOCK)
            self.pos[j] = 0
        p = self.pos[active]
        z, u = self.z[active, p], self.u[active, p]
        self.pos[active] += 1
        return z, u


def _run(logdensity, state, lp, scale, noise, active, steps, store=None):
    accepted = np.zeros(active.size)
    for s in range(steps):
        z, u = noise.draw(active)
        prop = state[active] + scale[active] * z
        lp_prop = np.asarray(logdensity(prop, active), dtype=float)
        with np.errstate(invalid="ignore"):
            ok = np.log(u) < lp_prop - lp[active]
        ok &= np.isfinite(lp_prop)
        idx = active[ok]
        state[idx] = prop[ok]
        lp[idx] = lp_prop[ok]
        accepted += ok
        if store is not None:
            store[active, s] = state[active]
    return accepted / max(steps, 1)


def tune_proposal(logdensity_batch, state, lp, scale, noise, lo=0.2, hi=0.5):
    """Pilot rule: rescale by 2 or 0.5 until 1000-step acceptance is in [lo, hi]."""
    k = state.shape[0]
    active = np.arange(k)
    tuned = np.zeros(k, dtype=bool)
    for _ in range(PILOT_ROUNDS):
        if active.size == 0:
            break
        acc = _run(logdensity_batch, state, lp, scale, noise, active, PILOT_STEPS)
        in_range = (acc >= lo) & (acc <= hi)
        tuned[active[in_range]] = True
        low = active[acc < lo]
        high = active[acc > hi]
        scale[low] *= 0.5
        scale[high] *= 2.0
        active = active[~in_range]
    return tuned


def mh_sample_batch(
    logdensity: Callable[[np.ndarray, np.ndarray], np.ndarray],
    init: np.ndarray,
    steps: int,
    proposal_scale: np.ndarray,
    streams: Sequence[RngStream],
    burn_in: int = BURN_IN,
    tune: bool = True,
) -> MHResult:
    """Run ``k`` independent random-walk Metropolis chains side by side.

    ``logdensity(states, idx)`` evaluates the target of chains ``idx`` at
    ``states`` (shape ``(len(idx), d)``).  Chain ``j`` uses only
    ``streams[j]``, so its output is identical whether it runs alone or in a
    batch.
    """
    init = np.atleast_2d(np.asarray(init, dtype=float))
    k, d = init.shape
    if d not in (1, 2):
        raise ParameterDomainError("Metropolis-Hastings is implemented for d in {1, 2}")
    if len(streams) != k:
        raise ParameterDomainError("one stream per chain is required")
    scale = np.broadcast_to(np.asarray(proposal_scale, dtype=float), (k, d)).copy()
    state = init.copy()
    all_idx = np.arange(k)
    lp = np.asarray(logdensity(state, all_idx), dtype=float)
    if not np.all(np.isfinite(lp)):
        bad = np.flatnonzero(~np.isfinite(lp))
        raise InitializationError(f"log-density is not finite at the initial state of chain(s) {bad.tolist()}")
    noise = _BlockNoise([s.generator() for s in streams], d)
    tuned = tune_proposal(logdensity, state, lp, scale, noise) if tune else np.ones(k, dtype=bool)
    _run(logdensity, state, lp, scale, noise, all_idx, burn_in)
    out = np.empty((k, steps, d))
    acc = _run(logdensity, state, lp, scale, noise, all_idx, steps, store=out)
    return MHResult(out, acc, scale, tuned)


def mh_sample(
    logdensity: Callable[[np.ndarray], float],
    init,
    steps: int,
    proposal_scale,
    stream: RngStream,
    burn_in: int = BURN_IN,
    tune: bool = True,
) -> MHResult:
    """Random-walk Metropolis-Hastings chain of length ``steps`` targeting
    ``exp(logdensity)``; pilot-tuned, then ``burn_in`` discarded steps."""
    init = np.atleast_1d(np.asarray(init, dtype=float))

    def batch(states, idx):
        return np.array([logdensity(s) for s in states])

    res = mh_sample_batch(batch, init[None, :], steps, np.atleast_1d(proposal_scale)[None, :], [stream], burn_in, tune)
    return MHResult(res.samples[0], float(res.acceptance_rate[0]), res.proposal_scale[0], bool(res.tuned[0]))
