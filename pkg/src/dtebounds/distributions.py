"""One-dimensional marginal distributions.

Every bound in this package is a functional of two fixed marginal CDFs.  The
classes here are immutable and vectorised: ``cdf`` and ``quantile`` accept
scalars or arrays and return the same shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Sequence

import numpy as np
from scipy import optimize, special
from scipy.interpolate import CubicHermiteSpline

from ._validation import check_probability_open

TAIL = 1e-12


class DistributionError(ValueError):
    """Invalid distribution parameters or arguments."""


class FitFailureError(RuntimeError):
    """No mixture order up to the limit reaches the acceptance threshold."""


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


class MarginalDistribution:
    """Base class. Subclasses implement ``_cdf`` and optionally ``_ppf``/``_pdf``."""

    kind: str = "abstract"
    continuous: bool = True

    # -- public surface -------------------------------------------------
    def cdf(self, y):
        y_arr = np.asarray(y, dtype=float)
        out = np.clip(self._cdf(y_arr), 0.0, 1.0)
        return _out(out, y)

    def pdf(self, y):
        """Density, used internally for gradients of smoothed objectives."""
        y_arr = np.asarray(y, dtype=float)
        return _out(self._pdf(y_arr), y)

    def quantile(self, q):
        q_arr = np.asarray(q, dtype=float)
        check_probability_open(q_arr, "q")
        return _out(self._ppf(q_arr), q)

    @property
    def support_lo(self) -> float:
        return -math.inf

    @property
    def support_hi(self) -> float:
        return math.inf

    @property
    def scale(self) -> float:
        return 1.0

    def effective_range(self, tail: float = TAIL) -> tuple[float, float]:
        """Interval outside of which the CDF is within ``tail`` of 0 or 1."""
        lo = self.support_lo if math.isfinite(self.support_lo) else float(self._ppf(np.array(tail)))
        hi = self.support_hi if math.isfinite(self.support_hi) else float(self._ppf(np.array(1 - tail)))
        return lo, hi

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    # -- defaults ---------------------------------------------------------
    def _pdf(self, y):
        h = 1e-6 * self.scale
        return (self._cdf(y + h) - self._cdf(y - h)) / (2 * h)

    def _ppf(self, q):
        return _invert_cdf(self, q)


def _invert_cdf(dist: MarginalDistribution, q: np.ndarray, xtol: float = 1e-10) -> np.ndarray:
    """Bracketed root finding of cdf(y) = q, elementwise."""
    flat = np.atleast_1d(q).ravel()
    res = np.empty_like(flat)
    s = dist.scale
    for i, qi in enumerate(flat):
        lo, hi = -s, s
        if math.isfinite(dist.support_lo):
            lo = dist.support_lo
        if math.isfinite(dist.support_hi):
            hi = dist.support_hi
        while dist._cdf(np.array(lo)) > qi:
            lo -= 2 * (hi - lo)
        while dist._cdf(np.array(hi)) < qi:
            hi += 2 * (hi - lo)
        res[i] = optimize.brentq(lambda t: float(dist._cdf(np.array(t))) - qi, lo, hi,
                                 xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=500)
    return res.reshape(np.shape(q))


@dataclass(frozen=True)
class Normal(MarginalDistribution):
    mu: float = 0.0
    sigma2: float = 1.0
    kind = "normal"

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise DistributionError("normal requires sigma2 > 0")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def scale(self) -> float:
        return self.sigma

    def _cdf(self, y):
        return special.ndtr((y - self.mu) / self.sigma)

    def _pdf(self, y):
        z = (y - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))

    def _ppf(self, q):
        return self.mu + self.sigma * special.ndtri(q)

    def to_dict(self):
        return {"kind": "normal", "mu": self.mu, "sigma2": self.sigma2}


@dataclass(frozen=True)
class ChiSquare(MarginalDistribution):
    k: float = 1.0
    kind = "chi_square"

    def __post_init__(self):
        if not self.k > 0:
            raise DistributionError("chi_square requires k > 0")

    @property
    def support_lo(self):
        return 0.0

    @property
    def scale(self):
        return math.sqrt(2 * self.k)

    def _cdf(self, y):
        return special.chdtr(self.k, np.maximum(y, 0.0))

    def _pdf(self, y):
        yy = np.maximum(y, 1e-300)
        logp = (self.k / 2 - 1) * np.log(yy) - yy / 2 - (self.k / 2) * math.log(2) - special.gammaln(self.k / 2)
        return np.where(y > 0, np.exp(logp), 0.0)

    def _ppf(self, q):
        return special.chdtri(self.k, 1 - q)

    def to_dict(self):
        return {"kind": "chi_square", "k": self.k}


@dataclass(frozen=True)
class Uniform(MarginalDistribution):
    a: float = 0.0
    b: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not self.b > self.a:
            raise DistributionError("uniform requires b > a")

    @property
    def support_lo(self):
        return float(self.a)

    @property
    def support_hi(self):
        return float(self.b)

    @property
    def scale(self):
        return float(self.b - self.a)

    def _cdf(self, y):
        return np.clip((y - self.a) / (self.b - self.a), 0.0, 1.0)

    def _pdf(self, y):
        return np.where((y >= self.a) & (y <= self.b), 1.0 / (self.b - self.a), 0.0)

    def _ppf(self, q):
        return self.a + q * (self.b - self.a)

    def to_dict(self):
        return {"kind": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class NormalMixture(MarginalDistribution):
    weights: tuple[float, ...]
    means: tuple[float, ...]
    variances: tuple[float, ...]
    fit_sup_distance: float | None = field(default=None, compare=False)
    kind = "normal_mixture"

    def __post_init__(self):
        w = np.asarray(self.weights, float)
        if not (len(self.weights) == len(self.means) == len(self.variances) >= 1):
            raise DistributionError("normal_mixture needs equal-length, nonempty parameter lists")
        if np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise DistributionError("normal_mixture weights must be nonnegative and sum to 1")
        if np.any(np.asarray(self.variances, float) <= 0):
            raise DistributionError("normal_mixture variances must be positive")

    @cached_property
    def _params(self):
        return (np.asarray(self.weights, float), np.asarray(self.means, float),
                np.sqrt(np.asarray(self.variances, float)))

    @property
    def scale(self):
        w, m, s = self._params
        mean = w @ m
        return float(np.sqrt(w @ (s**2 + (m - mean) ** 2)))

    def effective_range(self, tail: float = TAIL):
        w, m, s = self._params
        z = -special.ndtri(tail)
        return float(np.min(m - z * s)), float(np.max(m + z * s))

    def _cdf(self, y):
        w, m, s = self._params
        return special.ndtr((y[..., None] - m) / s) @ w

    def _pdf(self, y):
        w, m, s = self._params
        z = (y[..., None] - m) / s
        return (np.exp(-0.5 * z * z) / (s * math.sqrt(2 * math.pi))) @ w

    def to_dict(self):
        return {"kind": "normal_mixture", "weights": list(self.weights),
                "means": list(self.means), "variances": list(self.variances)}


@dataclass(frozen=True)
class Chi2NormalConvolution(MarginalDistribution):
    """Law of beta + eps with beta ~ chi2(k1) independent of eps ~ N(0, k2).

    The CDF is E[Phi((y - beta)/sqrt(k2))].  Substituting beta = t**2 makes the
    integrand smooth for every k1 >= 1, so composite Gauss-Legendre in t is
    accurate to rounding.  A cubic Hermite table built from exact values and
    densities serves repeated evaluation inside the optimisers.
    """

    k1: int = 1
    k2: float = 1.0
    panels: int = field(default=32, compare=False)
    order: int = field(default=16, compare=False)
    kind = "chi2_normal_convolution"

    def __post_init__(self):
        if int(self.k1) != self.k1 or self.k1 < 1:
            raise DistributionError("k1 must be a positive integer")
        if not self.k2 > 0:
            raise DistributionError("k2 must be > 0; the degenerate case is not absolutely continuous")

    @property
    def sigma(self):
        return math.sqrt(self.k2)

    @property
    def scale(self):
        return math.sqrt(2 * self.k1 + self.k2)

    @cached_property
    def _nodes(self):
        k1 = self.k1
        t_max = math.sqrt(special.chdtri(k1, 1e-18))
        x, w = np.polynomial.legendre.leggauss(self.order)
        edges = np.linspace(0.0, t_max, self.panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        t = ((b - a) / 2 * x + (a + b) / 2).ravel()
        wt = ((b - a) / 2 * w).ravel()
        log_c = -(k1 / 2) * math.log(2) - special.gammaln(k1 / 2)
        dens = 2 * np.exp(log_c + (k1 - 1) * np.log(t) - t * t / 2)
        wt = wt * dens
        return t * t, wt / wt.sum()

    def cdf_exact(self, y):
        """CDF by direct quadrature (no tabulation)."""
        beta, w = self._nodes
        y_arr = np.asarray(y, float)
        out = special.ndtr((y_arr[..., None] - beta) / self.sigma) @ w
        return _out(np.clip(out, 0, 1), y)

    def pdf_exact(self, y):
        beta, w = self._nodes
        y_arr = np.asarray(y, float)
        z = (y_arr[..., None] - beta) / self.sigma
        out = (np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2 * math.pi))) @ w
        return _out(out, y)

    def effective_range(self, tail: float = TAIL):
        z = -special.ndtri(tail)
        return -z * self.sigma, float(special.chdtri(self.k1, tail)) + z * self.sigma

    @cached_property
    def _table(self):
        lo, hi = self.effective_range(1e-16)
        h = min(0.01 * self.sigma, 0.01)
        n = int(math.ceil((hi - lo) / h)) + 1
        x = np.linspace(lo, hi, n)
        chunks = [slice(i, i + 2000) for i in range(0, n, 2000)]
        f = np.concatenate([np.asarray(self.cdf_exact(x[c])) for c in chunks])
        d = np.concatenate([np.asarray(self.pdf_exact(x[c])) for c in chunks])
        f = np.clip(np.maximum.accumulate(f), 0.0, 1.0)
        return x, f, CubicHermiteSpline(x, f, d, extrapolate=False)

    @cached_property
    def _linear_cells(self):
        # the cubic ripples by an ulp where the CDF is flat; interpolate those cells linearly
        _, f, _ = self._table
        return (f[1:] <= 1e-10) | (f[:-1] >= 1.0 - 1e-10)

    def _cdf(self, y):
        x, f, _ = self._table
        y = np.asarray(y, float)
        out = np.array(self._tabulated(y, 0, self.cdf_exact), ndmin=1)
        flat = np.atleast_1d(y)
        cell = np.clip(np.searchsorted(x, flat, side="right") - 1, 0, x.size - 2)
        lin = self._linear_cells[cell] & (flat > x[0]) & (flat < x[-1])
        out[lin] = np.interp(flat[lin], x, f)
        out = np.where(flat >= x[-1], np.maximum(out, f[-1]), np.where(flat <= x[0], np.minimum(out, f[0]), out))
        return out.reshape(y.shape)

    def _pdf(self, y):
        return self._tabulated(y, 1, self.pdf_exact)

    def _tabulated(self, y, nu, exact):
        x, _, spline = self._table
        y = np.asarray(y, float)
        out = np.asarray(spline(y, nu), float)
        outside = (y <= x[0]) | (y >= x[-1])
        if np.any(outside):
            out = np.array(out, ndmin=1)
            flat = np.atleast_1d(y)
            mask = np.atleast_1d(outside)
            out[mask] = exact(flat[mask])
            out = out.reshape(y.shape)
        return out

    def to_dict(self):
        return {"kind": "chi2_normal_convolution", "k1": self.k1, "k2": self.k2}


@dataclass(frozen=True, eq=False)
class StepCDF(MarginalDistribution):
    """Right-continuous step function: F(y) = values[i] for points[i] <= y < points[i+1]."""

    points: np.ndarray
    values: np.ndarray
    kind = "step_cdf"
    continuous = False

    def __post_init__(self):
        p = np.asarray(self.points, float)
        v = np.asarray(self.values, float)
        if p.ndim != 1 or p.shape != v.shape or p.size == 0:
            raise DistributionError("step_cdf needs equal-length 1-d breakpoints and values")
        if np.any(np.diff(p) <= 0):
            raise DistributionError("step_cdf breakpoints must be strictly increasing")
        if np.any(np.diff(v) < 0) or v[0] < 0 or v[-1] > 1 + 1e-12:
            raise DistributionError("step_cdf values must be nondecreasing in [0, 1]")
        p.setflags(write=False)
        v = np.minimum(v, 1.0)
        v.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "values", v)

    @property
    def support_lo(self):
        return float(self.points[0])

    @property
    def support_hi(self):
        return float(self.points[-1])

    @property
    def scale(self):
        span = self.points[-1] - self.points[0]
        return float(span) if span > 0 else 1.0

    def _cdf(self, y):
        idx = np.searchsorted(self.points, y, side="right") - 1
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)

    def _pdf(self, y):
        return np.zeros_like(y, dtype=float)

    def _ppf(self, q):
        idx = np.searchsorted(self.values, q - 1e-15, side="left")
        return np.where(idx < self.points.size, self.points[np.minimum(idx, self.points.size - 1)], np.inf)

    def to_dict(self):
        return {"kind": "step_cdf", "points": [[float(a), float(b)] for a, b in zip(self.points, self.values)]}


@dataclass(frozen=True, eq=False)
class Shifted(MarginalDistribution):
    """Law of X + loc where X ~ base."""

    base: MarginalDistribution
    loc: float = 0.0
    kind = "shifted"

    @property
    def continuous(self):
        return self.base.continuous

    @property
    def support_lo(self):
        return self.base.support_lo + self.loc

    @property
    def support_hi(self):
        return self.base.support_hi + self.loc

    @property
    def scale(self):
        return self.base.scale

    def effective_range(self, tail: float = TAIL):
        lo, hi = self.base.effective_range(tail)
        return lo + self.loc, hi + self.loc

    def _cdf(self, y):
        return self.base._cdf(y - self.loc)

    def _pdf(self, y):
        return self.base._pdf(y - self.loc)

    def _ppf(self, q):
        return self.base._ppf(q) + self.loc

    def to_dict(self):
        return {"kind": "shifted", "base": self.base.to_dict(), "loc": self.loc}


def shift(d: MarginalDistribution, loc: float) -> MarginalDistribution:
    """Location shift; step CDFs stay step CDFs so their exact code paths still apply."""
    if loc == 0:
        return d
    if isinstance(d, StepCDF):
        return StepCDF(d.points + loc, d.values)
    return Shifted(d, float(loc))


# -- module-level operations -------------------------------------------------

def cdf(d: MarginalDistribution, y):
    return d.cdf(y)


def quantile(d: MarginalDistribution, q):
    return d.quantile(q)


def convolve_chi2_normal(k1: int, k2: float) -> Chi2NormalConvolution:
    return Chi2NormalConvolution(k1=k1, k2=k2)


def from_spec(spec: dict[str, Any]) -> MarginalDistribution:
    """Build a distribution from its JSON object form."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise DistributionError(f"distribution spec must be an object with a 'kind': {spec!r}")
    kind = spec["kind"]
    try:
        if kind == "normal":
            return Normal(float(spec.get("mu", 0.0)), float(spec.get("sigma2", 1.0)))
        if kind == "chi_square":
            return ChiSquare(float(spec["k"]))
        if kind == "chi2_normal_convolution":
            return Chi2NormalConvolution(int(spec["k1"]), float(spec["k2"]))
        if kind == "normal_mixture":
            return NormalMixture(tuple(map(float, spec["weights"])), tuple(map(float, spec["means"])),
                                 tuple(map(float, spec["variances"])))
        if kind == "uniform":
            return Uniform(float(spec.get("a", 0.0)), float(spec.get("b", 1.0)))
        if kind == "shifted":
            return shift(from_spec(spec["base"]), float(spec.get("loc", 0.0)))
        if kind == "step_cdf":
            pts = np.asarray(spec["points"], float)
            return StepCDF(pts[:, 0], pts[:, 1])
    except (KeyError, TypeError, IndexError) as exc:
        raise DistributionError(f"malformed {kind} spec: {exc}") from exc
    raise DistributionError(f"unknown distribution kind {kind!r}")


def rearrange_monotone(values: Sequence[float]) -> list[float]:
    """Monotone rearrangement of an estimated quantile curve (sorting)."""
    if len(values) == 0:
        raise ValueError("cannot rearrange an empty curve")
    return sorted(float(v) for v in values)


def step_cdf_from_quantiles(q_grid: Sequence[float], monotone_quantiles: Sequence[float]) -> StepCDF:
    q = np.asarray(q_grid, float)
    y = np.asarray(monotone_quantiles, float)
    if q.shape != y.shape or q.ndim != 1 or q.size == 0:
        raise ValueError("q_grid and quantiles must have equal length")
    if np.any((q <= 0) | (q >= 1)) or np.any(np.diff(q) <= 0):
        raise ValueError("q_grid must be strictly increasing in (0, 1)")
    if np.any(np.diff(y) < 0):
        raise ValueError("quantiles are not monotone; apply rearrange_monotone first")
    # at tied quantile values the largest probability wins
    last = np.r_[y[1:] != y[:-1], True]
    return StepCDF(y[last], q[last])


def fit_normal_mixture(target: MarginalDistribution, eval_grid: Sequence[float], max_components: int = 3,
                       ks_threshold: float = 0.01, seed: int = 0) -> NormalMixture:
    """Smallest normal mixture whose CDF is within ``ks_threshold`` of the target on the grid.

    Each order is fitted by least squares on the CDF values, then accepted on
    the sup-distance over the grid.
    """
    grid = np.asarray(eval_grid, float)
    if grid.size < 50:
        raise ValueError("eval_grid needs at least 50 points")
    if max_components < 1:
        raise ValueError("max_components must be >= 1")
    target_vals = np.asarray(target.cdf(grid))
    span = float(grid.max() - grid.min())
    rng = np.random.default_rng(seed)
    # quantile levels from the grid itself, so step/bounded targets work too
    inner = np.clip(target_vals, 1e-6, 1 - 1e-6)
    best_dist = math.inf
    for m in range(1, max_components + 1):
        starts = []
        for r in range(6):
            levels = (np.arange(m) + 0.5) / m if r == 0 else np.sort(rng.uniform(0.05, 0.95, m))
            means = np.interp(levels, inner, grid)
            sd = np.full(m, max(span / (4 * m), 1e-3))
            starts.append(np.r_[np.zeros(m - 1), means, np.log(sd)])
        fitted = None
        for x0 in starts:
            sol = optimize.least_squares(lambda th: _mixture_from_theta(th, m)._cdf(grid) - target_vals,
                                         x0, method="trf", xtol=1e-12, ftol=1e-12, max_nfev=4000)
            dist = float(np.max(np.abs(sol.fun)))
            if fitted is None or dist < fitted[0]:
                fitted = (dist, sol.x)
        best_dist = min(best_dist, fitted[0])
        if fitted[0] < ks_threshold:
            mix = _mixture_from_theta(fitted[1], m)
            return NormalMixture(mix.weights, mix.means, mix.variances, fit_sup_distance=fitted[0])
    raise FitFailureError(f"no mixture with <= {max_components} components within {ks_threshold} "
                          f"(best sup-distance {best_dist:.3g})")


def _mixture_from_theta(theta: np.ndarray, m: int) -> NormalMixture:
    logits = np.r_[0.0, theta[: m - 1]]
    w = np.exp(logits - logits.max())
    w = w / w.sum()
    means = theta[m - 1: 2 * m - 1]
    var = np.exp(2 * np.clip(theta[2 * m - 1:], -30, 30))
    w = w / w.sum()
    return NormalMixture(tuple(w), tuple(means), tuple(var))
