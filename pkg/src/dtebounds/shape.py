"""Sharp DTE bounds under concave or convex treatment response, given W = w.

With g(y) = S1 (y - w) + w the support ray through (w, w), the concave region
is w <= y0 <= y1 <= g(y0) and the convex region is y1 >= g(y0), y0 >= w.  All
bounds are chain sums (see ``chain``):

* concave lower: A = F1w, B = F0w, x_{k+1} <= max(x_k + delta, w + delta/T1)
* concave upper: 1 - chain with A = F0w, B = F1w o g, x_{k+1} <= g(x_k) - delta
* convex lower:  A = F1w o g, B = F0w, x_{k+1} <= T0 (max(x_k, w) + delta) + T1 w
* convex upper:  1 - sup_x [1 - F0w(max(x, a*)) + max(F0w(x) - F1w(x + delta), 0)]

where a* = w + delta T0 / T1 is where the ray bound (S1 - 1)(y0 - w) on
Y1 - Y0 equals delta.  The concave lower chain also gains F0w(min(x_0, a*))
for its first point, since {Y0 <= a*} forces Y1 - Y0 <= delta.

Both regions lie inside the MTR region, so the MTR bounds are also valid and
are folded in.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import optimize

from .chain import CdfMap, ChainProblem, ChainResult, solve_chain
from .distributions import MarginalDistribution
from .makarov import BoundsCurve, makarov_upper
from .mtr import MtrOptions, mtr_lower
from .restrictions import ShapeContext

SUPPORT_TOL = 1e-6


class SupportViolationError(ValueError):
    """Conditional marginal puts mass below the pre-treatment outcome w."""


@dataclass(frozen=True)
class WMixture:
    """Finite distribution of the pre-treatment outcome."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("WMixture needs at least one atom")
        wts = np.array([p for _, p in self.atoms], float)
        if np.any(wts < 0) or abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError("atom weights must be nonnegative and sum to 1")

    @property
    def values(self) -> np.ndarray:
        return np.array([w for w, _ in self.atoms], float)

    @property
    def weights(self) -> np.ndarray:
        return np.array([p for _, p in self.atoms], float)

    @classmethod
    def from_distribution(cls, F_W: MarginalDistribution, n: int = 32) -> "WMixture":
        """Gauss-Legendre atoms in the probability scale: w_i = Q(u_i)."""
        x, wt = np.polynomial.legendre.leggauss(n)
        u = (x + 1) / 2
        wt = wt / wt.sum()
        return cls(tuple(zip(map(float, F_W.quantile(u)), map(float, wt))))


def mix_over_w(per_w: Sequence[float], mix: WMixture) -> float:
    vals = np.asarray(per_w, float)
    if vals.shape != (len(mix.atoms),):
        raise ValueError(f"expected {len(mix.atoms)} values, got {vals.size}")
    return float(vals @ mix.weights)


def _check_support(F0w: MarginalDistribution, ctx: ShapeContext):
    below = float(F0w.cdf(ctx.w - 1e-12 * max(1.0, abs(ctx.w))))
    if below > SUPPORT_TOL:
        raise SupportViolationError(f"F0w puts mass {below:.3g} below w={ctx.w}")


def _chain_kwargs(opts: MtrOptions, delta: float) -> dict:
    return dict(step_hint=delta, dp_grid=opts.dp_grid, h=opts.smoothing_h, max_refine_dim=opts.max_refine_dim,
                refine=opts.refine and opts.method == "full")


def _a_star(delta, ctx: ShapeContext) -> float:
    """Pre-treatment level below which the ray bound alone decides Y1 - Y0 versus delta."""
    return ctx.w + delta * ctx.T0 / ctx.T1


def concave_lower_problem(F0w, F1w, delta, ctx: ShapeContext) -> ChainProblem:
    return ChainProblem(CdfMap(F1w), CdfMap(F0w), ((1.0, delta), (0.0, ctx.w + delta / ctx.T1)),
                        name="concave_lower", head=CdfMap(F0w), head_cap=_a_star(delta, ctx))


def concave_upper_problem(F0w, F1w, delta, ctx: ShapeContext) -> ChainProblem:
    g = CdfMap(F1w, ctx.S1, (1.0 - ctx.S1) * ctx.w)
    return ChainProblem(CdfMap(F0w), g, ((ctx.S1, (1.0 - ctx.S1) * ctx.w - delta),), name="concave_upper")


def convex_lower_problem(F0w, F1w, delta, ctx: ShapeContext) -> ChainProblem:
    A = CdfMap(F1w, ctx.S1, (1.0 - ctx.S1) * ctx.w)
    c = ctx.T0 * delta + ctx.T1 * ctx.w
    return ChainProblem(A, CdfMap(F0w), ((ctx.T0, c), (0.0, ctx.T0 * ctx.w + c)), name="convex_lower")


def _lower(problem, F0w, F1w, delta, opts) -> tuple[float, ChainResult]:
    m_val, m_seq = mtr_lower(F0w, F1w, delta, opts)
    res = solve_chain(problem, extra=[ChainResult(m_val, m_seq.points, "mtr")], **_chain_kwargs(opts, delta))
    return min(max(res.value, 0.0), 1.0), res


def concave_bounds(F0w: MarginalDistribution, F1w: MarginalDistribution, delta: float, ctx: ShapeContext,
                   opts: MtrOptions = MtrOptions()) -> tuple[float, float]:
    """Sharp (lower, upper) bounds on Pr(Y1 - Y0 <= delta | W = w) under concave response."""
    _check_support(F0w, ctx)
    delta = float(delta)
    if delta < 0:
        return 0.0, 0.0
    lower, _ = _lower(concave_lower_problem(F0w, F1w, delta, ctx), F0w, F1w, delta, opts)
    up = solve_chain(concave_upper_problem(F0w, F1w, delta, ctx), **_chain_kwargs(opts, max(delta, 1e-3)))
    upper = min(1.0 - min(up.value, 1.0), makarov_upper(F0w, F1w, delta)[0])
    return lower, max(upper, lower)


def convex_bounds(F0w: MarginalDistribution, F1w: MarginalDistribution, delta: float, ctx: ShapeContext,
                  opts: MtrOptions = MtrOptions()) -> tuple[float, float]:
    """Sharp (lower, upper) bounds on Pr(Y1 - Y0 <= delta | W = w) under convex response."""
    _check_support(F0w, ctx)
    delta = float(delta)
    if delta < 0:
        return 0.0, 0.0
    lower, _ = _lower(convex_lower_problem(F0w, F1w, delta, ctx), F0w, F1w, delta, opts)
    upper = min(1.0 - _convex_exceed(F0w, F1w, delta, ctx), makarov_upper(F0w, F1w, delta)[0])
    return lower, max(upper, lower)


def _convex_exceed(F0w, F1w, delta, ctx: ShapeContext) -> float:
    """Lower bound on Pr(Y1 - Y0 > delta) under convex response.

    {Y0 > a*} lies inside the event because Y1 - Y0 >= (S1 - 1)(Y0 - w), and
    {Y0 <= x, Y1 > x + delta} is disjoint from it when x <= a*.
    """
    a = _a_star(delta, ctx)

    def obj(x):
        x = np.asarray(x, float)
        return (1.0 - np.asarray(F0w.cdf(np.maximum(x, a)))
                + np.maximum(np.asarray(F0w.cdf(x)) - np.asarray(F1w.cdf(x + delta)), 0.0))

    lo = min(F0w.effective_range()[0], F1w.effective_range()[0] - delta)
    xs = np.r_[np.linspace(lo, a, 2001), a]
    vals = obj(xs)
    i = int(np.argmax(vals))
    best = float(vals[i])
    if 0 < i < xs.size - 1:
        res = optimize.minimize_scalar(lambda t: -float(obj(t)), bounds=(xs[i - 1], xs[i + 1]), method="bounded",
                                       options={"xatol": 1e-10})
        best = max(best, -float(res.fun))
    return min(max(best, 0.0), 1.0)


def shape_curve(kind: str, F0w, F1w, deltas: Sequence[float], ctx: ShapeContext,
                opts: MtrOptions = MtrOptions()) -> BoundsCurve:
    fn = {"concave": concave_bounds, "convex": convex_bounds}[kind]
    pairs = [fn(F0w, F1w, d, ctx, opts) for d in deltas]
    return BoundsCurve(np.asarray(deltas, float), np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]),
                       kind)


def mixed_shape_bounds(kind: str, conditionals: Sequence[tuple[MarginalDistribution, MarginalDistribution]],
                       mix: WMixture, delta: float, t_W: float, t0: float, t1: float,
                       opts: MtrOptions = MtrOptions()) -> tuple[float, float]:
    """Unconditional bounds: conditional bounds at each atom of W averaged with the atom weights."""
    if len(conditionals) != len(mix.atoms):
        raise ValueError("one conditional pair per atom is required")
    fn = {"concave": concave_bounds, "convex": convex_bounds}[kind]
    lows, ups = [], []
    for (F0w, F1w), w in zip(conditionals, mix.values):
        lo, up = fn(F0w, F1w, delta, ShapeContext(float(w), t_W, t0, t1), opts)
        lows.append(lo)
        ups.append(up)
    return mix_over_w(lows, mix), mix_over_w(ups, mix)
