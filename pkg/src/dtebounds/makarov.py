"""Bounds without support restrictions, Frechet bounds and the attaining copulas."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np
from scipy import optimize

from ._validation import check_probability
from .distributions import MarginalDistribution, StepCDF

SCAN_POINTS = 2001
METHODS = ("makarov", "mtr", "concave", "convex", "roy")


class NegativeCellMassError(ValueError):
    """The supplied function is not 2-increasing on the evaluation grid."""


@dataclass
class BoundsCurve:
    """Lower and upper DTE bounds on a strictly increasing grid of deltas.

    Both curves are made nondecreasing on construction: the lower curve by a
    running maximum from the left and the upper by a running minimum from the
    right.  Each replacement is itself a valid bound because the DTE is a CDF.
    """

    deltas: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    method: str
    attaining: list[Any] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.deltas = np.asarray(self.deltas, float)
        lo = np.clip(np.asarray(self.lower, float), 0.0, 1.0)
        up = np.clip(np.asarray(self.upper, float), 0.0, 1.0)
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not (self.deltas.ndim == 1 and self.deltas.shape == lo.shape == up.shape):
            raise ValueError("deltas, lower and upper must be 1-d arrays of equal length")
        if np.any(np.diff(self.deltas) <= 0):
            raise ValueError("deltas must be strictly increasing")
        self.lower = np.maximum.accumulate(lo)
        self.upper = np.minimum.accumulate(up[::-1])[::-1]
        if np.any(self.lower > self.upper + 1e-9):
            i = int(np.argmax(self.lower - self.upper))
            raise ValueError(f"lower exceeds upper at delta={self.deltas[i]:.6g}")

    def __len__(self):
        return self.deltas.size


def _is_step(d: MarginalDistribution) -> bool:
    return isinstance(d, StepCDF)


def _scan_range(F0, F1, delta):
    lo1, hi1 = F1.effective_range()
    lo0, hi0 = F0.effective_range()
    return min(lo1, lo0 + delta), max(hi1, hi0 + delta)


def _diff(F0, F1, delta):
    return lambda y: np.asarray(F1.cdf(y)) - np.asarray(F0.cdf(np.asarray(y) - delta))


def _extremum(F0, F1, delta: float, sign: float) -> tuple[float, float]:
    """sup_y sign * (F1(y) - F0(y - delta)), returned as (value, argmax)."""
    diff = _diff(F0, F1, delta)
    if _is_step(F0) or _is_step(F1):
        cands = []
        for d, off in ((F1, 0.0), (F0, delta)):
            if _is_step(d):
                cands.append(d.points + off)
        lo, hi = _scan_range(F0, F1, delta)
        cands.append(np.linspace(lo, hi, SCAN_POINTS))
        cands.append([lo - 1.0])
        ys = np.unique(np.concatenate(cands))
        vals = sign * diff(ys)
        i = int(np.argmax(vals))
        return float(vals[i]), float(ys[i])
    lo, hi = _scan_range(F0, F1, delta)
    ys = np.linspace(lo, hi, SCAN_POINTS)
    vals = sign * diff(ys)
    i = int(np.argmax(vals))
    a, b = ys[max(i - 1, 0)], ys[min(i + 1, ys.size - 1)]
    best_y, best_v = float(ys[i]), float(vals[i])
    if b > a:
        res = optimize.minimize_scalar(lambda y: -sign * float(diff(y)), bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10})
        if -res.fun > best_v:
            best_y, best_v = float(res.x), float(-res.fun)
    return best_v, best_y


def makarov_lower(F0: MarginalDistribution, F1: MarginalDistribution, delta: float) -> tuple[float, float]:
    """sup_y max(F1(y) - F0(y - delta), 0) and a maximiser."""
    v, y = _extremum(F0, F1, float(delta), 1.0)
    return max(v, 0.0), y


def makarov_upper(F0: MarginalDistribution, F1: MarginalDistribution, delta: float) -> tuple[float, float]:
    """1 + inf_y min(F1(y) - F0(y - delta), 0) and a minimiser."""
    v, y = _extremum(F0, F1, float(delta), -1.0)
    return 1.0 + min(-v, 0.0), y


def makarov_curve(F0, F1, deltas: Sequence[float]) -> BoundsCurve:
    lo, up, wit = [], [], []
    for d in deltas:
        lv, ly = makarov_lower(F0, F1, d)
        uv, uy = makarov_upper(F0, F1, d)
        lo.append(lv)
        up.append(uv)
        wit.append({"lower_y": ly, "upper_y": uy})
    return BoundsCurve(np.asarray(deltas, float), np.asarray(lo), np.asarray(up), "makarov", wit)


def frechet_rectangle(p0: float, p1: float) -> tuple[float, float]:
    """Sharp bounds on Pr(A0 x A1) given the two marginal probabilities."""
    check_probability(p0, "p0")
    check_probability(p1, "p1")
    return max(p0 + p1 - 1.0, 0.0), min(p0, p1)


def attaining_copula_upper(s, u, v):
    """C_s^U: min(u+s-1, v) on [1-s, 1] x [0, s], countermonotone elsewhere."""
    for name, x in (("s", s), ("u", u), ("v", v)):
        check_probability(x, name)
    s, u, v = (np.asarray(x, float) for x in (s, u, v))
    inside = (u >= 1 - s) & (v <= s)
    out = np.where(inside, np.minimum(u + s - 1, v), np.maximum(u + v - 1, 0.0))
    return float(out) if out.ndim == 0 else out


def attaining_copula_lower(t, u, v):
    """C_t^L: min(u, v-t) on [0, 1-t] x [t, 1], countermonotone elsewhere."""
    for name, x in (("t", t), ("u", u), ("v", v)):
        check_probability(x, name)
    t, u, v = (np.asarray(x, float) for x in (t, u, v))
    inside = (u <= 1 - t) & (v >= t)
    out = np.where(inside, np.minimum(u, v - t), np.maximum(u + v - 1, 0.0))
    return float(out) if out.ndim == 0 else out


def dte_under_copula(F0: MarginalDistribution, F1: MarginalDistribution,
                     copula: Callable[[np.ndarray, np.ndarray], np.ndarray], delta: float, n: int = 400,
                     refine: int = 8) -> float:
    """Pr(Y1 - Y0 <= delta) when (F0(Y0), F1(Y1)) has joint CDF ``copula``.

    The copula measure is split into n x n cells by inclusion-exclusion.  A
    cell whose quantile image lies inside or outside the event counts fully or
    not at all.  Boundary cells are halved ``refine`` times, keeping only the
    children that still straddle the boundary, and the last level is assigned
    by its midpoint image.  Refinement matters for singular copulas, whose
    mass sits on lines that the midpoint of a coarse cell can miss.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    g = np.linspace(0.0, 1.0, n + 1)
    U, V = np.meshgrid(g, g, indexing="ij")
    C = np.asarray(copula(U, V), float)
    mass = C[1:, 1:] - C[:-1, 1:] - C[1:, :-1] + C[:-1, :-1]
    if mass.min() < -1e-12:
        raise NegativeCellMassError(f"negative cell mass {mass.min():.3g}")
    q0, q1 = _quantile_or_inf(F0, g), _quantile_or_inf(F1, g)
    with np.errstate(invalid="ignore"):
        inside = q1[None, 1:] - q0[:-1, None] <= delta
        outside = q1[None, :-1] - q0[1:, None] > delta
    total = float(np.sum(np.clip(mass, 0.0, None)[inside]))
    iu, iv = np.nonzero(~inside & ~outside)
    u0, v0, w = g[iu], g[iv], np.full(iu.size, 1.0 / n)
    for level in range(refine + 1):
        if u0.size == 0:
            break
        if level == refine:
            m = _cell_mass(copula, u0, v0, w)
            y0 = np.asarray(F0.quantile(u0 + w / 2))
            y1 = np.asarray(F1.quantile(v0 + w / 2))
            total += float(np.sum(m[y1 - y0 <= delta]))
            break
        h = w / 2
        u0 = np.concatenate([u0, u0 + h, u0, u0 + h])
        v0 = np.concatenate([v0, v0, v0 + h, v0 + h])
        w = np.tile(h, 4)
        with np.errstate(invalid="ignore", divide="ignore"):
            lo0 = _quantile_or_inf(F0, u0)
            hi0 = _quantile_or_inf(F0, u0 + w)
            lo1 = _quantile_or_inf(F1, v0)
            hi1 = _quantile_or_inf(F1, v0 + w)
            ins = hi1 - lo0 <= delta
            out = lo1 - hi0 > delta
        total += float(np.sum(_cell_mass(copula, u0[ins], v0[ins], w[ins])))
        keep = ~ins & ~out
        u0, v0, w = u0[keep], v0[keep], w[keep]
    return total


def _quantile_or_inf(F: MarginalDistribution, p: np.ndarray) -> np.ndarray:
    out = np.empty_like(p)
    lo, hi = p <= 0, p >= 1
    mid = ~lo & ~hi
    out[lo], out[hi] = -np.inf, np.inf
    out[mid] = F.quantile(p[mid])
    return out


def _cell_mass(copula, u0, v0, w) -> np.ndarray:
    u1, v1 = np.minimum(u0 + w, 1.0), np.minimum(v0 + w, 1.0)
    m = (np.asarray(copula(u1, v1)) - np.asarray(copula(u0, v1)) - np.asarray(copula(u1, v0))
         + np.asarray(copula(u0, v0)))
    return np.clip(m, 0.0, None)
