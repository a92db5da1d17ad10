"""Brute-force verification by discrete optimal transport.

Marginals are gridded, forbidden cells of the support restriction are removed
from the bipartite graph, and the 0/1-cost transportation problem is solved
exactly as an integer min-cost flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Any, Sequence

import networkx as nx
import numpy as np

from .distributions import MarginalDistribution
from .restrictions import RestrictionSpec

MASS_SCALE = 10**9
TIE_TOL = 1e-9


class CoverageError(ValueError):
    """The discretisation window misses too much probability mass."""


class InfeasibleRestrictionError(RuntimeError):
    """No coupling of the two marginals is supported on the allowed cells."""

    def __init__(self, message: str, certificate: dict[str, Any]):
        super().__init__(message)
        self.certificate = certificate


@dataclass(frozen=True, eq=False)
class DiscreteMarginal:
    points: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, float)
        m = np.asarray(self.masses, float)
        if p.ndim != 1 or p.shape != m.shape or p.size == 0:
            raise ValueError("points and masses must be equal-length 1-d arrays")
        if np.any(np.diff(p) <= 0):
            raise ValueError("points must be strictly increasing")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-10:
            raise ValueError("masses must be nonnegative and sum to 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "masses", m)

    @property
    def size(self) -> int:
        return self.points.size

    def integer_masses(self, scale: int = MASS_SCALE) -> np.ndarray:
        """Masses in units of 1/scale, rounded on the cumulative scale.

        Rounding the CDF rather than each cell keeps every inequality between
        two discrete CDFs on a common grid, so dominance survives scaling.
        """
        c = np.round(np.cumsum(self.masses) * scale).astype(np.int64)
        c[-1] = scale
        return np.diff(np.r_[0, c])


@dataclass(frozen=True, eq=False)
class DiscreteCoupling:
    pi: np.ndarray
    mask: np.ndarray
    info: dict[str, Any] = field(default_factory=dict)

    def check(self, mu0: DiscreteMarginal, mu1: DiscreteMarginal, tol: float = 1e-8) -> None:
        if np.any(self.pi < 0) or np.any(self.pi[~self.mask] != 0):
            raise AssertionError("coupling puts mass on forbidden cells")
        if np.max(np.abs(self.pi.sum(axis=1) - mu0.masses)) > tol:
            raise AssertionError("row sums differ from mu0")
        if np.max(np.abs(self.pi.sum(axis=0) - mu1.masses)) > tol:
            raise AssertionError("column sums differ from mu1")


def discretize(F: MarginalDistribution, n: int, lo: float, hi: float) -> DiscreteMarginal:
    """n equal cells on [lo, hi] represented by their midpoints; tails folded into the end cells."""
    if n < 2 or not lo < hi:
        raise ValueError("need n >= 2 and lo < hi")
    edges = np.linspace(lo, hi, n + 1)
    c = np.asarray(F.cdf(edges), float)
    missed = c[0] + (1.0 - c[-1])
    if missed > 1e-4:
        raise CoverageError(f"[{lo}, {hi}] misses {missed:.3g} of the mass")
    m = np.diff(c)
    m[0] += c[0]
    m[-1] += 1.0 - c[-1]
    m = np.maximum(m, 0.0)
    m /= m.sum()
    return DiscreteMarginal((edges[:-1] + edges[1:]) / 2, m)


def build_mask(points0, points1, restriction: RestrictionSpec | None = None) -> np.ndarray:
    """Boolean matrix, True where (y0_i, y1_j) lies in the support set."""
    y0 = np.asarray(points0, float)[:, None]
    y1 = np.asarray(points1, float)[None, :]
    r = restriction or RestrictionSpec.none()
    if r.kind == "none":
        return np.ones((y0.size, y1.size), dtype=bool)
    if r.kind == "mtr":
        return np.broadcast_to(y1 >= y0, (y0.size, y1.size)).copy()
    if r.kind in ("concave", "convex"):
        ctx = r.shape
        base = (y1 >= y0) & (y0 >= ctx.w)
        line = ctx.line(y0)
        return base & ((y1 <= line) if r.kind == "concave" else (y1 >= line))
    if r.kind == "roy":
        gap = y1 - y0
        return (gap >= r.m_C) if r.d == 1 else (gap < r.m_C)
    raise ValueError(r.kind)


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    certificate: dict[str, Any]

    def __bool__(self):
        return self.feasible


def _is_mtr_mask(mu0, mu1, mask):
    return mask.shape == (mu0.size, mu1.size) and np.array_equal(mask, mu1.points[None, :] >= mu0.points[:, None])


def check_feasibility(mu0: DiscreteMarginal, mu1: DiscreteMarginal, mask: np.ndarray | None = None) -> Feasibility:
    """Does some coupling of mu0 and mu1 live on the allowed cells?

    MTR masks use the dominance condition directly.  Other masks use max-flow;
    on failure the certificate is a Hall set of rows whose allowed columns
    carry less mass than the rows themselves.
    """
    if mask is None:
        return Feasibility(True, {"kind": "product"})
    mask = np.asarray(mask, bool)
    m0 = mu0.integer_masses()
    m1 = mu1.integer_masses()
    if _is_mtr_mask(mu0, mu1, mask):
        t = np.union1d(mu0.points, mu1.points)
        c0 = np.r_[0, np.cumsum(m0)][np.searchsorted(mu0.points, t, side="right")]
        c1 = np.r_[0, np.cumsum(m1)][np.searchsorted(mu1.points, t, side="right")]
        gap = c1 - c0
        i = int(np.argmax(gap))
        if gap[i] > 0:
            return Feasibility(False, {"kind": "dominance", "threshold": float(t[i]),
                                       "F1": float(c1[i] / MASS_SCALE), "F0": float(c0[i] / MASS_SCALE)})
        return Feasibility(True, {"kind": "dominance"})
    if mask.all():
        return Feasibility(True, {"kind": "product"})
    G = nx.DiGraph()
    for i in np.flatnonzero(m0):
        G.add_edge("s", ("r", int(i)), capacity=int(m0[i]))
    for j in np.flatnonzero(m1):
        G.add_edge(("c", int(j)), "t", capacity=int(m1[j]))
    rows, cols = np.nonzero(mask)
    for i, j in zip(rows, cols):
        if m0[i] and m1[j]:
            G.add_edge(("r", int(i)), ("c", int(j)))
    if "s" not in G or "t" not in G:
        return Feasibility(False, {"kind": "empty"})
    flow, (side_s, _) = nx.minimum_cut(G, "s", "t")
    if flow == MASS_SCALE:
        return Feasibility(True, {"kind": "maxflow"})
    hall = sorted(n[1] for n in side_s if isinstance(n, tuple) and n[0] == "r")
    nbr = sorted(n[1] for n in side_s if isinstance(n, tuple) and n[0] == "c")
    return Feasibility(False, {"kind": "hall", "rows": hall, "row_mass": float(m0[hall].sum() / MASS_SCALE),
                               "neighbour_mass": float(m1[nbr].sum() / MASS_SCALE),
                               "max_flow": flow / MASS_SCALE})


def _min_cost(mu0, mu1, mask, cost):
    m0 = mu0.integer_masses()
    m1 = mu1.integer_masses()
    G = nx.DiGraph()
    n0, n1 = mu0.size, mu1.size
    for i in range(n0):
        G.add_node(i, demand=-int(m0[i]))
    for j in range(n1):
        G.add_node(n0 + j, demand=int(m1[j]))
    rows, cols = np.nonzero(mask)
    c = cost[rows, cols]
    G.add_weighted_edges_from(((int(i), n0 + int(j), int(w)) for i, j, w in zip(rows, cols, c)), weight="weight")
    try:
        total, flow = nx.network_simplex(G)
    except nx.NetworkXUnfeasible:
        return None
    pi = np.zeros((n0, n1))
    for i in range(n0):
        for k, f in flow[i].items():
            if f:
                pi[i, k - n0] = f / MASS_SCALE
    return total / MASS_SCALE, pi


def solve_transport_lp(mu0: DiscreteMarginal, mu1: DiscreteMarginal, mask: np.ndarray | None, delta: float,
                       direction: str = "min_below") -> tuple[float, DiscreteCoupling]:
    """Smallest or largest Pr(Y1 - Y0 <= delta) over couplings supported on ``mask``.

    min_below minimises the mass on y1 - y0 < delta.  max_below is one minus
    the minimal mass on y1 - y0 > delta.
    """
    if direction not in ("min_below", "max_below"):
        raise ValueError("direction must be min_below or max_below")
    mask = np.ones((mu0.size, mu1.size), bool) if mask is None else np.asarray(mask, bool)
    gap = mu1.points[None, :] - mu0.points[:, None]
    # grid differences that equal delta up to rounding count as ties
    tol = TIE_TOL * max(1.0, abs(delta), float(np.abs(gap).max()))
    cost = (gap < delta - tol) if direction == "min_below" else (gap > delta + tol)
    res = _min_cost(mu0, mu1, mask, cost.astype(np.int64))
    if res is None:
        feas = check_feasibility(mu0, mu1, mask)
        raise InfeasibleRestrictionError("no coupling is supported on the allowed cells", feas.certificate)
    total, pi = res
    value = total if direction == "min_below" else 1.0 - total
    return float(value), DiscreteCoupling(pi, mask, {"direction": direction, "delta": float(delta)})


def support_window(F0: MarginalDistribution, F1: MarginalDistribution, tail: float = 1e-5) -> tuple[float, float]:
    """Smallest interval holding all but ``tail`` of each marginal in each tail."""
    lo = min(float(F.quantile(tail)) if not np.isfinite(F.support_lo) else F.support_lo for F in (F0, F1))
    hi = max(float(F.quantile(1 - tail)) if not np.isfinite(F.support_hi) else F.support_hi for F in (F0, F1))
    return lo, hi


def aligned_window(lo: float, hi: float, deltas: Sequence[float], n_min: int) -> tuple[float, float]:
    """Widen [lo, hi] so that cell widths at n_min, 2 n_min, 4 n_min, ... divide every delta.

    Differences of midpoints are multiples of the cell width, so alignment
    makes the discrete event y1 - y0 < delta match its continuous
    counterpart.  When even the coarsest aligned width is too narrow, the
    width at n_min becomes a power-of-two multiple of the common unit, so the
    finer nested grids become aligned after enough halvings.
    """
    fr = [Fraction(float(d)).limit_denominator(10**6) for d in deltas if d != 0]
    if not fr:
        return lo, hi
    num = reduce(math.gcd, (abs(f.numerator) for f in fr))
    den = reduce(lambda a, b: a * b // math.gcd(a, b), (f.denominator for f in fr))
    unit = num / den
    need = hi - lo
    k = math.floor(n_min * unit / need)
    if k >= 1:
        width = n_min * unit / k
    else:
        width = n_min * unit * 2 ** math.ceil(math.log2(need / (n_min * unit)))
    pad = (width - need) / 2
    return lo - pad, hi + pad


def discretize_pair(F0: MarginalDistribution, F1: MarginalDistribution, n: int, lo: float | None = None,
                    hi: float | None = None, tail: float = 1e-5) -> tuple[DiscreteMarginal, DiscreteMarginal]:
    """Both marginals on one common grid, by default covering all but ``tail`` of each."""
    if lo is None or hi is None:
        lo, hi = support_window(F0, F1, tail)
    return discretize(F0, n, lo, hi), discretize(F1, n, lo, hi)
