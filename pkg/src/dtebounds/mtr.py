"""Sharp DTE bounds under monotone treatment response.

The lower bound is a supremum of triangle sums over sequences with
0 <= a_{k+1} - a_k <= delta.  It is computed in four stages: an equal-spacing
scan over one period, a truncation to the 2K+1 terms that carry the mass,
smoothed local refinement of windows of 2J+1 base points for J = K..2K-1, and
a grid dynamic programme that supplies a global candidate.  The reported
bound is the largest exact objective among all feasible candidates.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import optimize

from .chain import (CdfMap, ChainProblem, ChainResult, InfeasibleStartError, best_of, dp_chain, refine_blocks,
                    refine_chain, trim_chain)
from .distributions import MarginalDistribution, StepCDF
from .makarov import BoundsCurve, makarov_lower, makarov_upper

B1_MARGIN = 1e-9
MAX_DP_GRID = 20001
MAX_STEP_CANDIDATES = 4096


class DominanceWarning(UserWarning):
    """F1 exceeds F0 somewhere, so the marginals contradict MTR."""


@dataclass(frozen=True)
class MtrOptions:
    epsilon_K: float = 1e-5
    smoothing_h: float = 0.05
    multistarts: int = 100
    rng_seed: int = 0
    y_grid: int = 512
    dp_grid: int = 2001
    max_refine_dim: int = 40
    use_dp: bool = True
    refine: bool = True
    method: str = "full"

    def __post_init__(self):
        if not self.epsilon_K > 0:
            raise ValueError("epsilon_K must be positive")
        if not self.smoothing_h > 0:
            raise ValueError("smoothing_h must be positive")
        if self.multistarts < 1:
            raise ValueError("multistarts must be >= 1")
        if self.y_grid < 2 or self.dp_grid < 3:
            raise ValueError("grids are too small")
        if self.method not in ("full", "equal_spacing"):
            raise ValueError("method must be 'full' or 'equal_spacing'")


@dataclass(frozen=True)
class TriangleSequence:
    """Base points a_{-J}, ..., a_{J+1}; the window J indexes the centre a_0."""

    delta: float
    base_points: tuple[float, ...]
    window: int
    info: dict[str, Any] = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        pts = np.asarray(self.base_points, float)
        object.__setattr__(self, "base_points", tuple(float(p) for p in pts))
        if self.window < 0:
            raise ValueError("window must be >= 0")
        if pts.size >= 2:
            d = np.diff(pts)
            if np.any(d < -1e-9) or np.any(d > self.delta + 1e-9):
                raise InfeasibleStartError("spacing must satisfy 0 <= a_{k+1} - a_k <= delta")

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self.base_points)

    def satisfies_pruning(self, margin: float = 0.0) -> bool:
        """a_{k+2} - a_k > delta for every k."""
        p = self.points
        return p.size < 3 or bool(np.all(p[2:] - p[:-2] > self.delta + margin - 1e-12))

    def to_dict(self) -> dict[str, Any]:
        return {"delta": self.delta, "window": self.window, "base_points": list(self.base_points),
                **{k: v for k, v in self.info.items() if isinstance(v, (int, float, str))}}


def mtr_problem(F0: MarginalDistribution, F1: MarginalDistribution, delta: float) -> ChainProblem:
    return ChainProblem(CdfMap(F1), CdfMap(F0), ((1.0, float(delta)),), name="mtr")


def _k_range(F0, F1, delta: float) -> np.ndarray:
    lo = min(F0.effective_range()[0], F1.effective_range()[0])
    hi = max(F0.effective_range()[1], F1.effective_range()[1])
    return np.arange(math.floor(lo / delta) - 2, math.ceil(hi / delta) + 2)


def _es_terms(F0, F1, delta: float, y: np.ndarray, ks: np.ndarray) -> np.ndarray:
    """Terms F1(y + (k+1) delta) - F0(y + k delta), shape (len(y), len(ks))."""
    base = np.asarray(y, float)[:, None] + ks[None, :] * delta
    return np.asarray(F1.cdf(base + delta)) - np.asarray(F0.cdf(base))


def _es_sum(F0, F1, delta, y, ks, chunk=2_000_000):
    y = np.atleast_1d(np.asarray(y, float))
    rows = max(1, chunk // max(ks.size, 1))
    out = np.empty(y.size)
    for s in range(0, y.size, rows):
        out[s:s + rows] = np.maximum(_es_terms(F0, F1, delta, y[s:s + rows], ks), 0.0).sum(axis=1)
    return out


def equal_spacing_value(F0: MarginalDistribution, F1: MarginalDistribution, delta: float,
                        y_grid: int = 512) -> tuple[float, float]:
    """sup over y in [0, delta] of the equally spaced triangle sum, with its maximiser."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    ks = _k_range(F0, F1, delta)
    if isinstance(F1, StepCDF) and F1.points.size + 1 <= MAX_STEP_CANDIDATES:
        # the sum is right-continuous and piecewise constant in y; it rises only
        # where some y + (k+1) delta hits a breakpoint of F1
        ys = np.unique(np.r_[0.0, np.mod(F1.points, delta)])
        ys = ys[ys < delta]
        vals = _es_sum(F0, F1, delta, ys, ks)
        i = int(np.argmax(vals))
        return float(vals[i]), float(ys[i])
    ys = np.linspace(0.0, delta, y_grid)
    vals = _es_sum(F0, F1, delta, ys, ks)
    i = int(np.argmax(vals))
    best_y, best_v = float(ys[i]), float(vals[i])
    if F0.continuous and F1.continuous:
        a, b = ys[max(i - 1, 0)], ys[min(i + 1, ys.size - 1)]
        res = optimize.minimize_scalar(lambda t: -float(_es_sum(F0, F1, delta, [t], ks)[0]), bounds=(a, b),
                                       method="bounded", options={"xatol": 1e-10 * max(delta, 1.0)})
        if -res.fun > best_v:
            best_y, best_v = float(res.x), float(-res.fun)
    return best_v, best_y


def _truncation(F0, F1, delta, y_star, epsilon_K):
    """(K, centre index c, V, V_K, ks) for the equally spaced terms at y_star."""
    ks = _k_range(F0, F1, delta)
    terms = np.maximum(_es_terms(F0, F1, delta, np.array([y_star]), ks)[0], 0.0)
    total = float(terms.sum())
    csum = np.r_[0.0, np.cumsum(terms)]
    n = terms.size
    for K in range(n + 1):
        width = min(2 * K + 1, n)
        sums = csum[width:] - csum[:-width]
        j = int(np.argmax(sums))
        if total - sums[j] < epsilon_K:
            return K, int(ks[j + min(K, width // 2)]), total, float(sums[j]), ks
    return n, int(ks[n // 2]), total, total, ks


def truncation_K(F0: MarginalDistribution, F1: MarginalDistribution, delta: float, y_star: float,
                 epsilon_K: float = 1e-5) -> int:
    """Smallest K such that the best window of 2K+1 consecutive terms is within epsilon_K of the full sum."""
    if not epsilon_K > 0:
        raise ValueError("epsilon_K must be positive")
    return _truncation(F0, F1, delta, y_star, epsilon_K)[0]


def _window_bounds(n, y_hat, K, delta):
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[0] = y_hat - K * delta
    ub[n - 2] = y_hat + K * delta
    return lb, ub


def _check_window_start(x, delta, lb, ub):
    d = np.diff(x)
    bad = (np.any(d < -1e-9) or np.any(d > delta + 1e-9) or np.any(x < lb - 1e-9) or np.any(x > ub + 1e-9)
           or (x.size >= 3 and np.any(x[2:] - x[:-2] < delta + B1_MARGIN - 1e-9)))
    if bad:
        raise InfeasibleStartError("start sequence violates the window, spacing or pruning constraints")


def refine_sequence(F0: MarginalDistribution, F1: MarginalDistribution, delta: float, K: int, J: int,
                    start: TriangleSequence, opts: MtrOptions = MtrOptions(),
                    y_hat: float | None = None) -> tuple[float, TriangleSequence]:
    """Smoothed local maximisation over 2J+1 base points inside [y_hat - K delta, y_hat + K delta].

    ``y_hat`` defaults to the centre point a_0 of ``start``.  The value returned
    is the exact objective and is never below that of the start.
    """
    if not (0 <= K <= J <= 2 * K or (K == 0 and J == 0)):
        raise ValueError("need K <= J <= 2K")
    x0 = start.points
    if x0.size != 2 * J + 2:
        raise InfeasibleStartError(f"start must have 2J+2 = {2 * J + 2} points, got {x0.size}")
    if y_hat is None:
        y_hat = float(x0[J])
    lb, ub = _window_bounds(x0.size, y_hat, K, delta)
    _check_window_start(x0, delta, lb, ub)
    prob = mtr_problem(F0, F1, delta)
    res = refine_chain(prob, x0, opts.smoothing_h, lower=lb, upper=ub, min_gap2=delta + B1_MARGIN)
    pts = res.points
    if res.source == "refined":
        # the projection inside refine_chain keeps spacing; re-check the window and pruning
        try:
            _check_window_start(pts, delta, lb, ub)
        except InfeasibleStartError:
            pts = x0
    val = prob.value(pts)
    return val, TriangleSequence(delta, tuple(pts), J, {"source": res.source, "y_hat": y_hat, "K": K})


def _random_window_start(rng, J, K, delta, y_hat, tries=50):
    span = 2 * K * delta
    for _ in range(tries):
        d = np.empty(2 * J + 1)
        prev = 0.0
        for i in range(d.size):
            lo = max(delta - prev, 0.0) + 2 * B1_MARGIN
            d[i] = rng.uniform(min(lo, delta), delta)
            prev = d[i]
        total = d[:-1].sum()
        if total <= span:
            a0 = y_hat - K * delta + rng.uniform(0, span - total)
            return np.r_[a0, a0 + np.cumsum(d)]
    # jittered uniform spacing; feasible because K <= J < 2K
    s = span / (2 * J)
    jit = rng.uniform(-0.25, 0.25, 2 * J + 1) * min(s - delta / 2, delta - s)
    x = y_hat - K * delta + s * np.arange(2 * J + 1)
    x[1:-1] += jit[1:-1]
    return np.r_[x, x[-1] + delta]


def _prune(prob: ChainProblem, x: np.ndarray, delta: float) -> np.ndarray:
    """Drop middle points where a_{k+2} - a_k <= delta if that does not lower the objective."""
    x = np.asarray(x, float)
    changed = True
    while changed and x.size >= 3:
        changed = False
        for k in range(x.size - 2):
            if x[k + 2] - x[k] <= delta + B1_MARGIN:
                trial = np.delete(x, k + 1)
                if prob.value(trial) >= prob.value(x) - 1e-15:
                    x = trial
                    changed = True
                    break
    return x


def _check_dominance(F0, F1, tol=1e-6):
    lo = min(F0.effective_range()[0], F1.effective_range()[0])
    hi = max(F0.effective_range()[1], F1.effective_range()[1])
    ys = np.linspace(lo, hi, 4001)
    if isinstance(F0, StepCDF) or isinstance(F1, StepCDF):
        extra = [d.points for d in (F0, F1) if isinstance(d, StepCDF)]
        ys = np.unique(np.concatenate([ys, *extra]))
    gap = np.asarray(F1.cdf(ys)) - np.asarray(F0.cdf(ys))
    i = int(np.argmax(gap))
    if gap[i] > tol:
        warnings.warn(f"F1 exceeds F0 by {gap[i]:.3g} at y={ys[i]:.6g}; MTR is incompatible with these marginals",
                      DominanceWarning, stacklevel=3)
        return False
    return True


def _dp_grid(prob: ChainProblem, delta: float, n: int) -> np.ndarray:
    lo, hi = prob.span()
    n = int(min(max(n, math.ceil(4 * (hi - lo) / delta) + 1), MAX_DP_GRID))
    return np.linspace(lo, hi, n)


def _to_seq(delta, res: ChainResult, J=None, **info) -> TriangleSequence:
    pts = res.points
    if J is None:
        J = max((pts.size - 2) // 2, 0)
    return TriangleSequence(delta, tuple(pts), J, {"source": res.source, **info})


def mtr_lower(F0: MarginalDistribution, F1: MarginalDistribution, delta: float,
              opts: MtrOptions = MtrOptions()) -> tuple[float, TriangleSequence]:
    """Sharp MTR lower bound on Pr(Y1 - Y0 <= delta) and a witness sequence.

    The witness ``info`` records V, K, V_K and the unclamped value ``raw``.
    """
    delta = float(delta)
    if delta < 0:
        return 0.0, TriangleSequence(delta if delta > 0 else 0.0, (), 0, {"source": "negative_delta", "raw": 0.0})
    _check_dominance(F0, F1)
    if delta == 0:
        v, y = makarov_lower(F0, F1, 0.0)
        return min(v, 1.0), TriangleSequence(0.0, (y, y), 0, {"source": "makarov", "raw": v})

    prob = mtr_problem(F0, F1, delta)
    V, y_star = equal_spacing_value(F0, F1, delta, opts.y_grid)
    K, c, V_full, V_K, ks = _truncation(F0, F1, delta, y_star, opts.epsilon_K)
    y_hat = y_star + c * delta
    es_pts = y_star + np.r_[ks, ks[-1] + 1] * delta
    cands: list[ChainResult] = [ChainResult(prob.value(es_pts), trim_chain(prob, es_pts), "equal_spacing")]

    m_val, m_y = makarov_lower(F0, F1, delta)
    m_pts = (m_y - math.floor(m_y / delta) * delta) + np.r_[ks, ks[-1] + 1] * delta
    cands.append(ChainResult(prob.value(m_pts), trim_chain(prob, m_pts), "makarov_spacing"))

    if opts.method == "full":
        if opts.use_dp:
            dp = dp_chain(prob, _dp_grid(prob, delta, opts.dp_grid))
            cands.append(dp)
            if opts.refine and dp.points.size >= 2:
                if dp.points.size <= opts.max_refine_dim:
                    cands.append(refine_chain(prob, dp.points, opts.smoothing_h))
                else:
                    cands.append(refine_blocks(prob, dp.points, opts.smoothing_h, opts.max_refine_dim))
        if opts.refine and K >= 1 and 2 * K + 2 <= opts.max_refine_dim:
            win = y_hat + np.arange(-K, K + 2) * delta
            v0, s0 = refine_sequence(F0, F1, delta, K, K, TriangleSequence(delta, tuple(win), K), opts, y_hat)
            cands.append(ChainResult(v0, s0.points, "window_J=K"))
            Js = [J for J in range(K + 1, 2 * K) if 2 * J + 2 <= opts.max_refine_dim]
            if Js:
                for idx in range(opts.multistarts):
                    J = Js[idx % len(Js)]
                    rng = np.random.default_rng([opts.rng_seed, idx])
                    x0 = _random_window_start(rng, J, K, delta, y_hat)
                    try:
                        v, s = refine_sequence(F0, F1, delta, K, J, TriangleSequence(delta, tuple(x0), J), opts,
                                               y_hat)
                    except InfeasibleStartError:
                        continue
                    cands.append(ChainResult(v, s.points, f"multistart_{idx}_J={J}"))

    best = best_of(cands)
    pts = best.points
    pruned = _prune(prob, pts, delta)
    if prob.value(pruned) >= best.value:
        pts = pruned
    raw = prob.value(pts)
    info = {"source": best.source, "raw": raw, "V": V, "K": K, "V_K": V_K, "y_star": y_star, "y_hat": y_hat}
    return min(raw, 1.0), _to_seq(delta, ChainResult(raw, pts, best.source), **info)


def mtr_upper(F0: MarginalDistribution, F1: MarginalDistribution, delta: float) -> float:
    """Makarov upper bound for delta >= 0 and 0 below."""
    if delta < 0:
        return 0.0
    return makarov_upper(F0, F1, delta)[0]


def mtr_curve(F0, F1, deltas: Sequence[float], opts: MtrOptions = MtrOptions()) -> BoundsCurve:
    lo, up, wit = [], [], []
    for d in deltas:
        v, seq = mtr_lower(F0, F1, d, opts)
        lo.append(v)
        up.append(mtr_upper(F0, F1, d))
        wit.append(seq)
    return BoundsCurve(np.asarray(deltas, float), np.asarray(lo), np.asarray(up), "mtr", wit)
