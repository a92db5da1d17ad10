"""Chain sums shared by the restricted lower bounds.

Every restricted bound in this package reduces to the same problem: maximise

    sum_k max(A(x_{k+1}) - B(x_k), 0)

over finite nondecreasing sequences with x_k <= x_{k+1} <= U(x_k), where A and B
are marginal CDFs composed with affine maps and U is a nondecreasing maximum of
affine pieces.  Any feasible finite sequence gives a valid value, so all
optimisers below only ever report the exact objective at a feasible point.
"""
from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special

from .distributions import MarginalDistribution


class InfeasibleStartError(ValueError):
    """Starting sequence violates the constraint set."""


def smooth_max(x, h: float):
    """x / (1 + exp(-x/h)), a smooth surrogate of max(x, 0)."""
    if not h > 0:
        raise ValueError("h must be positive")
    xa = np.asarray(x, dtype=float)
    z = xa / h
    out = np.where(z < -500, 0.0, np.where(z > 500, xa, xa * special.expit(np.clip(z, -500, 500))))
    return float(out) if np.ndim(x) == 0 else out


def _smooth_max_grad(x: np.ndarray, h: float) -> np.ndarray:
    z = np.clip(x / h, -500, 500)
    s = special.expit(z)
    return s + z * s * (1 - s)


@dataclass(frozen=True)
class CdfMap:
    """x -> F(scale * x + shift)."""

    dist: MarginalDistribution
    scale: float = 1.0
    shift: float = 0.0

    def __call__(self, x):
        return np.asarray(self.dist.cdf(self.scale * np.asarray(x, float) + self.shift))

    def grad(self, x):
        return self.scale * np.asarray(self.dist.pdf(self.scale * np.asarray(x, float) + self.shift))

    def preimage_range(self, tail: float) -> tuple[float, float]:
        lo, hi = self.dist.effective_range(tail)
        a, b = (lo - self.shift) / self.scale, (hi - self.shift) / self.scale
        return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class ChainProblem:
    """Objective terms A(x_{k+1}) - B(x_k) and step limit U(x) = max_i(p_i x + q_i).

    An optional head adds H(min(x_0, head_cap)) for the first point; it carries
    an event that lies entirely inside the target set and is disjoint from
    every term that follows.
    """

    A: CdfMap
    B: CdfMap
    pieces: tuple[tuple[float, float], ...]
    tail: float = 1e-12
    name: str = field(default="chain", compare=False)
    head: CdfMap | None = None
    head_cap: float = np.inf

    def head_value(self, x0):
        if self.head is None:
            return np.zeros_like(np.asarray(x0, float))
        return self.head(np.minimum(x0, self.head_cap))

    def head_grad(self, x0):
        if self.head is None:
            return np.zeros_like(np.asarray(x0, float))
        x0 = np.asarray(x0, float)
        return np.where(x0 < self.head_cap, self.head.grad(np.minimum(x0, self.head_cap)), 0.0)

    def __post_init__(self):
        if not self.pieces or any(p < 0 for p, _ in self.pieces):
            raise ValueError("step limit needs nondecreasing affine pieces")

    def U(self, x):
        x = np.asarray(x, float)
        return np.max([p * x + q for p, q in self.pieces], axis=0)

    def active_piece(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return np.argmax([p * x + q for p, q in self.pieces], axis=0)

    def terms(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        return self.A(x[1:]) - self.B(x[:-1])

    def value(self, x) -> float:
        x = np.asarray(x, float)
        if x.size == 0:
            return 0.0
        head = float(self.head_value(x[0]))
        if x.size < 2:
            return head
        return head + float(np.sum(np.maximum(self.terms(x), 0.0)))

    def violation(self, x) -> float:
        x = np.asarray(x, float)
        if x.size < 2:
            return 0.0
        d = np.diff(x)
        up = x[1:] - self.U(x[:-1])
        return float(max(np.max(-d), np.max(up), 0.0))

    def is_feasible(self, x, tol: float = 0.0) -> bool:
        return self.violation(x) <= tol

    def project(self, x) -> np.ndarray | None:
        """Forward clip into the feasible set; None if some step has no room."""
        x = np.array(x, float)
        for k in range(1, x.size):
            u = float(self.U(x[k - 1]))
            if u < x[k - 1]:
                return None
            x[k] = min(max(x[k], x[k - 1]), u)
        return x

    def span(self) -> tuple[float, float]:
        """Interval where at least one of A, B is away from 0 and 1."""
        a_lo, a_hi = self.A.preimage_range(self.tail)
        b_lo, b_hi = self.B.preimage_range(self.tail)
        return min(a_lo, b_lo), max(a_hi, b_hi)


@dataclass
class ChainResult:
    value: float
    points: np.ndarray
    source: str


def dp_chain(problem: ChainProblem, grid: np.ndarray) -> ChainResult:
    """Exact maximum over chains restricted to grid points, by backward DP.

    best[i] = max(0, max_{i<j<=r_i} max(A_j - B_i, 0) + best[j]) where r_i is the
    last grid index reachable in one step.  Because U is nondecreasing, the
    window (i, r_i] slides left as i decreases, so a monotone deque gives the
    window maximum of A_j + best[j] in amortised O(1).
    """
    xs = np.asarray(grid, float)
    n = xs.size
    a = problem.A(xs)
    b = problem.B(xs)
    reach = np.searchsorted(xs, problem.U(xs), side="right") - 1
    best = np.zeros(n)
    nxt = np.full(n, -1)
    key = np.empty(n)
    dq: deque[int] = deque()
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            j = i + 1
            key[j] = a[j] + best[j]
            while dq and key[dq[0]] <= key[j]:
                dq.popleft()
            dq.appendleft(j)
        r = reach[i]
        while dq and dq[-1] > r:
            dq.pop()
        if not dq or r <= i:
            continue
        j1 = dq[-1]
        v1 = key[j1] - b[i]
        v2 = best[i + 1]
        if v1 >= v2 and v1 > 0:
            best[i], nxt[i] = v1, j1
        elif v2 > 0:
            best[i], nxt[i] = v2, i + 1
    total = best + problem.head_value(xs)
    i = int(np.argmax(total))
    if total[i] <= 0:
        return ChainResult(problem.value(xs[:1]), xs[:1].copy(), "dp")
    path = [i]
    while nxt[path[-1]] >= 0:
        path.append(int(nxt[path[-1]]))
    pts = xs[path]
    return ChainResult(problem.value(pts), pts, "dp")


def trim_chain(problem: ChainProblem, x: np.ndarray) -> np.ndarray:
    """Drop leading and trailing points that only carry zero terms."""
    x = np.asarray(x, float)
    if x.size < 2:
        return x
    pos = np.flatnonzero(problem.terms(x) > 0)
    if pos.size == 0:
        return x[:1]
    start = 0 if problem.head is not None else pos[0]
    return x[start: pos[-1] + 2]


def binding_chain(problem: ChainProblem, start: float, lo: float, hi: float, max_len: int = 4000) -> np.ndarray:
    """Chain x_{k+1} = U(x_k) from ``start`` until it leaves [lo, hi] or stalls."""
    pts = [float(start)]
    while len(pts) < max_len and pts[-1] <= hi:
        nxt = float(problem.U(pts[-1]))
        if nxt <= pts[-1] + 1e-12 * max(1.0, abs(pts[-1])):
            break
        pts.append(nxt)
    x = np.asarray(pts)
    return x[x >= lo] if np.sum(x >= lo) >= 2 else x


def refine_chain(problem: ChainProblem, x0: np.ndarray, h: float, *, lower: np.ndarray | None = None,
                 upper: np.ndarray | None = None, min_gap2: float | None = None,
                 maxiter: int = 200) -> ChainResult:
    """Local SLSQP ascent of the smoothed chain sum started at a feasible x0.

    The affine piece of U active at each x0[k] is frozen so the constraints are
    linear.  Returns the better (exact objective) of x0 and the projected
    optimum, so the result never falls below the start.
    """
    x0 = np.asarray(x0, float)
    n = x0.size
    start_val = problem.value(x0)
    if n < 2:
        return ChainResult(start_val, x0, "start")
    pieces = np.asarray(problem.pieces)[problem.active_piece(x0[:-1])]
    p, q = pieces[:, 0], pieces[:, 1]
    rows, rhs = [], []
    eye = np.eye(n)
    for k in range(n - 1):
        rows.append(eye[k + 1] - eye[k])
        rhs.append(0.0)
        rows.append(p[k] * eye[k] - eye[k + 1])
        rhs.append(-q[k])
    if min_gap2 is not None:
        for k in range(n - 2):
            rows.append(eye[k + 2] - eye[k])
            rhs.append(min_gap2)
    G = np.asarray(rows)
    g = np.asarray(rhs)

    def f(x):
        d = problem.A(x[1:]) - problem.B(x[:-1])
        return -float(np.sum(smooth_max(d, h))) - float(problem.head_value(x[0]))

    def grad(x):
        d = problem.A(x[1:]) - problem.B(x[:-1])
        s = _smooth_max_grad(d, h)
        out = np.zeros(n)
        out[0] += float(problem.head_grad(x[0]))
        out[1:] += s * problem.A.grad(x[1:])
        out[:-1] -= s * problem.B.grad(x[:-1])
        return -out

    lb = np.full(n, -np.inf) if lower is None else np.asarray(lower, float)
    ub = np.full(n, np.inf) if upper is None else np.asarray(upper, float)
    bounds = list(zip(np.where(np.isfinite(lb), lb, None), np.where(np.isfinite(ub), ub, None)))
    try:
        with warnings.catch_warnings():
            # SLSQP warns when it clips an iterate to the box; the result is projected anyway
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = optimize.minimize(f, x0, jac=grad, method="SLSQP", bounds=bounds,
                                    constraints=[{"type": "ineq", "fun": lambda x: G @ x - g, "jac": lambda x: G}],
                                    options={"maxiter": maxiter, "ftol": 1e-12})
        cand = problem.project(np.clip(sol.x, lb, ub))
    except (ValueError, np.linalg.LinAlgError):
        cand = None
    if cand is None or not problem.is_feasible(cand):
        return ChainResult(start_val, x0, "start")
    val = problem.value(cand)
    if val > start_val:
        return ChainResult(val, cand, "refined")
    return ChainResult(start_val, x0, "start")


def refine_blocks(problem: ChainProblem, x0: np.ndarray, h: float, block: int, sweeps: int = 1) -> ChainResult:
    """Block-coordinate refinement for chains longer than ``block`` points.

    Each block is refined with its outer neighbours held fixed, which keeps the
    whole chain feasible.
    """
    x = np.asarray(x0, float).copy()
    val = problem.value(x)
    n = x.size
    if n <= block:
        return refine_chain(problem, x, h)
    step = max(block // 2, 1)
    for _ in range(sweeps):
        for s in range(0, n - 1, step):
            e = min(s + block, n)
            lo_i, hi_i = max(s - 1, 0), min(e + 1, n)
            seg = x[lo_i:hi_i].copy()
            lb = np.full(seg.size, -np.inf)
            ub = np.full(seg.size, np.inf)
            if lo_i < s:
                lb[0] = ub[0] = seg[0]
            if hi_i > e:
                lb[-1] = ub[-1] = seg[-1]
            res = refine_chain(problem, seg, h, lower=lb, upper=ub)
            trial = x.copy()
            trial[lo_i:hi_i] = res.points
            if problem.is_feasible(trial):
                tv = problem.value(trial)
                if tv > val:
                    x, val = trial, tv
            if e == n:
                break
    return ChainResult(val, x, "blocks")


def best_of(results: Sequence[ChainResult]) -> ChainResult:
    """Max by value; ties go to the earliest entry."""
    best = results[0]
    for r in results[1:]:
        if r.value > best.value:
            best = r
    return best


def default_grid(problem: ChainProblem, n: int) -> np.ndarray:
    lo, hi = problem.span()
    return np.linspace(lo, hi, n)


def solve_chain(problem: ChainProblem, *, step_hint: float, dp_grid: int = 2001, h: float = 0.05,
                max_refine_dim: int = 40, refine: bool = True, n_binding: int = 64,
                extra: Sequence[ChainResult] = (), max_grid: int = 20001) -> ChainResult:
    """Best chain from grid DP, binding chains x_{k+1} = U(x_k) and local refinement."""
    lo, hi = problem.span()
    n = int(min(max(dp_grid, np.ceil(4 * (hi - lo) / max(step_hint, 1e-12)) + 1), max_grid))
    cands = list(extra)
    dp = dp_chain(problem, np.linspace(lo, hi, n))
    cands.append(dp)
    best_bind = None
    for s in np.linspace(lo, hi, n_binding):
        x = trim_chain(problem, binding_chain(problem, s, lo, hi))
        v = problem.value(x)
        if best_bind is None or v > best_bind.value:
            best_bind = ChainResult(v, x, "binding")
    if best_bind is not None:
        cands.append(best_bind)
    if refine:
        for start in (dp, best_bind):
            if start is None or start.points.size < 2:
                continue
            if start.points.size <= max_refine_dim:
                cands.append(refine_chain(problem, start.points, h))
            else:
                cands.append(refine_blocks(problem, start.points, h, max_refine_dim))
    return best_of(cands)
