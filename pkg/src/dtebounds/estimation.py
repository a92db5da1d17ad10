"""Plug-in estimation from samples of (Y, D) and subsampling bias correction.

The plug-in MTR lower bound is a supremum of sums of CDF differences, so it
is biased upward in finite samples.  ``subsample_bias_adjust`` removes the
first-order bias with the usual 2 * full - mean(subsample) correction.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .distributions import MarginalDistribution, StepCDF
from .makarov import BoundsCurve, makarov_lower, makarov_upper
from .mtr import DominanceWarning, MtrOptions, mtr_lower
from .restrictions import RestrictionSpec

PLUGIN_OPTIONS = MtrOptions(method="equal_spacing")


class EmptyArmError(ValueError):
    """One treatment arm has no observations or zero total weight."""


@dataclass(frozen=True, eq=False)
class SampleData:
    y: np.ndarray
    d: np.ndarray
    w: np.ndarray | None = None

    def __post_init__(self):
        y = np.asarray(self.y, float)
        d = np.asarray(self.d)
        if y.ndim != 1 or y.shape != d.shape or y.size == 0:
            raise ValueError("y and d must be nonempty 1-d arrays of equal length")
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        if not np.all((d == 0) | (d == 1)):
            raise ValueError("d must be 0 or 1")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "d", d.astype(np.int8))
        if self.w is not None:
            w = np.asarray(self.w, float)
            if w.shape != y.shape or np.any(w < 0) or not np.all(np.isfinite(w)) or w.sum() <= 0:
                raise ValueError("weights must be finite, nonnegative, match y and have positive sum")
            object.__setattr__(self, "w", w)

    def __len__(self):
        return self.y.size

    def take(self, idx) -> "SampleData":
        return SampleData(self.y[idx], self.d[idx], None if self.w is None else self.w[idx])

    @classmethod
    def from_csv(cls, path: str) -> "SampleData":
        """CSV with header y,d and an optional w column."""
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"y", "d"} <= set(reader.fieldnames):
                raise ValueError("CSV header must contain y and d")
            rows = list(reader)
        y = np.array([float(r["y"]) for r in rows])
        d = np.array([int(float(r["d"])) for r in rows])
        w = np.array([float(r["w"]) for r in rows]) if "w" in reader.fieldnames else None
        return cls(y, d, w)


@dataclass(frozen=True)
class SubsampleConfig:
    b: int
    q: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.b < 1:
            raise ValueError("subsample size b must be >= 1")
        if self.q < 1:
            raise ValueError("q must be >= 1")

    @classmethod
    def default_for(cls, n: int, q: int = 200, seed: int = 0) -> "SubsampleConfig":
        """b = floor(n^0.7)."""
        return cls(int(math.floor(n ** 0.7)), q, seed)


def _weighted_ecdf(y: np.ndarray, w: np.ndarray) -> StepCDF:
    order = np.argsort(y, kind="stable")
    y, w = y[order], w[order]
    pts, start = np.unique(y, return_index=True)
    mass = np.add.reduceat(w, start)
    cum = np.cumsum(mass) / mass.sum()
    cum[-1] = 1.0
    return StepCDF(pts, cum)


def empirical_marginals(data: SampleData) -> tuple[StepCDF, StepCDF]:
    """Weighted empirical CDFs of Y in the D = 0 and D = 1 arms."""
    w = np.ones(len(data)) if data.w is None else data.w
    out = []
    for arm in (0, 1):
        sel = data.d == arm
        if not sel.any() or w[sel].sum() <= 0:
            raise EmptyArmError(f"arm D={arm} is empty")
        out.append(_weighted_ecdf(data.y[sel], w[sel]))
    return out[0], out[1]


def plugin_bounds(F0_hat: MarginalDistribution, F1_hat: MarginalDistribution, restriction: RestrictionSpec | None,
                  delta_grid: Sequence[float], opts: MtrOptions = PLUGIN_OPTIONS) -> BoundsCurve:
    """Makarov or MTR bounds evaluated at estimated marginals.

    Defaults to the equally spaced MTR sum, which is the plug-in statistic
    whose bias the subsampling correction targets.
    """
    r = restriction or RestrictionSpec.none()
    if r.kind not in ("none", "mtr"):
        raise ValueError("plug-in bounds support only the none and mtr restrictions")
    deltas = np.asarray(delta_grid, float)
    lo, up, wit = [], [], []
    for d in deltas:
        u, uy = makarov_upper(F0_hat, F1_hat, d)
        if r.kind == "none":
            v, y = makarov_lower(F0_hat, F1_hat, d)
            wit.append(y)
        else:
            v, seq = mtr_lower(F0_hat, F1_hat, d, opts)
            u = u if d >= 0 else 0.0
            wit.append(seq)
        lo.append(v)
        up.append(max(u, v))
    return BoundsCurve(deltas, np.array(lo), np.array(up), "makarov" if r.kind == "none" else "mtr", wit)


def subsample_bias_adjust(full_estimate: float, subsample_estimates: Sequence[float]) -> float:
    """2 * full - mean(subsamples); not clamped."""
    s = np.asarray(subsample_estimates, float)
    if s.size == 0:
        raise ValueError("need at least one subsample estimate")
    return 2.0 * float(full_estimate) - float(s.mean())


def draw_subsamples(n: int, cfg: SubsampleConfig) -> list[np.ndarray]:
    """q index sets of b distinct indices in range(n), reproducible from cfg.seed."""
    if cfg.b >= n:
        raise ValueError(f"subsample size b={cfg.b} must be smaller than n={n}")
    rng = np.random.default_rng(cfg.seed)
    return [np.sort(rng.choice(n, size=cfg.b, replace=False)) for _ in range(cfg.q)]


def _plugin_lower(data: SampleData, restriction, deltas, opts) -> np.ndarray:
    F0, F1 = empirical_marginals(data)
    with warnings.catch_warnings():
        # small samples cross routinely even when the population satisfies MTR
        warnings.simplefilter("ignore", DominanceWarning)
        return np.array([mtr_lower(F0, F1, d, opts)[0] if restriction.kind == "mtr" else makarov_lower(F0, F1, d)[0]
                         for d in deltas])


def bias_adjusted_lower(data: SampleData, restriction: RestrictionSpec | None, delta_grid: Sequence[float],
                        cfg: SubsampleConfig, opts: MtrOptions = PLUGIN_OPTIONS) -> dict[str, np.ndarray]:
    """Raw and bias-adjusted plug-in lower bounds on a delta grid.

    Subsamples that miss a treatment arm are skipped and counted.
    """
    r = restriction or RestrictionSpec.none()
    deltas = np.asarray(delta_grid, float)
    full = _plugin_lower(data, r, deltas, opts)
    subs = []
    skipped = 0
    for idx in draw_subsamples(len(data), cfg):
        try:
            subs.append(_plugin_lower(data.take(idx), r, deltas, opts))
        except EmptyArmError:
            skipped += 1
    if not subs:
        raise EmptyArmError("every subsample misses a treatment arm")
    subs = np.array(subs)
    adjusted = np.array([subsample_bias_adjust(f, subs[:, j]) for j, f in enumerate(full)])
    return {"deltas": deltas, "raw": full, "adjusted": adjusted, "subsample_mean": subs.mean(axis=0),
            "skipped": np.array(skipped)}


class DTEBoundsEstimator(BaseEstimator):
    """Plug-in DTE bounds fitted from (y, d) samples.

    ``fit`` accepts an (n, 2) array with columns y and d, or y and d as
    separate arguments, plus optional sample weights.  ``predict`` returns an
    (m, 2) array of lower and upper bounds at the requested deltas.  With
    ``subsample_b`` set, ``fit`` also stores the bias-adjusted lower bound on
    ``deltas``.
    """

    def __init__(self, restriction="mtr", deltas=None, subsample_b=None, n_subsamples=200, random_state=0,
                 method="equal_spacing"):
        self.restriction = restriction
        self.deltas = deltas
        self.subsample_b = subsample_b
        self.n_subsamples = n_subsamples
        self.random_state = random_state
        self.method = method

    def _opts(self) -> MtrOptions:
        return MtrOptions(method=self.method, rng_seed=int(self.random_state or 0))

    def _restriction(self) -> RestrictionSpec:
        r = self.restriction
        return r if isinstance(r, RestrictionSpec) else RestrictionSpec.from_dict(r)

    def fit(self, X, d=None, sample_weight=None):
        if isinstance(X, SampleData):
            data = X
        else:
            X = np.asarray(X, float)
            if d is None:
                if X.ndim != 2 or X.shape[1] != 2:
                    raise ValueError("X must have columns y and d when d is not given")
                X, d = X[:, 0], X[:, 1]
            data = SampleData(np.ravel(X), np.ravel(d), sample_weight)
        self.restriction_ = self._restriction()
        self.F0_, self.F1_ = empirical_marginals(data)
        self.n_samples_ = len(data)
        if self.deltas is not None:
            self.curve_ = plugin_bounds(self.F0_, self.F1_, self.restriction_, self.deltas, self._opts())
            if self.subsample_b is not None:
                cfg = SubsampleConfig(int(self.subsample_b), int(self.n_subsamples), int(self.random_state or 0))
                self.bias_adjusted_ = bias_adjusted_lower(data, self.restriction_, self.deltas, cfg, self._opts())
        return self

    def _check_fitted(self):
        if not hasattr(self, "F0_"):
            raise RuntimeError("call fit before predict")

    def bounds(self, deltas=None) -> BoundsCurve:
        self._check_fitted()
        if deltas is None:
            if self.deltas is None:
                raise ValueError("no deltas given")
            return self.curve_
        return plugin_bounds(self.F0_, self.F1_, self.restriction_, deltas, self._opts())

    def predict(self, deltas=None) -> np.ndarray:
        c = self.bounds(deltas)
        return np.column_stack([c.lower, c.upper])
