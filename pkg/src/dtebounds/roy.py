"""Bounds in the extended Roy model with a deterministic cost m_C(z).

Given Z = z the treated satisfy Y1 - Y0 >= m_C(z) and the untreated
Y1 - Y0 < m_C(z).  With X = Y1 - m_C both arms become MTR problems:

* treated, delta >= m:   lower = MTR lower of (Y0, X) at spacing delta - m,
                         upper = Makarov upper; both are 0 for delta < m.
* untreated, delta < m:  lower = Makarov lower,
                         upper = 1 - MTR lower of (X, Y0) at spacing just
                         below m - delta;
                         both are 1 for delta >= m.

The arms are mixed with p(z) and intersected over z.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

from ._validation import check_probability
from .distributions import MarginalDistribution, from_spec, shift
from .makarov import BoundsCurve, makarov_lower, makarov_upper
from .mtr import MtrOptions, mtr_lower


STRICT_EPS = 1e-9


class UnknownInstrumentError(KeyError):
    """The instrument value is not in the context."""


class EmptyContextError(ValueError):
    """A context without instrument values."""


class InconsistentBoundsWarning(UserWarning):
    """Intersection bounds crossed; the inputs are likely misspecified."""


@dataclass(frozen=True, eq=False)
class RoyContext:
    """Instrument support, costs, propensities and the four conditional marginals per z.

    ``marginals[(d1, d2, z)]`` is the law of Y_{d1} given D = d2 and Z = z.
    """

    z_points: tuple[Hashable, ...]
    m_C: Mapping[Hashable, float]
    p: Mapping[Hashable, float]
    marginals: Mapping[tuple[int, int, Hashable], MarginalDistribution] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "z_points", tuple(self.z_points))
        for z in self.z_points:
            if z not in self.m_C or z not in self.p:
                raise ValueError(f"missing m_C or p for z={z!r}")
            check_probability(self.p[z], f"p({z!r})")
            if not math.isfinite(float(self.m_C[z])):
                raise ValueError(f"m_C({z!r}) must be finite")
            for d1 in (0, 1):
                for d2 in (0, 1):
                    # an arm with zero probability needs no marginals
                    if (d2 == 1 and self.p[z] == 0) or (d2 == 0 and self.p[z] == 1):
                        continue
                    if not isinstance(self.marginals.get((d1, d2, z)), MarginalDistribution):
                        raise ValueError(f"missing marginal F_{d1}(.|{d2},{z!r})")

    def marginal(self, d1: int, d2: int, z: Hashable) -> MarginalDistribution:
        return self.marginals[(d1, d2, z)]

    @classmethod
    def from_dict(cls, spec: dict[str, Any]) -> "RoyContext":
        """JSON form: {"z": [...], "m_C": [...], "p": [...], "marginals": [{"d1", "d2", "z", "dist"}, ...]}."""
        zs = list(spec["z"])
        if len(spec["m_C"]) != len(zs) or len(spec["p"]) != len(zs):
            raise ValueError("z, m_C and p must have equal length")
        margs = {(int(e["d1"]), int(e["d2"]), e["z"]): from_spec(e["dist"]) for e in spec["marginals"]}
        return cls(tuple(zs), dict(zip(zs, map(float, spec["m_C"]))), dict(zip(zs, map(float, spec["p"]))), margs)

    def to_dict(self) -> dict[str, Any]:
        return {"z": list(self.z_points), "m_C": [float(self.m_C[z]) for z in self.z_points],
                "p": [float(self.p[z]) for z in self.z_points],
                "marginals": [{"d1": k[0], "d2": k[1], "z": k[2], "dist": v.to_dict()}
                              for k, v in self.marginals.items()]}


def roy_conditional_bounds(ctx: RoyContext, d: int, z: Hashable, delta: float,
                           opts: MtrOptions = MtrOptions()) -> tuple[float, float]:
    """Bounds on Pr(Y1 - Y0 <= delta | D = d, Z = z)."""
    if z not in ctx.m_C:
        raise UnknownInstrumentError(z)
    if d not in (0, 1):
        raise ValueError("d must be 0 or 1")
    delta = float(delta)
    m = float(ctx.m_C[z])
    F0, F1 = ctx.marginal(0, d, z), ctx.marginal(1, d, z)
    if d == 1:
        if delta < m:
            return 0.0, 0.0
        lo, _ = mtr_lower(F0, shift(F1, -m), delta - m, opts)
        up, _ = makarov_upper(F0, F1, delta)
        return lo, max(up, lo)
    if delta >= m:
        return 1.0, 1.0
    lo, _ = makarov_lower(F0, F1, delta)
    # the MTR value bounds Pr(Y1 - Y0 >= delta); stepping inside the strict
    # inequality keeps an atom at delta on the correct side
    eta = STRICT_EPS * max(1.0, abs(m), abs(delta))
    exceed, _ = mtr_lower(shift(F1, -m), F0, m - delta - eta, opts)
    return lo, max(1.0 - exceed, lo)


def roy_bounds(ctx: RoyContext, delta: float, opts: MtrOptions = MtrOptions()) -> tuple[float, float]:
    """Intersection over z of the p(z)-weighted conditional bounds, reported in [0, 1]."""
    if not ctx.z_points:
        raise EmptyContextError("RoyContext has no instrument values")
    lower, upper = -math.inf, math.inf
    for z in ctx.z_points:
        p = float(ctx.p[z])
        lo = up = 0.0
        for d, w in ((1, p), (0, 1.0 - p)):
            if w == 0:
                continue
            l_d, u_d = roy_conditional_bounds(ctx, d, z, delta, opts)
            lo += w * l_d
            up += w * u_d
        lower, upper = max(lower, lo), min(upper, up)
    if lower > upper + 1e-9:
        warnings.warn(f"Roy bounds cross at delta={delta:.6g}: lower {lower:.6g} > upper {upper:.6g}",
                      InconsistentBoundsWarning, stacklevel=2)
    return min(max(lower, 0.0), 1.0), min(max(upper, 0.0), 1.0)


def roy_curve(ctx: RoyContext, deltas: Sequence[float], opts: MtrOptions = MtrOptions()) -> BoundsCurve:
    pairs = [roy_bounds(ctx, d, opts) for d in deltas]
    lo = np.array([p[0] for p in pairs])
    up = np.array([p[1] for p in pairs])
    # crossing inputs were already reported; keep the curve object constructible
    up = np.maximum(up, lo)
    return BoundsCurve(np.asarray(deltas, float), lo, up, "roy")
