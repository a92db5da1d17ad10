"""Tagged descriptions of the support set of (Y0, Y1)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

KINDS = ("none", "mtr", "concave", "convex", "roy")


@dataclass(frozen=True)
class ShapeContext:
    """Pre-treatment outcome w and the three treatment intensities t_W < t0 < t1."""

    w: float = 0.0
    t_W: float = 0.0
    t0: float = 1.0
    t1: float = 2.0

    def __post_init__(self):
        if not self.t_W < self.t0 < self.t1:
            raise ValueError("need t_W < t0 < t1")

    @property
    def T1(self) -> float:
        return (self.t1 - self.t0) / (self.t1 - self.t_W)

    @property
    def T0(self) -> float:
        return 1.0 - self.T1

    @property
    def S1(self) -> float:
        return (self.t1 - self.t_W) / (self.t0 - self.t_W)

    @property
    def S0(self) -> float:
        return (self.t0 - self.t_W) / (self.t1 - self.t0)

    def line(self, y0):
        """Y1 on the ray through (w, w) with slope S1."""
        return self.S1 * y0 + (1.0 - self.S1) * self.w

    def to_dict(self) -> dict[str, float]:
        return {"w": self.w, "t_W": self.t_W, "t0": self.t0, "t1": self.t1}


@dataclass(frozen=True)
class RestrictionSpec:
    """kind is one of none, mtr, concave, convex, roy.

    Shape kinds carry a ShapeContext; roy carries the arm ``d`` and the cost
    threshold ``m_C`` for one instrument value.
    """

    kind: str = "none"
    shape: ShapeContext | None = None
    d: int | None = None
    m_C: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown restriction kind {self.kind!r}")
        if self.kind in ("concave", "convex") and self.shape is None:
            raise ValueError(f"{self.kind} restriction needs a ShapeContext")
        if self.kind == "roy" and (self.d not in (0, 1) or self.m_C is None):
            raise ValueError("roy restriction needs d in {0, 1} and m_C")

    @classmethod
    def none(cls) -> "RestrictionSpec":
        return cls("none")

    @classmethod
    def mtr(cls) -> "RestrictionSpec":
        return cls("mtr")

    @classmethod
    def from_dict(cls, spec: dict[str, Any] | None) -> "RestrictionSpec":
        if spec is None:
            return cls("none")
        if isinstance(spec, str):
            return cls(spec.lower())
        kind = str(spec.get("kind", "none")).lower()
        shape = None
        if kind in ("concave", "convex"):
            shape = ShapeContext(**{k: float(spec[k]) for k in ("w", "t_W", "t0", "t1") if k in spec})
        d = int(spec["d"]) if "d" in spec else None
        m = float(spec["m_C"]) if "m_C" in spec else None
        return cls(kind, shape, d, m)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.shape is not None:
            out.update(self.shape.to_dict())
        if self.kind == "roy":
            out.update({"d": self.d, "m_C": self.m_C})
        return out
