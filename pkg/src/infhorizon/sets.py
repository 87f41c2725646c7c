"""Descriptors for control sets and the boundary constraint sets ``C0`` / ``C_as``.

Only analytic sets are supported: the whole space, per-coordinate half-lines
``[a, inf)``, boxes and single points.  Each descriptor knows how to test
membership and how to serialise itself for model files.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError


def _vec(a, name):
    arr = np.atleast_1d(np.asarray(a, dtype=float))
    if arr.ndim != 1:
        raise DimensionMismatchError(f"{name} must be a vector")
    return arr


@dataclass(frozen=True)
class WholeSpace:
    dim: int

    kind = "whole"

    def contains(self, x, tol=1e-12):
        return _vec(x, "x").shape == (self.dim,)

    def lower(self):
        return np.full(self.dim, -np.inf)

    def upper(self):
        return np.full(self.dim, np.inf)

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True, eq=False)
class Box:
    lo: np.ndarray
    hi: np.ndarray

    kind = "box"

    def __post_init__(self):
        lo, hi = _vec(self.lo, "lo"), _vec(self.hi, "hi")
        if lo.shape != hi.shape:
            raise DimensionMismatchError("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box has lo > hi")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.size

    def contains(self, x, tol=1e-12):
        x = _vec(x, "x")
        return x.shape == self.lo.shape and bool(np.all(x >= self.lo - tol) and np.all(x <= self.hi + tol))

    def lower(self):
        return self.lo

    def upper(self):
        return self.hi

    def clip(self, x):
        return np.clip(x, self.lo, self.hi)

    def to_dict(self):
        return {"kind": self.kind, "lo": _finite_or_none(self.lo), "hi": _finite_or_none(self.hi)}


class HalfLine(Box):
    """Product of half-lines ``[a_i, inf)``; ``a_i = -inf`` leaves axis ``i`` free."""

    kind = "halfline"

    def __init__(self, lower):
        lower = _vec(lower, "lower")
        super().__init__(lower, np.full(lower.shape, np.inf))

    def __repr__(self):
        return f"HalfLine(lower={self.lo.tolist()})"

    def to_dict(self):
        return {"kind": self.kind, "lower": _finite_or_none(self.lo)}


@dataclass(frozen=True, eq=False)
class Point:
    x: np.ndarray

    kind = "point"

    def __post_init__(self):
        object.__setattr__(self, "x", _vec(self.x, "x"))

    @property
    def dim(self):
        return self.x.size

    def contains(self, x, tol=1e-12):
        x = _vec(x, "x")
        return x.shape == self.x.shape and bool(np.max(np.abs(x - self.x), initial=0.0) <= tol)

    def lower(self):
        return self.x

    def upper(self):
        return self.x

    def to_dict(self):
        return {"kind": self.kind, "x": self.x.tolist()}


@dataclass(frozen=True, eq=False)
class ControlSet:
    """Admissible control values: whole space, a box, or a finite grid of points."""

    k: int
    kind: str = "whole"
    lo: np.ndarray = None
    hi: np.ndarray = None
    points: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("whole", "box", "grid"):
            raise ValueError(f"unknown control set kind {self.kind!r}")
        if self.kind == "box":
            lo = np.broadcast_to(np.asarray(self.lo, dtype=float), (self.k,)).copy()
            hi = np.broadcast_to(np.asarray(self.hi, dtype=float), (self.k,)).copy()
            object.__setattr__(self, "lo", lo)
            object.__setattr__(self, "hi", hi)
        if self.kind == "grid":
            pts = np.asarray(self.points, dtype=float).reshape(-1, self.k)
            object.__setattr__(self, "points", pts)

    @classmethod
    def box(cls, lo, hi, k=None):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        k = k or lo.size
        return cls(k=k, kind="box", lo=lo, hi=hi)

    def contains(self, u, tol=1e-12):
        u = np.asarray(u, dtype=float)
        if self.kind == "whole":
            return True
        if self.kind == "box":
            u = u.reshape(self.k, -1)
            return bool(np.all(u >= self.lo[:, None] - tol) and np.all(u <= self.hi[:, None] + tol))
        d = np.abs(self.points - u.reshape(1, self.k)).max(axis=1)
        return bool(d.min() <= tol)

    def to_dict(self):
        if self.kind == "whole":
            return {"kind": "whole", "k": self.k}
        if self.kind == "box":
            return {"kind": "box", "lo": _finite_or_none(self.lo), "hi": _finite_or_none(self.hi)}
        return {"kind": "grid", "points": self.points.tolist()}


def _finite_or_none(a):
    return [float(v) if np.isfinite(v) else None for v in a]


def _bounds(values, default):
    return np.array([default if v is None else float(v) for v in values])


def constraint_from_dict(d, dim):
    """Build a constraint descriptor from its model-file form."""
    kind = d.get("kind")
    if kind == "whole":
        return WholeSpace(dim)
    if kind == "halfline":
        return HalfLine(_bounds(d["lower"], -np.inf))
    if kind == "box":
        return Box(_bounds(d["lo"], -np.inf), _bounds(d["hi"], np.inf))
    if kind == "point":
        return Point(d["x"])
    raise KeyError("kind")


def control_set_from_dict(d, k):
    kind = d.get("kind", "whole")
    if kind == "whole":
        return ControlSet(k)
    if kind == "box":
        return ControlSet(k, "box", _bounds(d["lo"], -np.inf), _bounds(d["hi"], np.inf))
    if kind == "grid":
        return ControlSet(k, "grid", points=d["points"])
    raise KeyError("kind")
