"""Convex hulls of sample clouds, analytic normal cones and cone-plus-hull membership."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from .errors import (DimensionMismatchError, NoConvergenceError, NonFiniteError,
                     PointNotInSetError)
from .sets import Box, Point, WholeSpace

DEDUPE_TOL = 1e-12
GEOM_TOL = 1e-9
MEMBERSHIP_TOL = 5e-2


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2:
            raise DimensionMismatchError("points must form an (n, dim) array")
        if not np.all(np.isfinite(pts)):
            raise NonFiniteError("point cloud contains non-finite values")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def empty(cls, dim):
        return cls(np.zeros((0, dim)))

    @property
    def dim(self):
        return self.points.shape[1]

    def __len__(self):
        return self.points.shape[0]

    def merged(self, other):
        if other.dim != self.dim:
            raise DimensionMismatchError("clouds differ in dimension")
        return PointCloud(np.vstack([self.points, other.points]))

    def to_dict(self):
        return {"dim": self.dim, "points": self.points.tolist()}


@dataclass(frozen=True, eq=False)
class HullApprox:
    generators: PointCloud
    vertices2d: np.ndarray = None

    @property
    def dim(self):
        return self.generators.dim

    @property
    def extreme_points(self):
        """Smallest generator set with the same hull (vertices when known)."""
        return self.vertices2d if self.vertices2d is not None else self.generators.points

    def contains(self, p, tol=GEOM_TOL):
        d, _ = hull_distance(p, PointCloud(self.extreme_points), tol=min(tol, GEOM_TOL))
        return d <= tol

    def to_dict(self):
        out = {"dim": self.dim, "generators": self.generators.points.tolist()}
        if self.vertices2d is not None:
            out["vertices2d"] = self.vertices2d.tolist()
        return out


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _hull_indices(P):
    """Row indices of the counter-clockwise extreme points of planar ``P``."""
    order = np.lexsort((P[:, 1], P[:, 0]))
    uniq = [order[0]]
    for i in order[1:]:
        if np.max(np.abs(P[i] - P[uniq[-1]])) > DEDUPE_TOL:
            uniq.append(i)
    if len(uniq) < 3:
        return uniq
    lower, upper = [], []
    for i in uniq:
        while len(lower) >= 2 and _cross(P[lower[-2]], P[lower[-1]], P[i]) <= 0:
            lower.pop()
        lower.append(i)
    for i in reversed(uniq):
        while len(upper) >= 2 and _cross(P[upper[-2]], P[upper[-1]], P[i]) <= 0:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


def convex_hull_2d(cloud):
    """Counter-clockwise extreme points by Andrew's monotone chain."""
    if cloud.dim != 2:
        raise DimensionMismatchError("convex_hull_2d needs planar points")
    if len(cloud) == 0:
        raise ValueError("empty point cloud")
    return HullApprox(cloud, cloud.points[_hull_indices(cloud.points)])


def _segment(p, a, b):
    d = b - a
    dd = d @ d
    s = 0.0 if dd == 0.0 else min(max((p - a) @ d / dd, 0.0), 1.0)
    return float(np.linalg.norm(a + s * d - p)), s


def _planar_distance(p, V):
    """Exact distance to the hull of planar ``V`` with convex weights on its rows."""
    idx = _hull_indices(V)
    w = np.zeros(V.shape[0])
    H = V[idx]
    k = len(idx)
    if k == 1:
        w[idx[0]] = 1.0
        return float(np.linalg.norm(H[0] - p)), w
    if k >= 3 and all(_cross(H[i], H[(i + 1) % k], p) >= 0 for i in range(k)):
        # inside: barycentric weights in the fan triangle (H0, Hi, Hi+1) holding p
        for i in range(1, k - 1):
            a, b, c = H[0], H[i], H[i + 1]
            area = _cross(a, b, c)
            lb = _cross(a, p, c) / area
            lc = _cross(a, b, p) / area
            if lb >= -1e-15 and lc >= -1e-15 and lb + lc <= 1 + 1e-15:
                lb, lc = max(lb, 0.0), max(lc, 0.0)
                w[idx[0]] += max(1.0 - lb - lc, 0.0)
                w[idx[i]] += lb
                w[idx[i + 1]] += lc
                w /= w.sum()
                return 0.0, w
    edges = range(k) if k >= 3 else range(1)
    best = (np.inf, 0, 0.0)
    for i in edges:
        d, s = _segment(p, H[i], H[(i + 1) % k])
        if d < best[0]:
            best = (d, i, s)
    d, i, s = best
    w[idx[i]] += 1.0 - s
    w[idx[(i + 1) % k]] += s
    return d, w


def hull_of(cloud):
    """Hull descriptor; planar clouds get their vertices computed."""
    return convex_hull_2d(cloud) if cloud.dim == 2 else HullApprox(cloud, None)


def hull_distance(p, cloud, tol=GEOM_TOL, max_iter=100_000):
    """Distance from ``p`` to the convex hull of ``cloud`` and the convex weights.

    Planar clouds are handled exactly through their hull polygon.  Otherwise
    Frank-Wolfe with away steps runs on ``|V^T w - p|^2 / 2`` over the
    simplex, started at the nearest generator and stopped once the duality
    gap drops below ``tol**2`` (or below the rounding level of the data).
    """
    V = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    if V.shape[0] == 0:
        raise ValueError("empty point cloud")
    if V.shape[1] != p.size:
        raise DimensionMismatchError("point and cloud differ in dimension")
    if p.size == 2:
        return _planar_distance(p, V)
    n = V.shape[0]
    i0 = int(np.argmin(np.sum((V - p) ** 2, axis=1)))
    w = np.zeros(n)
    w[i0] = 1.0
    q = V[i0].copy()
    scale = max(1.0, float(np.max(np.abs(V))), float(np.max(np.abs(p))))
    # below this the gap is rounding noise
    gap_target = max(tol * tol, 16 * np.finfo(float).eps * scale * scale)
    for _ in range(max_iter):
        r = q - p
        scores = V @ r
        rq = r @ q
        s = int(np.argmin(scores))
        fw_gap = rq - scores[s]
        if fw_gap <= gap_target:
            return float(np.linalg.norm(r)), w
        active = np.flatnonzero(w > 0)
        a = int(active[np.argmax(scores[active])])
        away_gap = scores[a] - rq
        if fw_gap >= away_gap:
            d = V[s] - q
            gmax = 1.0
        else:
            d = q - V[a]
            gmax = w[a] / (1.0 - w[a]) if w[a] < 1.0 else np.inf
        dd = d @ d
        if dd == 0.0:
            return float(np.linalg.norm(r)), w
        gamma = min(max(-(r @ d) / dd, 0.0), gmax)
        if fw_gap >= away_gap:
            w *= 1.0 - gamma
            w[s] += gamma
        else:
            w *= 1.0 + gamma
            w[a] -= gamma
            if gamma == gmax:
                w[a] = 0.0
        q = q + gamma * d
    r = q - p
    gap = r @ q - np.min(V @ r)
    if gap <= gap_target:
        return float(np.linalg.norm(r)), w
    raise NoConvergenceError(f"Frank-Wolfe stopped with gap {gap:.3g} after {max_iter} iterations")


# ---------------------------------------------------------------- cones

@dataclass(frozen=True)
class ZeroCone:
    dim: int
    kind = "zero"

    def project(self, v):
        return np.zeros(self.dim)

    def contains(self, v, tol=GEOM_TOL):
        return float(np.linalg.norm(v)) <= tol

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


@dataclass(frozen=True)
class FullSpace:
    dim: int
    kind = "full"

    def project(self, v):
        return np.asarray(v, dtype=float).copy()

    def contains(self, v, tol=GEOM_TOL):
        return True

    def to_dict(self):
        return {"kind": self.kind, "dim": self.dim}


_SIGNS = ("free", "nonneg", "nonpos", "zero")


@dataclass(frozen=True)
class CoordinateCone:
    """Product of per-axis cones: ``free`` (R), ``nonneg``, ``nonpos`` or ``zero``."""

    signs: tuple
    kind = "coordinate"

    def __post_init__(self):
        signs = tuple(self.signs)
        bad = [s for s in signs if s not in _SIGNS]
        if bad:
            raise ValueError(f"unknown axis sign(s) {bad}")
        object.__setattr__(self, "signs", signs)

    @property
    def dim(self):
        return len(self.signs)

    def project(self, v):
        v = np.asarray(v, dtype=float).copy()
        for i, s in enumerate(self.signs):
            if s == "nonneg":
                v[i] = max(v[i], 0.0)
            elif s == "nonpos":
                v[i] = min(v[i], 0.0)
            elif s == "zero":
                v[i] = 0.0
        return v

    def contains(self, v, tol=GEOM_TOL):
        return float(np.linalg.norm(np.asarray(v, dtype=float) - self.project(v))) <= tol

    def rays(self):
        """Generators of the cone (both signs for free axes)."""
        out = []
        for i, s in enumerate(self.signs):
            e = np.zeros(self.dim)
            e[i] = 1.0
            if s in ("free", "nonneg"):
                out.append(e)
            if s in ("free", "nonpos"):
                out.append(-e)
        return np.array(out).reshape(-1, self.dim)

    def to_dict(self):
        return {"kind": self.kind, "signs": list(self.signs)}


@dataclass(frozen=True, eq=False)
class Polyhedral:
    """Cone generated by finitely many rays (rows of ``rays``)."""

    rays: np.ndarray
    kind = "polyhedral"

    def __post_init__(self):
        R = np.asarray(self.rays, dtype=float)
        if R.ndim != 2 or R.shape[0] == 0:
            raise DimensionMismatchError("rays must be a non-empty (r, dim) array")
        object.__setattr__(self, "rays", R)

    @property
    def dim(self):
        return self.rays.shape[1]

    def project(self, v):
        coef, _ = nnls(self.rays.T, np.asarray(v, dtype=float))
        return coef @ self.rays

    def contains(self, v, tol=GEOM_TOL):
        return float(np.linalg.norm(np.asarray(v, dtype=float) - self.project(v))) <= tol

    def to_dict(self):
        return {"kind": self.kind, "rays": self.rays.tolist()}


def cone_from_dict(d):
    kind = d["kind"]
    if kind == "zero":
        return ZeroCone(int(d["dim"]))
    if kind == "full":
        return FullSpace(int(d["dim"]))
    if kind == "coordinate":
        return CoordinateCone(tuple(d["signs"]))
    if kind == "polyhedral":
        return Polyhedral(np.asarray(d["rays"], dtype=float))
    raise KeyError("kind")


def normal_cone(cset, x, tol=GEOM_TOL):
    """Normal cone of an analytic constraint set at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not cset.contains(x, tol):
        raise PointNotInSetError("point does not lie in the set")
    if isinstance(cset, WholeSpace):
        return ZeroCone(cset.dim)
    if isinstance(cset, Point):
        return FullSpace(cset.dim)
    if isinstance(cset, Box):
        signs = []
        for xi, lo, hi in zip(x, cset.lo, cset.hi):
            at_lo = np.isfinite(lo) and abs(xi - lo) <= tol
            at_hi = np.isfinite(hi) and abs(xi - hi) <= tol
            signs.append("free" if at_lo and at_hi else "nonpos" if at_lo
                         else "nonneg" if at_hi else "zero")
        if all(s == "zero" for s in signs):
            return ZeroCone(cset.dim)
        if all(s == "free" for s in signs):
            return FullSpace(cset.dim)
        return CoordinateCone(tuple(signs))
    raise TypeError(f"no normal cone for {type(cset).__name__}")


# ---------------------------------------------------------------- membership

@dataclass(frozen=True, eq=False)
class Membership:
    member: bool
    gap: float
    nu: np.ndarray
    weights: np.ndarray
    point: np.ndarray
    history: list = field(default_factory=list)

    @property
    def certificate(self):
        """``(nu, weights)`` with ``p ~ nu + sum_i weights_i g_i`` when a member."""
        return (self.nu, self.weights) if self.member else None

    def to_dict(self):
        return {"member": self.member, "gap": self.gap, "nu": self.nu.tolist(),
                "weights": self.weights.tolist(), "point": self.point.tolist(),
                "iterations": len(self.history)}


def _generators(cloud):
    if isinstance(cloud, HullApprox):
        return cloud.extreme_points
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=float)


def cone_plus_hull_membership(p, cone, cloud, tol=MEMBERSHIP_TOL, *, inner_tol=1e-10,
                              max_iter=1000, stall=1e-12):
    """Decide whether ``p`` lies within ``tol`` of ``cone + co(cloud)``.

    Alternates projections between the translated cone ``p - cone`` and the
    hull.  The gap history is non-increasing; iteration stops on membership,
    on stagnation (the gap is then the distance) or raises
    :class:`NoConvergenceError` after ``max_iter`` rounds.
    """
    V = _generators(cloud)
    p = np.asarray(p, dtype=float).reshape(-1)
    if V.shape[0] == 0:
        raise ValueError("empty point cloud")
    if V.shape[1] != p.size or cone.dim != p.size:
        raise DimensionMismatchError("point, cone and cloud differ in dimension")
    nu = np.zeros(p.size)
    history = []
    gap_prev = np.inf
    for _ in range(max_iter):
        _, w = hull_distance(p - nu, V, tol=inner_tol)
        q = w @ V
        nu_next = cone.project(p - q)
        gap = float(np.linalg.norm(p - nu_next - q))
        history.append(gap)
        nu_done = np.array_equal(nu_next, nu)
        nu = nu_next
        if gap <= tol:
            return Membership(True, gap, nu, w, p, history)
        if gap_prev - gap <= stall * max(1.0, gap) or nu_done:
            return Membership(False, gap, nu, w, p, history)
        gap_prev = gap
    exc = NoConvergenceError(f"alternating projection did not settle (gap {gap_prev:.3g})")
    exc.history = history
    raise exc
