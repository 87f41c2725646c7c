"""Boundary and necessary conditions at infinity.

Everything here works on finite windows: limits over ``theta -> inf`` are
replaced by schedules of horizons, and liminf/limsup by the minimum/maximum
over the last ``ceil(N/2)`` scheduled horizons.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .convex_geom import (MEMBERSHIP_TOL, PointCloud, ZeroCone, cone_plus_hull_membership,
                          hull_of, normal_cone)
from .errors import (DimensionMismatchError, EmptyGridError, EmptyLevelWarning,
                     GridMismatchError, NonFiniteError, NoSamplesError)
from .ode_core import TimeGrid, eval_cost, hamiltonian
from .variational import batch_sensitivity, transition_matrix

SAMPLE_TOL = (1e-8, 1e-8)
HORIZON_MODES = ("window", "fixed")


def tail_count(n):
    """Number of horizons used by the liminf/limsup surrogates."""
    return int(math.ceil(n / 2))


# ---------------------------------------------------------------- schedules

@dataclass(frozen=True, eq=False)
class LimitSchedule:
    """Horizons ``theta_1 < ... < theta_N`` with shrinking radii ``kappa_n``.

    With ``horizons="fixed"`` level ``n`` integrates every sample to exactly
    ``theta_n``.  With ``horizons="window"`` each sample draws its horizon
    uniformly from ``[theta_{n-1}, theta_n]`` (``theta_0 = theta_1^2 /
    theta_2``), so that pooled levels see a continuum of horizons.
    """

    thetas: np.ndarray
    radii: np.ndarray
    samples_per_level: int = 64
    lam: int = 1
    horizons: str = "window"

    def __post_init__(self):
        th = np.array(self.thetas, dtype=float).reshape(-1)
        kp = np.array(self.radii, dtype=float).reshape(-1)
        if th.size < 2:
            raise ValueError("a schedule needs at least two horizons")
        if kp.shape != th.shape:
            raise DimensionMismatchError("thetas and radii must have equal length")
        if not np.all(np.isfinite(th)) or th[0] <= 0 or np.any(np.diff(th) <= 0):
            raise ValueError("thetas must be positive and strictly increasing")
        if th[-1] < 10 * th[0]:
            raise ValueError("the last horizon must be at least ten times the first")
        if not np.all(np.isfinite(kp)) or np.any(kp <= 0) or np.any(np.diff(kp) >= 0):
            raise ValueError("radii must be positive and strictly decreasing")
        if int(self.samples_per_level) < 1:
            raise ValueError("samples_per_level must be positive")
        if self.lam not in (0, 1):
            raise ValueError("lambda must be 0 or 1")
        if self.horizons not in HORIZON_MODES:
            raise ValueError(f"horizons must be one of {HORIZON_MODES}")
        th.setflags(write=False)
        kp.setflags(write=False)
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "radii", kp)
        object.__setattr__(self, "samples_per_level", int(self.samples_per_level))
        object.__setattr__(self, "lam", int(self.lam))

    @classmethod
    def default(cls, levels=12, theta_min=2 * math.pi, theta_max=40 * math.pi,
                samples_per_level=64, lam=1, horizons="window"):
        n = np.arange(1, levels + 1)
        return cls(np.geomspace(theta_min, theta_max, levels), 0.5 * 0.6 ** n,
                   samples_per_level, lam, horizons)

    @property
    def levels(self):
        return self.thetas.size

    @property
    def theta_max(self):
        return float(self.thetas[-1])

    def window(self, n):
        """Horizon interval of the 0-based level ``n``."""
        th = self.thetas
        if self.horizons == "fixed":
            return float(th[n]), float(th[n])
        lo = th[n - 1] if n > 0 else th[0] ** 2 / th[1]
        return float(lo), float(th[n])

    def lam_at(self, n):
        """Multiplier used at level ``n``: 1 for the normal case, ``kappa_n`` otherwise."""
        return 1.0 if self.lam == 1 else float(self.radii[n])

    def to_dict(self):
        return {"thetas": self.thetas.tolist(), "radii": self.radii.tolist(),
                "samples_per_level": self.samples_per_level, "lambda": self.lam,
                "horizons": self.horizons}

    @classmethod
    def from_dict(cls, d):
        return cls(d["thetas"], d["radii"], d.get("samples_per_level", 64),
                   d.get("lambda", 1), d.get("horizons", "window"))


# ---------------------------------------------------------------- sample sets

@dataclass(frozen=True, eq=False)
class LevelRecord:
    """Accepted samples of one level together with the filters that admitted them."""

    level: int
    window: tuple
    kappa: float
    lam: float
    x: np.ndarray
    thetas: np.ndarray
    grads: np.ndarray
    dJ: np.ndarray
    drawn: int
    rejected: dict

    def __len__(self):
        return self.x.shape[0]

    def to_dict(self):
        return {"level": self.level, "window": list(self.window), "kappa": self.kappa,
                "lambda": self.lam, "drawn": self.drawn, "rejected": dict(self.rejected),
                "filters": {"ball": f"|x - y(0)| < {self.kappa!r}",
                            "cost": f"|J(x) - J(y(0))| < {self.kappa!r}",
                            "set": "x in C_as"},
                "x": self.x.tolist(), "theta": self.thetas.tolist(),
                "grad": self.grads.tolist(), "dJ": self.dJ.tolist()}


@dataclass(frozen=True, eq=False)
class GradientSampleSet:
    levels: tuple
    schedule: LimitSchedule
    seed: int
    reference: dict = field(default_factory=dict)

    @property
    def lam(self):
        return self.schedule.lam

    @property
    def dim(self):
        return self.levels[0].x.shape[1]

    def deepest(self, k=2):
        """Pool the accepted gradients of the ``k`` deepest levels."""
        grads = [rec.grads for rec in self.levels[-k:]]
        return PointCloud(np.vstack(grads) if grads else np.zeros((0, self.dim)))

    def counts(self):
        return [len(rec) for rec in self.levels]

    def to_dict(self):
        return {"seed": self.seed, "reference": dict(self.reference),
                "schedule": self.schedule.to_dict(),
                "levels": [rec.to_dict() for rec in self.levels]}


def process_digest(process):
    """Short content hash identifying a reference process."""
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(process.grid.nodes).tobytes())
    h.update(np.ascontiguousarray(process.states).tobytes())
    h.update(np.ascontiguousarray(process.cost_path).tobytes())
    return h.hexdigest()[:16]


def sample_filter(system, x_ref, x, dJ, kappa):
    """Name of the first filter rejecting ``x`` (``"set"``, ``"ball"``, ``"cost"``) or None."""
    x = np.asarray(x, dtype=float)
    if not system.c_as.contains(x):
        return "set"
    if not np.linalg.norm(x - np.asarray(x_ref, dtype=float)) < kappa:
        return "ball"
    if dJ is not None and not abs(dJ) < kappa:
        return "cost"
    return None


def _draw(rng, x_ref, kappa, count, lo, hi):
    m = x_ref.size
    d = rng.standard_normal((count, m))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = kappa * rng.random(count) ** (1.0 / m)
    th = np.full(count, lo) if lo == hi else rng.uniform(lo, hi, count)
    return x_ref + d * r[:, None], th


def _sample_jobs(system, jobs, tol=SAMPLE_TOL):
    """Run several ``(reference, schedule, seed)`` sampling jobs in one batch.

    All samples of all jobs are integrated together; results are assembled by
    (job, level, sample index), so they do not depend on the batching.
    """
    draws = []
    for j, (ref, sched, seed) in enumerate(jobs):
        if ref.system is not None and ref.system.m != system.m:
            raise DimensionMismatchError("reference process belongs to another system")
        if sched.theta_max > ref.span[1] + 1e-9 * sched.theta_max:
            raise GridMismatchError("the reference process is shorter than the schedule")
        x_ref = np.asarray(ref.x0, dtype=float)
        for n in range(sched.levels):
            rng = np.random.default_rng([int(seed), n])
            lo, hi = sched.window(n)
            X, th = _draw(rng, x_ref, float(sched.radii[n]), sched.samples_per_level, lo, hi)
            pre = [sample_filter(system, x_ref, x, None, sched.radii[n]) for x in X]
            draws.append((j, n, X, th, pre))

    cols_x, cols_t, groups = [], [], []
    for j, n, X, th, pre in draws:
        keep = np.array([p is None for p in pre], dtype=bool)
        cols_x.append(X[keep])
        cols_t.append(th[keep])
        groups.append(np.full(int(keep.sum()), j))
    X_all = np.vstack(cols_x) if cols_x else np.zeros((0, system.m))
    if X_all.shape[0]:
        res = batch_sensitivity(system, [ref.control for ref, _, _ in jobs], X_all.T, 0.0,
                                np.concatenate(cols_t), tol, groups=np.concatenate(groups),
                                with_matrix=not system.meta.get("fx_zero", False))
        if not (np.all(np.isfinite(res.costs)) and np.all(np.isfinite(res.grads))):
            raise NonFiniteError("a perturbed trajectory produced non-finite values")
    out = [[] for _ in jobs]
    pos = 0
    for j, n, X, th, pre in draws:
        ref, sched, seed = jobs[j]
        kappa = float(sched.radii[n])
        keep = np.array([p is None for p in pre], dtype=bool)
        cnt = int(keep.sum())
        rejected = {"set": pre.count("set"), "ball": pre.count("ball"), "cost": 0}
        if cnt:
            sl = slice(pos, pos + cnt)
            pos += cnt
            Xk, Tk = X[keep], th[keep]
            dJ = res.costs[sl] + np.array([system.initial_cost(x) for x in Xk]) \
                - eval_cost(ref, Tk) - system.initial_cost(ref.x0)
            dJ = np.atleast_1d(dJ)
            ok = np.abs(dJ) < kappa
            rejected["cost"] = int((~ok).sum())
            lam_n = sched.lam_at(n)
            grads = lam_n * (res.grads[sl][ok] + np.array([system.initial_cost_grad(x) for x in Xk[ok]]).reshape(-1, system.m))
            rec = LevelRecord(n + 1, sched.window(n), kappa, lam_n, Xk[ok], Tk[ok], grads,
                              dJ[ok], sched.samples_per_level, rejected)
        else:
            empty = np.zeros((0, system.m))
            rec = LevelRecord(n + 1, sched.window(n), kappa, sched.lam_at(n), empty,
                              np.zeros(0), empty, np.zeros(0), sched.samples_per_level, rejected)
        if len(rec) == 0:
            warnings.warn(f"no sample passed the filters at level {n + 1}", EmptyLevelWarning,
                          stacklevel=3)
        out[j].append(rec)
    return [GradientSampleSet(tuple(levels), sched, int(seed),
                              {"digest": process_digest(ref), "system": system.name,
                               "x0": np.asarray(ref.x0).tolist(), "span": list(ref.span)})
            for levels, (ref, sched, seed) in zip(out, jobs)]


def wakk_samples(system, reference, schedule, rng_seed=0, tol=SAMPLE_TOL):
    """Filtered gradients ``lam_n dJ/dx(x; theta)`` around ``reference.x0``.

    Perturbed states are driven by the reference control.
    """
    return _sample_jobs(system, [(reference, schedule, rng_seed)], tol)[0]


def wakk_samples_batch(system, references, schedule, rng_seed=0, tol=SAMPLE_TOL):
    """:func:`wakk_samples` for several references sharing one integration."""
    return _sample_jobs(system, [(ref, schedule, rng_seed) for ref in references], tol)


def _pooled(samples, k=2):
    cloud = samples.deepest(k)
    if len(cloud) == 0:
        raise NoSamplesError("the deepest levels hold no accepted samples")
    return cloud


def wakk_check(psi0, lam, samples, cone=None, tol=MEMBERSHIP_TOL):
    """Is ``-psi0`` within ``tol`` of ``cone + co(samples)``?

    The two deepest levels are pooled.  Returns ``(member, Membership)``.
    """
    if int(lam) != samples.lam:
        raise ValueError("lambda does not match the sample set")
    p = -np.asarray(psi0, dtype=float).reshape(-1)
    cloud = _pooled(samples)
    cone = ZeroCone(p.size) if cone is None else cone
    res = cone_plus_hull_membership(p, cone, hull_of(cloud), tol)
    return res.member, res


# ---------------------------------------------------------------- AKK

@dataclass(frozen=True)
class SequenceResult:
    thetas: list
    distance: float
    nearest: list
    nu: list
    member: bool

    def to_dict(self):
        return {"thetas": self.thetas, "distance": self.distance, "nearest": self.nearest,
                "nu": self.nu, "member": self.member}


def akk_samples(system, process, sequences, radii, *, samples_per_level=16, lam=1, seed=0,
                tol=SAMPLE_TOL):
    """One fixed-horizon sample set per horizon sequence, integrated in one batch."""
    scheds = [LimitSchedule(seq, radii, samples_per_level, lam, "fixed") for seq in sequences]
    return _sample_jobs(system, [(process, s, seed) for s in scheds], tol)


def akk_check(psi0, lam, system=None, process=None, sequences=None, radii=None, cone=None,
              tol=MEMBERSHIP_TOL, *, samples_per_level=16, seed=0, sample_sets=None):
    """Membership of ``-psi0`` in ``cone + Limsup`` for every supplied sequence.

    Unlike :func:`wakk_check` no convex hull is taken: per sequence the
    distance is measured to the nearest pooled sample.  Pass precomputed
    ``sample_sets`` (from :func:`akk_samples`) to test many co-states cheaply.
    """
    if sample_sets is None:
        if sequences is None or len(sequences) < 3:
            raise ValueError("at least three horizon sequences are required")
        sample_sets = akk_samples(system, process, sequences, radii,
                                  samples_per_level=samples_per_level, lam=lam, seed=seed)
    elif len(sample_sets) < 3:
        raise ValueError("at least three horizon sequences are required")
    p = -np.asarray(psi0, dtype=float).reshape(-1)
    cone = ZeroCone(p.size) if cone is None else cone
    results = []
    for ss in sample_sets:
        if int(lam) != ss.lam:
            raise ValueError("lambda does not match the sample set")
        G = _pooled(ss).points
        R = p[None, :] - G
        nus = np.array([cone.project(r) for r in R])
        d = np.linalg.norm(R - nus, axis=1)
        i = int(np.argmin(d))
        results.append(SequenceResult(ss.schedule.thetas.tolist(), float(d[i]), G[i].tolist(),
                                      nus[i].tolist(), bool(d[i] <= tol)))
    return all(r.member for r in results), results


# ---------------------------------------------------------------- AK limit

@dataclass(frozen=True, eq=False)
class AkResult:
    """Outcome of :func:`ak_limit`.

    ``status`` is ``"Converged"``, ``"Oscillating"``, ``"Diverging"`` or
    ``"Inconclusive"`` (tail diameter between ``tol`` and ``10 tol``).
    """

    status: str
    thetas: np.ndarray
    partials: np.ndarray
    window: int
    diameter: float
    value: np.ndarray = None

    @property
    def converged(self):
        return self.status == "Converged"

    @property
    def tail(self):
        return self.partials[-self.window:]

    @property
    def residual(self):
        return self.diameter

    def to_dict(self):
        d = {"status": self.status, "window": self.window, "diameter": self.diameter,
             "thetas": self.thetas.tolist(), "partials": self.partials.tolist()}
        if self.value is not None:
            d["value"] = self.value.tolist()
        return d

    def to_csv(self):
        m = self.partials.shape[1]
        lines = [",".join(["theta"] + [f"partial_{j + 1}" for j in range(m)])]
        for th, row in zip(self.thetas, self.partials):
            lines.append(",".join(format(v, ".16e") for v in [th, *row]))
        return "\n".join(lines) + "\n"


def _diameter(P):
    if P.shape[0] < 2:
        return 0.0
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    return float(D.max())


def ak_limit(system, process, schedule, window=None, tol=1e-6, *, cap=1e8, sens=None,
             sens_tol=(1e-10, 1e-10)):
    """Partial integrals ``int_0^theta f0x A`` along the schedule and their limit status."""
    thetas = schedule.thetas if isinstance(schedule, LimitSchedule) else np.asarray(schedule, float)
    W = tail_count(thetas.size) if window is None else int(window)
    if not 1 <= W <= thetas.size:
        raise ValueError("window must lie between 1 and the number of horizons")
    if sens is None:
        sens = transition_matrix(system, process, float(thetas[-1]), sens_tol)
    P = np.asarray(sens.g_at(thetas), dtype=float).reshape(thetas.size, -1)
    if not np.all(np.isfinite(P)):
        raise NonFiniteError("non-finite partial integral")
    tail = P[-W:]
    diam = _diameter(tail)
    norms = np.linalg.norm(tail, axis=1)
    if diam < tol:
        status, value = "Converged", tail[-1].copy()
    elif W >= 2 and np.all(np.diff(norms) > 0) and norms[-1] > cap:
        status, value = "Diverging", None
    elif diam > 10 * tol:
        status, value = "Oscillating", None
    else:
        status, value = "Inconclusive", None
    return AkResult(status, np.array(thetas, dtype=float), P, W, diam, value)


def psiA_residual(arc, sens, theta):
    """``|psi(theta) A(theta)|``."""
    return float(np.linalg.norm(arc.at(theta) @ sens.A_at(theta)))


# ---------------------------------------------------------------- maxH / Anton

def _u_grid(system, u_grid):
    U = np.asarray(u_grid, dtype=float)
    if U.ndim == 1:
        U = U.reshape(-1, 1) if system.k == 1 else U.reshape(1, -1)
    if U.size == 0:
        raise EmptyGridError("the control grid is empty")
    if U.shape[1] != system.k:
        raise DimensionMismatchError(f"control grid must have shape (G, {system.k})")
    bad = [u for u in U if not system.control_set.contains(u)]
    if bad:
        raise ValueError(f"control grid point {bad[0].tolist()} lies outside U")
    return U


def _probes(t_probe):
    t = t_probe.nodes if isinstance(t_probe, TimeGrid) else np.atleast_1d(np.asarray(t_probe, float))
    if t.size == 0:
        raise EmptyGridError("no probe times")
    return t


class MaxHResult(NamedTuple):
    residual: float
    time: float
    u: np.ndarray
    degenerate: bool
    per_time: np.ndarray

    def to_dict(self):
        return {"residual": self.residual, "time": self.time, "u": self.u.tolist(),
                "degenerate": self.degenerate, "per_time": self.per_time.tolist(),
                "tie_break": "lowest grid index"}


def maxh_residual(system, process, arc, t_probe, u_grid):
    """``max_t [max_{u in grid} H(u) - H(u_hat(t))]`` at ``(y(t), psi(t), arc.lam)``.

    Ties in the grid argmax go to the lowest index.  ``degenerate`` is set for
    ``lam = 0`` with a vanishing arc, where every control maximises ``H``.
    """
    U = _u_grid(system, u_grid)
    ts = _probes(t_probe)
    per = np.empty(ts.size)
    best = (-np.inf, float(ts[0]), U[0])
    all_zero = True
    for i, t in enumerate(ts):
        y = process.state(t)
        psi = arc.at(t)
        all_zero &= bool(np.all(psi == 0))
        uh = np.asarray(process.control(t), dtype=float).reshape(system.k)
        h_hat = hamiltonian(system, y, psi, uh, arc.lam, t)
        vals = hamiltonian(system, y, psi, U.T, arc.lam, t)
        j = int(np.argmax(vals))
        per[i] = max(0.0, float(vals[j]) - h_hat)
        if per[i] > best[0]:
            best = (per[i], float(t), U[j] if per[i] > 0 else uh)
    return MaxHResult(float(best[0]), best[1], np.array(best[2]), arc.lam == 0 and all_zero, per)


class AntonResult(NamedTuple):
    value: float
    time: float
    u: np.ndarray
    per_time: np.ndarray

    def holds(self, tol=1e-6):
        return self.value >= -tol

    def to_dict(self):
        return {"value": self.value, "time": self.time, "u": self.u.tolist(),
                "per_time": self.per_time.tolist()}


def anton_residual(system, process, theta_tail, u_grid, t_probe, *, sens=None,
                   sens_tol=(1e-10, 1e-10)):
    """Liminf surrogate of the Hamiltonian gap under the co-vector ``-dJ/dx(y(t), t; theta)``.

    The co-vector is ``-(g(theta) - g(t)) A(t)^{-1}``.  For each probe ``t`` and
    grid control ``u`` the gap ``H(u_hat) - H(u)`` is minimised over the tail
    horizons after ``t``, then over ``u``; the overall minimum is returned.
    """
    U = _u_grid(system, u_grid)
    ts = _probes(t_probe)
    tail = np.asarray(theta_tail, dtype=float).reshape(-1)
    tail = tail[-tail_count(tail.size):]
    if sens is None:
        sens = transition_matrix(system, process, float(tail.max()), sens_tol)
    g_tail = np.asarray(sens.g_at(tail)).reshape(tail.size, -1)
    per = np.empty(ts.size)
    worst = (np.inf, float(ts[0]), U[0])
    for i, t in enumerate(ts):
        ths = tail > t
        if not np.any(ths):
            raise GridMismatchError(f"no tail horizon exceeds the probe time {t:.17g}")
        y = process.state(t)
        Ainv = np.linalg.inv(sens.A_at(t))
        covs = -(g_tail[ths] - sens.g_at(t)) @ Ainv
        uh = np.asarray(process.control(t), dtype=float).reshape(system.k)
        gaps = np.array([hamiltonian(system, y, c, uh, 1, t) - hamiltonian(system, y, c, U.T, 1, t)
                         for c in covs])
        lim = gaps.min(axis=0)
        j = int(np.argmin(lim))
        per[i] = lim[j]
        if per[i] < worst[0]:
            worst = (float(per[i]), float(t), U[j])
    return AntonResult(worst[0], worst[1], np.array(worst[2]), per)


# ---------------------------------------------------------------- zero and overtaking

def transversality_zero_check(psi0, lam, system, x0, tol=1e-6):
    """``psi0 - lam grad l(x0)`` lies within ``tol`` of the normal cone of ``C0`` at ``x0``."""
    psi0 = np.asarray(psi0, dtype=float).reshape(-1)
    if psi0.size != system.m:
        raise DimensionMismatchError(f"co-state must have length {system.m}")
    v = psi0 - lam * system.initial_cost_grad(x0)
    cone = normal_cone(system.c0, x0)
    return bool(np.linalg.norm(v - cone.project(v)) <= tol)


def overtaking_compare(system, process_a, process_b, theta_grid):
    """Min and max over the tail of ``l(y_b(0)) - l(y_a(0)) + J_b(theta) - J_a(theta)``."""
    th = np.asarray(theta_grid, dtype=float).reshape(-1)
    if th.size == 0:
        raise EmptyGridError("empty horizon grid")
    if abs(process_a.t0 - process_b.t0) > 1e-12:
        raise GridMismatchError("the processes start at different times")
    top = th.max()
    for pr in (process_a, process_b):
        if pr.span[1] < top - 1e-9 * max(1.0, top):
            raise GridMismatchError("a process does not reach the last horizon")
    tail = th[-tail_count(th.size):]
    diff = (system.initial_cost(process_b.x0) - system.initial_cost(process_a.x0)
            + np.atleast_1d(eval_cost(process_b, tail)) - np.atleast_1d(eval_cost(process_a, tail)))
    return float(diff.min()), float(diff.max())
