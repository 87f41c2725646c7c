"""Control systems, control signals and processes.

Array conventions used throughout the package: states are 1-D arrays of
length ``m``; batched states have shape ``(m, B)`` with the batch axis last.
Co-vectors (``psi``, ``f0x``, gradients) are plain 1-D arrays read as rows.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _integrators as _int
from .errors import (DimensionMismatchError, EmptyGridError, NonFiniteError,
                     OutOfRangeError)
from .sets import ControlSet, WholeSpace

DEFAULT_TOL = (1e-9, 1e-9)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    nodes: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float).ravel()
        if t.size < 2:
            raise EmptyGridError("a time grid needs at least 2 nodes")
        if not np.all(np.isfinite(t)):
            raise NonFiniteError("time grid nodes must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid nodes must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "nodes", t)

    @classmethod
    def linspace(cls, t0, t1, n):
        return cls(np.linspace(t0, t1, n))

    @property
    def span(self):
        return float(self.nodes[0]), float(self.nodes[-1])

    def __len__(self):
        return self.nodes.size

    def __iter__(self):
        return iter(self.nodes)


class ControlSignal:
    """A control ``t -> u(t)`` in R^k.

    ``kind == "analytic"`` wraps a callable; ``kind == "grid"`` holds one value
    per interval of a :class:`TimeGrid` and is right-continuous.
    """

    def __init__(self, k, *, fn=None, grid=None, values=None, control_set=None):
        self.k = int(k)
        self.control_set = control_set
        if fn is not None:
            self.kind = "analytic"
            self.fn = fn
            self.grid = None
            self.values = None
        else:
            if grid is None or values is None:
                raise ValueError("grid control needs both grid and values")
            if not isinstance(grid, TimeGrid):
                grid = TimeGrid(grid)
            vals = np.asarray(values, dtype=float).reshape(len(grid) - 1, self.k)
            if not np.all(np.isfinite(vals)):
                raise NonFiniteError("control values must be finite")
            if control_set is not None and not all(control_set.contains(v) for v in vals):
                raise ValueError("control value outside the control set")
            vals.setflags(write=False)
            self.kind = "grid"
            self.fn = None
            self.grid = grid
            self.values = vals

    @classmethod
    def analytic(cls, k, fn, control_set=None):
        return cls(k, fn=fn, control_set=control_set)

    @classmethod
    def constant(cls, u, control_set=None):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(u.size, fn=lambda t, _u=u: _u, control_set=control_set)

    @classmethod
    def from_grid(cls, grid, values, control_set=None):
        return cls(np.asarray(values).reshape(len(values), -1).shape[1], grid=grid,
                   values=values, control_set=control_set)

    def _index(self, t):
        nodes = self.grid.nodes
        return np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, nodes.size - 2)

    def __call__(self, t):
        if self.kind == "analytic":
            return np.asarray(self.fn(t), dtype=float)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return self.values[self._index(t)]
        return self.values[self._index(t)].T

    def sample(self, times):
        """Values at ``times`` as an array of shape ``(len(times), k)``."""
        times = np.asarray(times, dtype=float)
        if self.kind == "grid":
            return self.values[self._index(times)]
        return np.array([np.atleast_1d(self(t)) for t in times]).reshape(times.size, self.k)

    @property
    def breakpoints(self):
        return () if self.kind == "analytic" else tuple(self.grid.nodes)

    def segments(self, a, b):
        """Split ``[a, b]`` (either orientation) into pieces with a smooth control.

        Yields ``(ta, tb, ufun)``; on grid pieces ``ufun`` is the constant value
        so that no integrator stage ever sees the neighbouring interval.
        """
        if self.kind == "analytic":
            return [(a, b, self.fn)]
        lo, hi = min(a, b), max(a, b)
        inner = [c for c in self.grid.nodes if lo < c < hi]
        cuts = [lo] + inner + [hi]
        pieces = []
        for ta, tb in zip(cuts[:-1], cuts[1:]):
            val = self.values[self._index(0.5 * (ta + tb))]
            pieces.append((ta, tb, lambda t, _v=val: _v))
        if b < a:
            pieces = [(tb, ta, fn) for ta, tb, fn in reversed(pieces)]
        return pieces

    def to_dict(self):
        if self.kind == "grid":
            return {"kind": "grid", "nodes": self.grid.nodes.tolist(),
                    "values": self.values.tolist()}
        return {"kind": "analytic", "k": self.k}


def _fd_jacobian(fun, x, scalar):
    """Central differences in ``x``; ``x`` may carry a trailing batch axis."""
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    norm = np.linalg.norm(x, axis=0)
    h = np.maximum(1e-6, 1e-8 * norm)
    cols = []
    for j in range(m):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((np.asarray(fun(x + e)) - np.asarray(fun(x - e))) / (2 * h))
    if scalar:
        return np.stack(cols)
    return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class ControlSystem:
    """Dynamics ``f``, running cost ``f0`` and initial cost ``l``.

    ``f(t, x, u)`` returns R^m and ``f0(t, x, u)`` a scalar.  When
    ``vectorized`` is true they also accept ``x`` of shape ``(m, B)`` and ``u``
    of shape ``(k, B)`` (or ``(k,)``), returning ``(m, B)`` and ``(B,)``; the
    Jacobians then return ``(m, m, B)`` and ``(m, B)``.  Missing Jacobians are
    replaced by central finite differences.
    """

    m: int
    k: int
    f: Callable
    f0: Callable
    fx: Optional[Callable] = None
    f0x: Optional[Callable] = None
    l: Optional[Callable] = None
    grad_l: Optional[Callable] = None
    control_set: Optional[ControlSet] = None
    c0: object = None
    c_as: object = None
    vectorized: bool = False
    name: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or self.k < 1:
            raise DimensionMismatchError("state and control dimensions must be >= 1")
        if self.control_set is None:
            object.__setattr__(self, "control_set", ControlSet(self.k))
        if self.c0 is None:
            object.__setattr__(self, "c0", WholeSpace(self.m))
        if self.c_as is None:
            object.__setattr__(self, "c_as", WholeSpace(self.m))

    # single-point evaluation -------------------------------------------------
    def dyn(self, t, x, u):
        return np.asarray(self.f(t, x, u), dtype=float).reshape(self.m)

    def cost_rate(self, t, x, u):
        return float(np.asarray(self.f0(t, x, u), dtype=float).reshape(()))

    def jac_x(self, t, x, u):
        if self.fx is not None:
            return np.asarray(self.fx(t, x, u), dtype=float).reshape(self.m, self.m)
        return _fd_jacobian(lambda z: self.dyn(t, z, u), x, scalar=False)

    def grad0_x(self, t, x, u):
        if self.f0x is not None:
            return np.asarray(self.f0x(t, x, u), dtype=float).reshape(self.m)
        return _fd_jacobian(lambda z: self.cost_rate(t, z, u), x, scalar=True)

    def initial_cost(self, x):
        return 0.0 if self.l is None else float(self.l(np.asarray(x, dtype=float)))

    def initial_cost_grad(self, x):
        if self.grad_l is not None:
            return np.asarray(self.grad_l(np.asarray(x, dtype=float)), dtype=float).reshape(self.m)
        if self.l is None:
            return np.zeros(self.m)
        return _fd_jacobian(lambda z: self.initial_cost(z), np.asarray(x, dtype=float), scalar=True)

    # batched evaluation (batch axis last) -----------------------------------
    def _loop(self, fn, x, u, shape):
        B = x.shape[1]
        u = np.broadcast_to(u.reshape(self.k, -1), (self.k, B))
        out = np.empty(shape + (B,))
        for b in range(B):
            out[..., b] = fn(x[:, b], u[:, b])
        return out

    def dyn_batch(self, t, x, u):
        if self.vectorized:
            return np.broadcast_to(np.asarray(self.f(t, x, u), dtype=float), x.shape)
        return self._loop(lambda xb, ub: self.dyn(t, xb, ub), x, u, (self.m,))

    def cost_rate_batch(self, t, x, u):
        if self.vectorized:
            return np.broadcast_to(np.asarray(self.f0(t, x, u), dtype=float), x.shape[1:])
        return self._loop(lambda xb, ub: self.cost_rate(t, xb, ub), x, u, ())

    def jac_x_batch(self, t, x, u):
        if self.vectorized and self.fx is not None:
            return np.broadcast_to(np.asarray(self.fx(t, x, u), dtype=float),
                                   (self.m, self.m) + x.shape[1:])
        if self.vectorized:
            return _fd_jacobian(lambda z: self.dyn_batch(t, z, u), x, scalar=False)
        return self._loop(lambda xb, ub: self.jac_x(t, xb, ub), x, u, (self.m, self.m))

    def grad0_x_batch(self, t, x, u):
        if self.vectorized and self.f0x is not None:
            return np.broadcast_to(np.asarray(self.f0x(t, x, u), dtype=float), x.shape)
        if self.vectorized:
            return _fd_jacobian(lambda z: self.cost_rate_batch(t, z, u), x, scalar=True)
        return self._loop(lambda xb, ub: self.grad0_x(t, xb, ub), x, u, (self.m,))

    def check_jacobians(self, probes, rtol=1e-5, atol=1e-7):
        """Compare ``fx``/``f0x`` with central differences at ``(t, x, u)`` probes.

        Returns the largest scaled discrepancy; values ``<= 1`` pass.
        """
        worst = 0.0
        for t, x, u in probes:
            x = np.asarray(x, dtype=float)
            u = np.asarray(u, dtype=float)
            pairs = [(self.jac_x(t, x, u), _fd_jacobian(lambda z: self.dyn(t, z, u), x, False)),
                     (self.grad0_x(t, x, u), _fd_jacobian(lambda z: self.cost_rate(t, z, u), x, True))]
            for exact, approx in pairs:
                scale = atol + rtol * np.maximum(np.abs(exact), np.abs(approx))
                worst = max(worst, float(np.max(np.abs(exact - approx) / scale)))
        return worst


@dataclass(frozen=True, eq=False)
class Process:
    """A trajectory ``y`` with running cost ``w`` generated by ``control``.

    ``path`` is the dense (piecewise quartic) representation of ``(y, w)``
    produced by the integrator; ``derivs`` holds ``(dy/dt, dw/dt)`` at nodes.
    """

    grid: TimeGrid
    states: np.ndarray
    cost_path: np.ndarray
    control: ControlSignal
    derivs: np.ndarray
    path: _int.DensePath
    system: Optional[ControlSystem] = None
    info: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.states.shape[1]

    @property
    def t0(self):
        return self.grid.span[0]

    @property
    def x0(self):
        return self.states[0]

    @property
    def span(self):
        return self.grid.span

    def state(self, t):
        z = self.path(t)
        return z[..., : self.m]

    def cost(self, t):
        return eval_cost(self, t)

    def to_csv(self, dest=None):
        """Write columns ``t, y_1..y_m, w``; returns the text when ``dest`` is None."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"y_{i + 1}" for i in range(self.m)] + ["w"])
        for t, y, c in zip(self.grid.nodes, self.states, self.cost_path):
            w.writerow([_fmt(t)] + [_fmt(v) for v in y] + [_fmt(c)])
        text = buf.getvalue()
        if dest is None:
            return text
        with open(dest, "w", encoding="utf-8") as fh:
            fh.write(text)
        return text


def _fmt(v):
    return format(float(v), ".16e")


def _as_state(x, m):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (m,):
        raise DimensionMismatchError(f"expected a state of length {m}, got shape {x.shape}")
    return x


def run_segments(control, t0, t1, z0, make_rhs, *, method="dopri5", tol=DEFAULT_TOL,
                 step=None, stops=(), recorder=None, on_step=None, max_step=np.inf):
    """Integrate ``z' = make_rhs(ufun)(t, z)`` over the control's smooth pieces."""
    z = np.array(z0, dtype=float)
    for ta, tb, ufun in control.segments(t0, t1):
        z = _int.integrate(make_rhs(ufun), ta, z, tb, method=method, rtol=tol[0],
                           atol=tol[1], step=step, stops=stops, recorder=recorder,
                           on_step=on_step, max_step=max_step)
    return z


def integrate_process(system, x0, t0, u, t_end, tol=DEFAULT_TOL, *, method="dopri5",
                      step=None, stops=(), max_step=np.inf):
    """Integrate the state equation and the running cost from ``(t0, x0)`` to ``t_end``."""
    if not t_end > t0:
        raise ValueError("t_end must exceed t0")
    if u.k != system.k:
        raise DimensionMismatchError("control dimension does not match the system")
    x0 = _as_state(x0, system.m)
    m = system.m

    def make_rhs(ufun):
        def rhs(t, z):
            uu = ufun(t)
            out = np.empty(m + 1)
            out[:m] = system.f(t, z[:m], uu)
            out[m] = system.f0(t, z[:m], uu)
            return out
        return rhs

    rec = _int.Recorder()
    run_segments(u, t0, t_end, np.append(x0, 0.0), make_rhs, method=method, tol=tol,
                 step=step, stops=stops, recorder=rec, max_step=max_step)
    path = rec.path()
    values = path.values
    grid = TimeGrid(path.t)
    derivs = path.node_derivs
    return Process(grid=grid, states=values[:, :m].copy(), cost_path=values[:, m].copy(),
                   control=u, derivs=derivs, path=path, system=system)


def eval_cost(process, theta):
    """``J(x0, t0, u; theta)`` interpolated from the process."""
    lo, hi = process.span
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < lo - 1e-9 * max(1, abs(lo))) or np.any(theta > hi + 1e-9 * max(1, abs(hi))):
        raise OutOfRangeError(f"theta outside the process span [{lo:.17g}, {hi:.17g}]")
    z = process.path(np.clip(theta, lo, hi))
    out = z[..., process.m]
    return float(out) if out.ndim == 0 else out


def hamiltonian(system, x, psi, u, lam, t):
    """``psi . f(t, x, u) - lam * f0(t, x, u)``.

    ``u`` may be a single control or a ``(k, G)`` array of candidates, in which
    case an array of ``G`` values is returned.
    """
    x = _as_state(x, system.m)
    psi = np.asarray(psi, dtype=float).reshape(system.m)
    u = np.asarray(u, dtype=float)
    if u.ndim <= 1:
        val = psi @ system.dyn(t, x, u.reshape(system.k)) - lam * system.cost_rate(t, x, u)
        if not np.isfinite(val):
            raise NonFiniteError(f"non-finite Hamiltonian at t={t:.17g}")
        return float(val)
    G = u.shape[1]
    X = np.repeat(x[:, None], G, axis=1)
    vals = psi @ system.dyn_batch(t, X, u) - lam * system.cost_rate_batch(t, X, u)
    if not np.all(np.isfinite(vals)):
        raise NonFiniteError(f"non-finite Hamiltonian at t={t:.17g}")
    return np.asarray(vals, dtype=float)
