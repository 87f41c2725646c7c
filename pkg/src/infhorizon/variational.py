"""Variational and adjoint equations along a process.

The transition matrix solves ``A' = fx A`` from the identity and the cost
gradient row is ``g(t) = int f0x A``.  Co-states solve
``-psi' = psi fx - lam f0x``.  All of these are integrated against the state
re-interpolated from the stored :class:`~infhorizon.ode_core.Process`, so every
derived quantity refers to one realisation of the trajectory.
"""
from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from . import _integrators as _int
from .errors import (DimensionMismatchError, GridMismatchError, OutOfRangeError,
                     SingularTransitionWarning)
from .ode_core import DEFAULT_TOL, ControlSignal, TimeGrid, run_segments

COND_LIMIT = 1e12
_STAGES = 8  # horizon stages in batch_sensitivity


def _check_theta(process, theta):
    lo, hi = process.span
    if theta is None:
        return hi
    theta = float(theta)
    if theta < lo or theta > hi + 1e-9 * max(1.0, abs(hi)):
        raise OutOfRangeError(f"theta={theta:.17g} outside the process span [{lo:.17g}, {hi:.17g}]")
    return min(theta, hi)


@dataclass(frozen=True, eq=False)
class SensitivityPath:
    grid: TimeGrid
    A: np.ndarray
    g: np.ndarray
    cond: np.ndarray
    path: _int.DensePath

    @property
    def m(self):
        return self.g.shape[1]

    @property
    def singular(self):
        """True when the 1-norm condition number of A exceeded the limit somewhere."""
        return bool(np.any(self.cond > COND_LIMIT))

    def _z(self, t):
        try:
            return self.path(t)
        except OutOfRangeError as exc:
            raise GridMismatchError(str(exc)) from None

    def A_at(self, t):
        z = self._z(t)
        return z[..., : self.m * self.m].reshape(z.shape[:-1] + (self.m, self.m))

    def g_at(self, t):
        return self._z(t)[..., self.m * self.m:]

    def to_csv(self, dest=None):
        m = self.m
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"A_{i + 1}{j + 1}" for i in range(m) for j in range(m)]
                   + [f"g_{j + 1}" for j in range(m)])
        for t, A, g in zip(self.grid.nodes, self.A, self.g):
            w.writerow([format(v, ".16e") for v in np.concatenate([[t], A.ravel(), g])])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def transition_matrix(system, process, theta=None, tol=DEFAULT_TOL, *, method="dopri5", step=None):
    """Integrate ``A`` and ``g`` along ``process`` from its start to ``theta``."""
    theta = _check_theta(process, theta)
    m = system.m
    t0 = process.t0
    if theta == t0:
        raise OutOfRangeError("theta must lie after the start of the process")

    def make_rhs(ufun):
        def rhs(t, z):
            y = process.state(t)
            u = ufun(t)
            A = z[: m * m].reshape(m, m)
            out = np.empty_like(z)
            out[: m * m] = (system.jac_x(t, y, u) @ A).ravel()
            out[m * m:] = system.grad0_x(t, y, u) @ A
            return out
        return rhs

    conds = []

    def watch(ta, tb, coeffs):
        A = coeffs.sum(axis=0)[: m * m].reshape(m, m)
        conds.append(np.linalg.cond(A, 1))

    z0 = np.concatenate([np.eye(m).ravel(), np.zeros(m)])
    rec = _int.Recorder()
    run_segments(process.control, t0, theta, z0, make_rhs, method=method, tol=tol, step=step,
                 recorder=rec, on_step=watch)
    path = rec.path()
    vals = path.values
    cond = np.concatenate([[1.0], conds])
    if np.any(cond > COND_LIMIT):
        warnings.warn(f"transition matrix condition number reached {cond.max():.3g}",
                      SingularTransitionWarning, stacklevel=2)
    return SensitivityPath(grid=TimeGrid(path.t), A=vals[:, : m * m].reshape(-1, m, m),
                           g=vals[:, m * m:], cond=cond, path=path)


def cost_gradient(system, process, theta, tol=DEFAULT_TOL, **kw):
    """``dJ/dx(x0; theta) = int_0^theta f0x A``, a row of length m."""
    sens = transition_matrix(system, process, theta, tol, **kw)
    return sens.g[-1].copy()


@dataclass(frozen=True, eq=False)
class CostateArc:
    grid: TimeGrid
    psi: np.ndarray
    lam: float
    path: _int.DensePath

    @property
    def m(self):
        return self.psi.shape[1]

    @property
    def span(self):
        return self.grid.span

    def at(self, t):
        try:
            return self.path(t)
        except OutOfRangeError as exc:
            raise GridMismatchError(str(exc)) from None

    @classmethod
    def from_function(cls, fn, times, lam, fn_dot=None):
        """Tabulate an analytic arc; ``fn_dot`` enables exact Hermite pieces."""
        times = np.asarray(times, dtype=float)
        psi = np.array([np.asarray(fn(t), dtype=float) for t in times])
        if fn_dot is None:
            dpsi = np.gradient(psi, times, axis=0, edge_order=2)
        else:
            dpsi = np.array([np.asarray(fn_dot(t), dtype=float) for t in times])
        return cls(TimeGrid(times), psi, float(lam), _int.DensePath.from_hermite(times, psi, dpsi))

    def to_csv(self, dest=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"psi_{j + 1}" for j in range(self.m)])
        for t, p in zip(self.grid.nodes, self.psi):
            w.writerow([format(v, ".16e") for v in np.concatenate([[t], p])])
        text = buf.getvalue()
        if dest is not None:
            with open(dest, "w", encoding="utf-8") as fh:
                fh.write(text)
        return text


def _adjoint(system, process, psi_start, lam, t_start, t_stop, tol, method, step):
    m = system.m
    psi_start = np.asarray(psi_start, dtype=float).reshape(-1)
    if psi_start.size != m:
        raise DimensionMismatchError(f"co-state must have length {m}")
    if lam not in (0, 1):
        raise ValueError("lambda must be 0 or 1")

    def make_rhs(ufun):
        def rhs(t, psi):
            y = process.state(t)
            u = ufun(t)
            return -(psi @ system.jac_x(t, y, u)) + lam * system.grad0_x(t, y, u)
        return rhs

    rec = _int.Recorder()
    run_segments(process.control, t_start, t_stop, psi_start, make_rhs, method=method,
                 tol=tol, step=step, recorder=rec)
    path = rec.path()
    return CostateArc(TimeGrid(path.t), path.values, float(lam), path)


def integrate_adjoint(system, process, psi0, lam, t_end=None, tol=DEFAULT_TOL, *,
                      method="dopri5", step=None):
    """Forward co-state arc from ``psi(t0) = psi0``."""
    t_end = _check_theta(process, t_end)
    return _adjoint(system, process, psi0, lam, process.t0, t_end, tol, method, step)


def costate_from_terminal(system, process, psi_theta, theta, lam, tol=DEFAULT_TOL, *,
                          method="dopri5", step=None):
    """Co-state arc integrated backward from ``psi(theta) = psi_theta``."""
    theta = _check_theta(process, theta)
    return _adjoint(system, process, psi_theta, lam, theta, process.t0, tol, method, step)


def cauchy_residual(arc, sens, t, theta):
    """``|psi(theta)A(theta) - psi(t)A(t) - (g(theta) - g(t))|``."""
    if arc.lam != 1:
        raise ValueError("the Cauchy formula is stated for lambda = 1")
    if t > theta:
        raise ValueError("need t <= theta")
    r = (arc.at(theta) @ sens.A_at(theta) - arc.at(t) @ sens.A_at(t)
         - (sens.g_at(theta) - sens.g_at(t)))
    return float(np.linalg.norm(r))


@dataclass(frozen=True)
class BatchSensitivity:
    """End values for a batch of initial states, each read off at its own horizon."""

    thetas: np.ndarray
    states: np.ndarray
    costs: np.ndarray
    grads: np.ndarray


def _merge_controls(controls, groups, k):
    """One analytic control returning ``(k, B)``: column ``b`` follows ``controls[groups[b]]``."""
    vals = np.empty((k, len(controls)))

    def fn(t):
        for i, c in enumerate(controls):
            vals[:, i] = c(t)
        return vals[:, groups]
    return ControlSignal.analytic(k, fn)


def batch_sensitivity(system, control, X0, t0, thetas, tol=DEFAULT_TOL, *, method="dopri5",
                      step=None, with_matrix=True, groups=None):
    """Integrate state, cost, ``A`` and ``g`` for every column of ``X0`` jointly.

    Column ``b`` starts at ``X0[:, b]`` at ``t0`` and is read off at
    ``thetas[b]`` from the dense output of the step containing it.
    With ``with_matrix=False`` the caller asserts ``fx == 0`` so that ``A``
    stays the identity and is not integrated.

    ``control`` may also be a list of signals; ``groups[b]`` then names the
    signal driving column ``b``.  Analytic signals share one integration,
    grid signals are run group by group.
    """
    X0 = np.asarray(X0, dtype=float)
    m = system.m
    if X0.ndim != 2 or X0.shape[0] != m:
        raise DimensionMismatchError("X0 must have shape (m, B)")
    B = X0.shape[1]
    thetas = np.broadcast_to(np.asarray(thetas, dtype=float), (B,))
    if isinstance(control, (list, tuple)):
        groups = np.zeros(B, dtype=int) if groups is None else np.asarray(groups, dtype=int)
        if groups.shape != (B,) or groups.min(initial=0) < 0 or groups.max(initial=0) >= len(control):
            raise DimensionMismatchError("groups must index the control list, one entry per column")
        if len(control) == 1 or all(c.kind == "analytic" for c in control):
            control = control[0] if len(control) == 1 else _merge_controls(control, groups, system.k)
        else:
            parts = [None] * len(control)
            for gi, ctrl in enumerate(control):
                cols = np.flatnonzero(groups == gi)
                if cols.size:
                    parts[gi] = (cols, batch_sensitivity(system, ctrl, X0[:, cols], t0, thetas[cols],
                                                         tol, method=method, step=step,
                                                         with_matrix=with_matrix))
            states = np.empty((B, m))
            costs = np.empty(B)
            grads = np.empty((B, m))
            for part in parts:
                if part is not None:
                    cols, res = part
                    states[cols], costs[cols], grads[cols] = res.states, res.costs, res.grads
            return BatchSensitivity(np.array(thetas), states, costs, grads)
    if np.any(thetas <= t0):
        raise OutOfRangeError("every horizon must exceed t0")
    nA = m * m if with_matrix else 0
    width = m + 1 + nA + m
    eye = np.eye(m)

    live = [np.arange(B)]

    def make_rhs(ufun):
        def rhs(t, z):
            cols = live[0]
            n = cols.size
            u = np.asarray(ufun(t), dtype=float)
            if u.ndim == 2 and u.shape[1] == B and n != B:
                u = u[:, cols]
            Z = z.reshape(width, n)
            Y = Z[:m]
            out = np.empty((width, n))
            out[:m] = system.dyn_batch(t, Y, u)
            out[m] = system.cost_rate_batch(t, Y, u)
            gx = system.grad0_x_batch(t, Y, u)
            if with_matrix:
                A = Z[m + 1: m + 1 + nA].reshape(m, m, n)
                fx = system.jac_x_batch(t, Y, u)
                out[m + 1: m + 1 + nA] = np.einsum("ijb,jkb->ikb", fx, A).reshape(nA, n)
                out[m + 1 + nA:] = np.einsum("jb,jkb->kb", gx, A)
            else:
                out[m + 1:] = gx
            return out.ravel()
        return rhs

    Z = np.zeros((width, B))
    Z[:m] = X0
    if with_matrix:
        Z[m + 1: m + 1 + nA] = np.repeat(eye.reshape(-1, 1), B, axis=1)
    out = np.full((width, B), np.nan)
    order = np.argsort(thetas, kind="stable")
    sorted_th = thetas[order]
    cursor = [0]

    def capture(ta, tb, coeffs):
        i = cursor[0]
        j = i
        while j < B and sorted_th[j] <= tb + 1e-12 * max(1.0, abs(tb)):
            j += 1
        if j == i:
            return
        cols = order[i:j]
        pos = np.searchsorted(live[0], cols)
        s = np.clip((thetas[cols] - ta) / (tb - ta), 0.0, 1.0)
        c = coeffs.reshape(coeffs.shape[0], width, live[0].size)[:, :, pos]
        out[:, cols] = _int.poly_eval(c, s[None, :])
        cursor[0] = j

    # Integrate in stages and drop columns whose horizon has been read off,
    # so short horizons do not ride along to the longest one.
    stages = min(_STAGES, B)
    bounds = np.unique(sorted_th[np.ceil(B * np.arange(1, stages + 1) / stages).astype(int) - 1])
    t = t0
    for bound in bounds:
        if bound > t:
            z = run_segments(control, t, float(bound), Z.ravel(), make_rhs, method=method,
                             tol=tol, step=step, on_step=capture)
            Z = z.reshape(width, -1)
            t = float(bound)
        keep = thetas[live[0]] > t
        live[0] = live[0][keep]
        Z = Z[:, keep]
        if live[0].size == 0:
            break

    def unpack(z):
        Zf = z.reshape(width, B)
        return Zf[:m], Zf[m + 1: m + 1 + nA], Zf[m + 1 + nA:]

    Y, _, G = unpack(out.ravel())
    return BatchSensitivity(thetas=np.array(thetas), states=Y.T.copy(), costs=out[m].copy(),
                            grads=G.T.copy())
