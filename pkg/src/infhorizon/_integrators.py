"""Explicit Runge-Kutta integrators with piecewise-polynomial dense output.

The integrators work on flat float vectors.  Every accepted step is stored as
one polynomial piece in the local coordinate ``s = (t - t_a) / (t_b - t_a)``,
so a path may carry derivative jumps at control breakpoints.  Dormand-Prince
steps use the method's own quartic continuous extension; fixed-step RK4 and
analytically sampled paths use cubic Hermite pieces.
"""
import math

import numpy as np

from .errors import NonFiniteError, OutOfRangeError, StepUnderflowError

# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A_ROWS = [np.array(row, dtype=float) for row in _A]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
# continuous extension: y(t + s h) = y + h * sum_j (K^T P)[:, j] s^(j+1)
_P = np.array([
    [1, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0, 0, 0, 0],
    [0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 5.0
_DEG = 4


def hermite_coeffs(ya, yb, fa, fb, h):
    """Coefficients (in ``s``) of the cubic Hermite piece, padded to degree 4."""
    m0, m1 = h * fa, h * fb
    return np.stack([ya, m0, 3 * (yb - ya) - 2 * m0 - m1, 2 * (ya - yb) + m0 + m1, np.zeros_like(ya)])


def _reverse(c):
    # coefficients of q(s) = p(1 - s)
    out = np.zeros_like(c)
    for j in range(c.shape[0]):
        for k in range(j + 1):
            out[k] += c[j] * math.comb(j, k) * (-1) ** k
    return out


def poly_eval(c, s, h=None, deriv=False):
    """Evaluate one piece (or a stack of pieces broadcast against ``s``)."""
    if deriv:
        acc = _DEG * c[_DEG]
        for j in range(_DEG - 1, 0, -1):
            acc = acc * s + j * c[j]
        return acc / h
    acc = c[_DEG]
    for j in range(_DEG - 1, -1, -1):
        acc = acc * s + c[j]
    return acc


class DensePath:
    """Piecewise quartic path over increasing nodes ``t``.

    ``coeffs[i, j]`` is the coefficient of ``s**j`` on ``[t[i], t[i+1]]``.
    Trailing axes of ``coeffs`` give the value shape.
    """

    def __init__(self, t, coeffs):
        self.t = np.asarray(t, dtype=float)
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.t.size < 2 or np.any(np.diff(self.t) <= 0):
            raise ValueError("path nodes must be strictly increasing (at least 2)")
        if self.coeffs.shape[:2] != (self.t.size - 1, _DEG + 1):
            raise ValueError("coefficient array does not match the nodes")

    @classmethod
    def from_hermite(cls, t, y, dy):
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        dy = np.asarray(dy, dtype=float)
        h = np.diff(t).reshape((-1,) + (1,) * (y.ndim - 1))
        c = hermite_coeffs(y[:-1], y[1:], dy[:-1], dy[1:], h)
        return cls(t, np.moveaxis(c, 0, 1))

    @property
    def span(self):
        return float(self.t[0]), float(self.t[-1])

    @property
    def values(self):
        """Path values at the nodes."""
        last = self.coeffs[-1].sum(axis=0)
        return np.concatenate([self.coeffs[:, 0], last[None]], axis=0)

    @property
    def node_derivs(self):
        """Right-sided derivative at each node (left-sided at the last node)."""
        h = np.diff(self.t).reshape((-1,) + (1,) * (self.coeffs.ndim - 2))
        start = self.coeffs[:, 1] / h
        c = self.coeffs[-1]
        end = sum(j * c[j] for j in range(1, _DEG + 1)) / h[-1]
        return np.concatenate([start, end[None]], axis=0)

    def check_range(self, tq, slack=1e-9):
        tq = np.asarray(tq, dtype=float)
        lo, hi = self.span
        pad = slack * max(1.0, abs(lo), abs(hi))
        if np.any(tq < lo - pad) or np.any(tq > hi + pad):
            raise OutOfRangeError(f"time outside [{lo:.17g}, {hi:.17g}]")

    def __call__(self, tq, deriv=False):
        tq = np.asarray(tq, dtype=float)
        self.check_range(tq)
        scalar = tq.ndim == 0
        tq = np.atleast_1d(tq)
        i = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, self.t.size - 2)
        h = self.t[i + 1] - self.t[i]
        s = (tq - self.t[i]) / h
        shape = (-1,) + (1,) * (self.coeffs.ndim - 2)
        c = np.moveaxis(self.coeffs[i], 1, 0)
        out = poly_eval(c, s.reshape(shape), h.reshape(shape), deriv=deriv)
        return out[0] if scalar else out

    def map(self, fn):
        """Apply a linear map to every coefficient (e.g. select components)."""
        return DensePath(self.t, fn(self.coeffs))

    @classmethod
    def concat(cls, paths):
        t = [paths[0].t]
        c = [paths[0].coeffs]
        for p in paths[1:]:
            if abs(p.t[0] - t[-1][-1]) > 1e-12 * max(1.0, abs(p.t[0])):
                raise ValueError("paths are not contiguous")
            t.append(p.t[1:])
            c.append(p.coeffs)
        return cls(np.concatenate(t), np.concatenate(c, axis=0))


class Recorder:
    """Collects accepted steps; ``path()`` turns them into a :class:`DensePath`."""

    def __init__(self):
        self.t = []
        self.c = []

    def add(self, ta, tb, coeffs):
        if not self.t:
            self.t.append(ta)
        self.t.append(tb)
        self.c.append(coeffs)

    def path(self):
        t = np.array(self.t)
        c = np.array(self.c)
        if t[-1] < t[0]:
            c = np.array([_reverse(ci) for ci in c[::-1]])
            t = t[::-1]
        return DensePath(t, c)


def _check_finite(arr, t):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite value encountered at t={t:.17g}")


def _initial_step(fun, t0, y0, f0, direction, rtol, atol, max_step):
    scale = atol + np.abs(y0) * rtol
    d0 = np.max(np.abs(y0) / scale, initial=0.0)
    d1 = np.max(np.abs(f0) / scale, initial=0.0)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, max_step)
    f1 = np.asarray(fun(t0 + direction * h0, y0 + direction * h0 * f0), dtype=float)
    d2 = np.max(np.abs(f1 - f0) / scale, initial=0.0) / h0
    if not np.isfinite(d2):
        return h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, max_step)


def _marks(stops, t0, t1, direction):
    inside = {float(s) for s in stops if (s - t0) * direction > 0 and (t1 - s) * direction > 0}
    return sorted(inside, reverse=direction < 0) + [float(t1)]


def dopri5(fun, t0, y0, t1, rtol=1e-9, atol=1e-9, *, stops=(), max_step=np.inf,
           min_step=None, on_step=None, recorder=None, max_steps=1_000_000):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1`` with Dormand-Prince 5(4).

    Steps end exactly on every time in ``stops``.  After each accepted step
    ``on_step(ta, tb, coeffs)`` receives the step's dense-output polynomial.
    Returns the final state.
    """
    direction = 1.0 if t1 >= t0 else -1.0
    y = np.array(y0, dtype=float)
    t = float(t0)
    if t1 == t0:
        return y
    f = np.asarray(fun(t, y), dtype=float)
    _check_finite(f, t)
    h = _initial_step(fun, t, y, f, direction, rtol, atol, min(max_step, abs(t1 - t0)))
    steps = 0
    for target in _marks(stops, t0, t1, direction):
        while (target - t) * direction > 0:
            hmin = 1e-12 * max(1.0, abs(t)) if min_step is None else min_step
            remaining = abs(target - t)
            h = h_proposed = min(h, max_step)
            last = h >= remaining * (1 - 1e-12)
            if last:
                h = remaining
            while True:
                if h < hmin and not last:
                    raise StepUnderflowError(f"step {h:.3g} below minimum at t={t:.17g}")
                dt = direction * h
                K = np.empty((7,) + y.shape)
                K[0] = f
                finite = True
                for s in range(1, 7):
                    ys = y + dt * np.tensordot(_A_ROWS[s], K[:s], axes=1)
                    ks = np.asarray(fun(t + _C[s] * dt, ys), dtype=float)
                    if not np.all(np.isfinite(ks)):
                        finite = False
                        break
                    K[s] = ks
                if not finite:
                    if h * 0.1 < hmin:
                        raise NonFiniteError(f"non-finite derivative near t={t:.17g}")
                    h *= 0.1
                    last = False
                    continue
                y_new = y + dt * np.tensordot(_B, K, axes=1)
                err_vec = dt * np.tensordot(_E, K, axes=1)
                scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
                err = np.max(np.abs(err_vec) / scale, initial=0.0)
                if err <= 1.0:
                    break
                h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
                last = False
            t_new = target if last else t + dt
            _check_finite(y_new, t_new)
            Q = np.tensordot(_P.T, K, axes=(1, 0))
            coeffs = np.concatenate([y[None], dt * Q], axis=0)
            if recorder is not None:
                recorder.add(t, t_new, coeffs)
            if on_step is not None:
                on_step(t, t_new, coeffs)
            t, y, f = t_new, y_new, K[6]
            h_next = h * (_MAX_FACTOR if err == 0 else min(_MAX_FACTOR, _SAFETY * err ** -0.2))
            h = max(h_next, h_proposed) if last else h_next
            steps += 1
            if steps > max_steps:
                raise StepUnderflowError("maximum number of steps exceeded")
    return y


def rk4(fun, t0, y0, t1, step, *, stops=(), on_step=None, recorder=None):
    """Classical fixed-step RK4; the step is shortened to land on ``stops`` and ``t1``."""
    direction = 1.0 if t1 >= t0 else -1.0
    y = np.array(y0, dtype=float)
    t = float(t0)
    if t1 == t0:
        return y
    f = np.asarray(fun(t, y), dtype=float)
    _check_finite(f, t)
    for target in _marks(stops, t0, t1, direction):
        n = max(1, math.ceil(abs(target - t) / step - 1e-9))
        dt = (target - t) / n
        for i in range(n):
            k2 = np.asarray(fun(t + dt / 2, y + dt / 2 * f), dtype=float)
            k3 = np.asarray(fun(t + dt / 2, y + dt / 2 * k2), dtype=float)
            k4 = np.asarray(fun(t + dt, y + dt * k3), dtype=float)
            y_new = y + dt / 6 * (f + 2 * k2 + 2 * k3 + k4)
            t_new = target if i == n - 1 else t + dt
            _check_finite(y_new, t_new)
            f_new = np.asarray(fun(t_new, y_new), dtype=float)
            _check_finite(f_new, t_new)
            coeffs = hermite_coeffs(y, y_new, f, f_new, dt)
            if recorder is not None:
                recorder.add(t, t_new, coeffs)
            if on_step is not None:
                on_step(t, t_new, coeffs)
            t, y, f = t_new, y_new, f_new
    return y


def integrate(fun, t0, y0, t1, *, method="dopri5", rtol=1e-9, atol=1e-9, step=None,
              stops=(), on_step=None, recorder=None, max_step=np.inf):
    """Dispatch to :func:`dopri5` or :func:`rk4`."""
    if method == "dopri5":
        return dopri5(fun, t0, y0, t1, rtol, atol, stops=stops, on_step=on_step,
                      recorder=recorder, max_step=max_step)
    if method == "rk4":
        if step is None:
            raise ValueError("rk4 needs a step size")
        return rk4(fun, t0, y0, t1, step, stops=stops, on_step=on_step, recorder=recorder)
    raise ValueError(f"unknown method {method!r}")
