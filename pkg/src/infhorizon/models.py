"""Built-in model families and their closed-form reference solutions.

* S-driven family: ``y' = e^{-t} u`` with running cost
  ``|u|^2/4 + S_x(t, y) e^{-t} u + S_t(t, y)`` for a smooth potential ``S``.
  The planar and oscillator models are members with fixed ``S``.
* Ramsey family: ``y' = f(y) - u`` with discounted cost ``e^{-rho t} f0(u)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from . import _integrators as _int
from .errors import (DomainError, ModelError, NegativeStationaryControlError, NoBracketError,
                     NoCrossingError, NonFiniteError, NotASaddleError, StepUnderflowError)
from .expr import (BinOp, Call, Expr, Neg, Num, Var, add, compile_many, diff, div, eval_dual,
                   mul, parse_expr, sub, substitute)
from .ode_core import ControlSignal, ControlSystem, Process, TimeGrid
from .sets import ControlSet, HalfLine, Point, WholeSpace
from .variational import CostateArc

PLANAR_S = "x1*sin(t) - x2*cos(t)"
OSCILLATOR_S = "exp(-t)*sin(exp(t)*x1) - exp(-x1^2)"


def _expr(e, variables=None):
    return e if isinstance(e, Expr) else parse_expr(str(e), variables)


def _names(prefix, n):
    return [f"{prefix}{i + 1}" for i in range(n)]


class VectorFn:
    """Vectorised evaluation of an array of expressions in ``(t, x, u)``.

    Inputs may carry a trailing batch axis; constant entries are broadcast.
    """

    def __init__(self, exprs, shape, xnames, unames):
        self.exprs = list(exprs)
        self.shape = tuple(shape)
        self.is_zero = all(isinstance(e, Num) and e.value == 0 for e in self.exprs)
        self._fn = compile_many(self.exprs, ["t", *xnames, *unames])
        self.source = self._fn.source

    def __call__(self, t, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        batch = np.broadcast_shapes(x.shape[1:], u.shape[1:], np.shape(t))
        vals = self._fn(t, *x, *u)
        out = np.empty((len(vals),) + batch)
        for i, v in enumerate(vals):
            out[i] = v
        return out.reshape(self.shape + batch)


def expr_system(f, f0, m, k, *, l=None, control_set=None, c0=None, c_as=None, name="custom",
                meta=None):
    """Assemble a vectorised :class:`ControlSystem` from expressions.

    ``f`` is a list of ``m`` expressions and ``f0`` a single expression in
    ``t, x1..xm, u1..uk``; Jacobians are obtained by symbolic differentiation.
    """
    xn, un = _names("x", m), _names("u", k)
    allowed = {"t", *xn, *un}
    f = [_expr(e, allowed) for e in f]
    if len(f) != m:
        raise ModelError(f"expected {m} dynamics expressions, got {len(f)}")
    f0 = _expr(f0, allowed)
    fx = [diff(fi, xj) for fi in f for xj in xn]
    f0x = [diff(f0, xj) for xj in xn]
    F = VectorFn(f, (m,), xn, un)
    F0 = VectorFn([f0], (), xn, un)
    FX = VectorFn(fx, (m, m), xn, un)
    F0X = VectorFn(f0x, (m,), xn, un)
    lfun = gradl = None
    if l is not None:
        le = _expr(l, set(xn))
        lf = compile_many([le], xn)
        lg = compile_many([diff(le, xj) for xj in xn], xn)
        lfun = lambda x: float(lf(*np.asarray(x, dtype=float))[0])  # noqa: E731
        gradl = lambda x: np.array(lg(*np.asarray(x, dtype=float)), dtype=float)  # noqa: E731
    info = {"exprs": {"f": [str(e) for e in f], "f0": str(f0)},
            "fx_zero": FX.is_zero, "f0x_zero": F0X.is_zero}
    info.update(meta or {})
    return ControlSystem(m=m, k=k, f=F, f0=F0, fx=FX, f0x=F0X, l=lfun, grad_l=gradl,
                         control_set=control_set or ControlSet(k), c0=c0 or WholeSpace(m),
                         c_as=c_as or WholeSpace(m), vectorized=True, name=name, meta=info)


# ---------------------------------------------------------------- S-driven family

@dataclass(frozen=True, eq=False)
class SDrivenModel:
    m: int
    S: Expr
    x_star: np.ndarray
    name: str = "sdriven"

    def __post_init__(self):
        xn = _names("x", self.m)
        object.__setattr__(self, "S", _expr(self.S, {"t", *xn}))
        xs = np.atleast_1d(np.asarray(self.x_star, dtype=float))
        if xs.shape != (self.m,):
            raise ModelError(f"x_star must have length {self.m}")
        object.__setattr__(self, "x_star", xs)

    @property
    def xnames(self):
        return _names("x", self.m)

    @cached_property
    def S_x_exprs(self):
        return [diff(self.S, x) for x in self.xnames]

    @cached_property
    def S_t_expr(self):
        return diff(self.S, "t")

    @cached_property
    def _fns(self):
        xn = self.xnames
        sx = self.S_x_exprs
        return {
            "S": VectorFn([self.S], (), xn, []),
            "Sx": VectorFn(sx, (self.m,), xn, []),
            "St": VectorFn([self.S_t_expr], (), xn, []),
            "Stx": VectorFn([diff(e, "t") for e in sx], (self.m,), xn, []),
            "Sxx": VectorFn([diff(e, x) for e in sx for x in xn], (self.m, self.m), xn, []),
        }

    def S_val(self, t, x):
        return self._fns["S"](t, x, ())

    def S_x(self, t, x):
        return self._fns["Sx"](t, x, ())

    def S_t(self, t, x):
        return self._fns["St"](t, x, ())

    def S_tx(self, t, x):
        return self._fns["Stx"](t, x, ())

    def S_xx(self, t, x):
        return self._fns["Sxx"](t, x, ())

    def to_dict(self):
        return {"family": "sdriven", "m": self.m, "S": str(self.S),
                "x_star": self.x_star.tolist(), "name": self.name}


def sdriven_system(model):
    """The control system induced by ``S``: ``f = e^{-t}u`` and the S-shaped cost."""
    m = model.m
    decay = Call("exp", Neg(Var("t")))
    us = [Var(u) for u in _names("u", m)]
    f = [mul(decay, u) for u in us]
    quad = mul(us[0], us[0])
    for u in us[1:]:
        quad = add(quad, mul(u, u))
    f0 = mul(Num(0.25), quad)
    for sx, u in zip(model.S_x_exprs, us):
        f0 = add(f0, mul(mul(sx, decay), u))
    f0 = add(f0, model.S_t_expr)
    return expr_system(f, f0, m, m, control_set=ControlSet(m), c0=Point(model.x_star),
                       c_as=WholeSpace(m), name=model.name,
                       meta={"family": "sdriven", "S": str(model.S)})


def planar_model(x_star=(0.0, 0.0)):
    return SDrivenModel(2, PLANAR_S, x_star, name="planar")


def oscillator_model(x_star=(0.0,)):
    return SDrivenModel(1, OSCILLATOR_S, x_star, name="oscillator")


def sdriven_optimal_process(model, C, span, nodes_per_unit=50):
    """Analytic process ``u = 2e^{-t}C`` from ``x_star`` and its co-state arc.

    Returns ``(Process, CostateArc)`` tabulated on a uniform grid over
    ``[0, span]``; nothing is integrated.
    """
    C = np.atleast_1d(np.asarray(C, dtype=float))
    if C.shape != (model.m,):
        raise ModelError(f"C must have length {model.m}")
    T = float(span[-1]) if np.ndim(span) else float(span)
    if not T > 0:
        raise ValueError("span must be positive")
    n = max(2, int(math.ceil(T * nodes_per_unit)) + 1)
    t = np.linspace(0.0, T, n)
    xs = model.x_star
    decay2 = 1.0 - np.exp(-2 * t)
    Y = xs[:, None] + np.outer(C, decay2)
    U = np.outer(C, 2 * np.exp(-t))
    dY = np.outer(C, 2 * np.exp(-2 * t))
    system = sdriven_system(model)
    W = model.S_val(t, Y) - model.S_val(0.0, xs) + decay2 * (C @ C) / 2
    dW = system.f0(t, Y, U)
    path = _int.DensePath.from_hermite(t, np.vstack([Y, W]).T, np.vstack([dY, dW]).T)
    control = ControlSignal.analytic(model.m, lambda s, _C=C: np.multiply.outer(_C, 2 * np.exp(-np.asarray(s))))
    process = Process(grid=TimeGrid(t), states=Y.T.copy(), cost_path=W, control=control,
                      derivs=np.vstack([dY, dW]).T, path=path, system=system,
                      info={"C": C.tolist(), "model": model.name})
    psi = (model.S_x(t, Y) + C[:, None]).T
    dpsi = (model.S_tx(t, Y) + np.einsum("ijn,jn->in", model.S_xx(t, Y), dY)).T
    arc = CostateArc(TimeGrid(t), psi, 1.0, _int.DensePath.from_hermite(t, psi, dpsi))
    return process, arc


def planar_optimal_process(C, x_star=(0.0, 0.0), span=12.0, nodes_per_unit=50):
    return sdriven_optimal_process(planar_model(x_star), C, span, nodes_per_unit)


def oscillator_optimal_process(span, x_star=(0.0,), nodes_per_unit=50):
    """The process ``u = 0`` with its arc ``psi(t) = S_x(t, x*)``."""
    return sdriven_optimal_process(oscillator_model(x_star), [0.0], span, nodes_per_unit)


# ---------------------------------------------------------------- Ramsey family

_PROBE_X = np.geomspace(1e-3, 1e3, 241)
_PROBE_V = np.geomspace(1e-3, 1e3, 241)
DOMAIN_FLOOR = 1e-9


def _fn1(e, name):
    g = compile_many([e], [name])
    return lambda z: g(z)[0]


@dataclass(frozen=True, eq=False)
class RamseyModel:
    """Growth model ``y' = f(y) - u`` with cost ``int e^{-rho t} f0(u)``.

    ``f`` is an expression in ``x`` and ``f0`` one in ``v``.
    """

    f: Expr
    f0: Expr
    rho: float
    x_star: float
    strict: bool = False
    check: bool = True

    def __post_init__(self):
        object.__setattr__(self, "f", _expr(self.f, {"x"}))
        object.__setattr__(self, "f0", _expr(self.f0, {"v"}))
        object.__setattr__(self, "rho", float(self.rho))
        object.__setattr__(self, "x_star", float(self.x_star))
        if self.x_star < 0:
            raise ModelError("x_star must be nonnegative")
        if self.check:
            self.validate(self.strict)

    @cached_property
    def df(self):
        return diff(self.f, "x")

    @cached_property
    def df0(self):
        return diff(self.f0, "v")

    @cached_property
    def ddf0(self):
        return diff(self.df0, "v")

    @cached_property
    def _fns(self):
        return {"f": _fn1(self.f, "x"), "fp": _fn1(self.df, "x"),
                "fpp": _fn1(diff(self.df, "x"), "x"), "g": _fn1(self.f0, "v"),
                "gp": _fn1(self.df0, "v"), "gpp": _fn1(self.ddf0, "v")}

    def fval(self, x):
        return self._fns["f"](x)

    def fprime(self, x):
        return self._fns["fp"](x)

    def fsecond(self, x):
        return self._fns["fpp"](x)

    def f0val(self, v):
        return self._fns["g"](v)

    def f0prime(self, v):
        return self._fns["gp"](v)

    def f0second(self, v):
        return self._fns["gpp"](v)

    def _check_cost(self):
        d1 = np.broadcast_to(self.f0prime(_PROBE_V), _PROBE_V.shape)
        d2 = np.broadcast_to(self.f0second(_PROBE_V), _PROBE_V.shape)
        if np.any(d1 >= 0):
            raise ModelError("f0 must be strictly decreasing for v > 0 (f0' < 0)")
        if np.any(d2 <= 0):
            raise ModelError("f0 must be strictly convex for v > 0 (f0'' > 0)")

    def validate(self, strict=False):
        """Check the growth-model sign conditions on probe grids."""
        try:
            fpp = np.broadcast_to(self.fsecond(_PROBE_X), _PROBE_X.shape)
            if np.any(fpp > 0) or (strict and np.any(fpp >= 0)):
                raise ModelError("f must be concave for x > 0" + (" (strictly)" if strict else ""))
            if float(self.fval(0.0)) > 0:
                raise ModelError("f(0) must be nonpositive")
            self._check_cost()
        except DomainError as exc:
            raise ModelError(f"model not evaluable on probes: {exc}") from None

    def to_dict(self):
        return {"family": "ramsey", "f": str(self.f), "f0": str(self.f0), "rho": self.rho,
                "x_star": self.x_star}


def ramsey_system(model):
    x1, u1, t = Var("x1"), Var("u1"), Var("t")
    f = sub(substitute(model.f, {"x": x1}), u1)
    f0 = mul(Call("exp", mul(Num(-model.rho), t)), substitute(model.f0, {"v": u1}))
    return expr_system([f], f0, 1, 1, control_set=ControlSet.box(0.0, np.inf),
                       c0=Point([model.x_star]), c_as=HalfLine([model.x_star]), name="ramsey",
                       meta={"family": "ramsey", "rho": model.rho})


def _safeguarded_newton(g, dg, a, b, xtol=1e-15, maxiter=200):
    """Root of ``g`` on a sign-changing bracket ``[a, b]``; bisects when Newton leaves it."""
    ga, gb = g(a), g(b)
    if ga == 0:
        return a
    if gb == 0:
        return b
    if np.sign(ga) == np.sign(gb):
        raise NoBracketError("bracket does not change sign")
    x = 0.5 * (a + b)
    for _ in range(maxiter):
        gx = g(x)
        if gx == 0:
            return x
        if np.sign(gx) == np.sign(ga):
            a, ga = x, gx
        else:
            b = x
        d = dg(x)
        step_ok = d != 0 and np.isfinite(d)
        x_new = x - gx / d if step_ok else None
        if x_new is None or not (min(a, b) < x_new < max(a, b)):
            x_new = 0.5 * (a + b)
        if abs(x_new - x) <= xtol * max(1.0, abs(x)):
            return x_new
        x = x_new
    return x


def _expand_bracket(g, start, right_if_positive):
    """Find ``[a, b]`` with a sign change of ``g`` by doubling/halving from ``start``.

    ``right_if_positive`` says whether ``g(start) > 0`` puts the root to the
    right of ``start``.
    """
    gs = g(start)
    if gs == 0:
        return start, start
    go_right = (gs > 0) == right_if_positive
    a = start
    for _ in range(60):
        b = a * 2.0 if go_right else a / 2.0
        try:
            gb = g(b)
        except DomainError:
            break
        if np.sign(gb) != np.sign(gs):
            return (a, b) if go_right else (b, a)
        a = b
    raise NoBracketError("no sign change found within 60 doublings")


def ramsey_stationary(model):
    """Stationary point ``(x0, u0)`` of the reduced system: ``f'(x0) = rho``, ``u0 = f(x0)``."""
    g = lambda x: float(model.fprime(x)) - model.rho  # noqa: E731
    dg = lambda x: float(model.fsecond(x))  # noqa: E731
    start = model.x_star if model.x_star > 0 else 1.0
    a, b = _expand_bracket(g, start, right_if_positive=True)
    x0 = a if a == b else _safeguarded_newton(g, dg, a, b)
    u0 = float(model.fval(x0))
    if u0 < 0:
        raise NegativeStationaryControlError(f"f(x0) = {u0:.17g} is negative")
    return float(x0), u0


def ramsey_eta(model, p):
    """The maximiser ``eta(p)`` of ``-p v - f0(v)``, i.e. the root of ``f0'(v) + p``."""
    if not p > 0:
        raise ValueError("p must be positive")
    model._check_cost()
    g = lambda v: float(model.f0prime(v)) + p  # noqa: E731
    dg = lambda v: float(model.f0second(v))  # noqa: E731
    a, b = _expand_bracket(g, 1.0, right_if_positive=False)
    return float(a if a == b else _safeguarded_newton(g, dg, a, b))


def _guard(y, u):
    if np.any(np.asarray(y) < DOMAIN_FLOOR) or np.any(np.asarray(u) < DOMAIN_FLOOR):
        raise DomainError("Ramsey state or control fell below the positivity floor")


def ramsey_reduced_field(model, y, u):
    """``(dy, du)`` of the reduced state/control system."""
    _guard(y, u)
    dy = model.fval(y) - u
    du = (model.rho - model.fprime(y)) * model.f0prime(u) / model.f0second(u)
    return dy, du


def ramsey_jacobian(model, x0, u0):
    """Jacobian of the reduced field at ``(x0, u0)`` by forward-mode duals."""
    dy = sub(model.f, Var("v"))
    du = div(mul(sub(Num(model.rho), model.df), model.df0), model.ddf0)
    b = {"x": x0, "v": u0}
    return np.array([eval_dual(dy, b, ["x", "v"]).partials, eval_dual(du, b, ["x", "v"]).partials])


def saddle_eigen(J):
    """Closed-form eigen-pair of a 2x2 saddle: ``(lam_unstable, lam_stable, v_stable)``."""
    tr = J[0, 0] + J[1, 1]
    det = J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0]
    disc = tr * tr - 4 * det
    if det >= 0 or disc < 0:
        raise NotASaddleError(f"eigenvalues are not real with opposite signs (det={det:.6g})")
    r = math.sqrt(disc)
    lam_u, lam_s = (tr + r) / 2, (tr - r) / 2
    cands = [np.array([J[0, 1], lam_s - J[0, 0]]), np.array([lam_s - J[1, 1], J[1, 0]])]
    v = max(cands, key=np.linalg.norm)
    return lam_u, lam_s, v / np.linalg.norm(v)


class _Crossed(Exception):
    pass


def _shoot(model, seed, target, max_time, rtol):
    """Integrate the reduced field backward from ``seed`` until ``y`` reaches ``target``."""
    side = np.sign(seed[0] - target)
    rec = _int.Recorder()

    def rhs(s, z):
        return np.array(ramsey_reduced_field(model, z[0], z[1]), dtype=float)

    def stop(ta, tb, coeffs):
        if np.sign(coeffs.sum(axis=0)[0] - target) != side:
            raise _Crossed

    try:
        _int.dopri5(rhs, 0.0, seed, -max_time, rtol, rtol, on_step=stop, recorder=rec)
    except _Crossed:
        path = rec.path()
        lo = path.t[0]
        s_star = brentq(lambda s: path(s)[0] - target, lo, path.t[1], xtol=1e-15, rtol=1e-15)
        return path, s_star
    except (DomainError, NonFiniteError, StepUnderflowError):
        return None
    return None


def ramsey_saddle_path(model, horizon, tol=1e-10, *, eps=1e-6, rtol=1e-11, dt=0.01,
                       max_time=1e4):
    """Stable-manifold process from ``x_star`` and its co-state arc (``lambda = 1``).

    The manifold is traced by backward shooting from the stationary point.
    Beyond the shooting travel time the linearised stable solution is used.
    """
    x0, u0 = ramsey_stationary(model)
    J = ramsey_jacobian(model, x0, u0)
    lam_u, lam_s, v = saddle_eigen(J)
    T = float(horizon)
    if not T > 0:
        raise ValueError("horizon must be positive")
    z_eq = np.array([x0, u0])
    target = model.x_star
    if abs(target - x0) <= tol * max(1.0, x0):
        travel, sign, path, s_star = 0.0, 1.0, None, 0.0
    else:
        best = None
        for sign in (1.0, -1.0):
            seed = z_eq + sign * eps * v
            if abs(seed[0] - target) >= abs(x0 - target):
                continue  # seed moved away from the target; backward flow would too
            shot = _shoot(model, seed, target, max_time, rtol)
            if shot is not None:
                best = (sign, *shot)
                break
        if best is None:
            raise NoCrossingError(f"backward flow never reached x* = {target:.17g}")
        sign, path, s_star = best
        travel = -s_star
        if abs(path(s_star)[0] - target) > max(tol, 1e-12):
            raise NoCrossingError("could not land on x* within tolerance")

    n = max(2, int(math.ceil(T / dt)) + 1)
    t = np.linspace(0.0, T, n)
    Z = np.empty((n, 2))
    on_path = (t <= travel) if path is not None else np.zeros(n, dtype=bool)
    if np.any(on_path):
        Z[on_path] = path(np.minimum(s_star + t[on_path], 0.0))
    tail = ~on_path
    if np.any(tail):
        decay = np.exp(lam_s * (t[tail] - travel))
        Z[tail] = z_eq + sign * eps * np.outer(decay, v) if travel > 0 else z_eq
    y, u = Z[:, 0], Z[:, 1]
    dy, du = ramsey_reduced_field(model, y, u)
    dy = np.broadcast_to(dy, y.shape)
    du = np.broadcast_to(du, y.shape)

    u_path = _int.DensePath.from_hermite(t, u[:, None], du[:, None])
    control = ControlSignal.analytic(1, u_path, control_set=ControlSet.box(0.0, np.inf))
    system = ramsey_system(model)
    rate = lambda s, w: np.array([math.exp(-model.rho * s) * float(model.f0val(u_path(s)[0]))])  # noqa: E731
    rec = _int.Recorder()
    _int.dopri5(rate, 0.0, [0.0], T, 1e-12, 1e-12, recorder=rec)
    W = rec.path()(t)[:, 0]
    W[0] = 0.0
    dW = np.exp(-model.rho * t) * model.f0val(u)
    zp = _int.DensePath.from_hermite(t, np.column_stack([y, W]), np.column_stack([dy, dW]))
    info = {"x0": x0, "u0": u0, "eigenvalues": [lam_u, lam_s], "stable_vector": v.tolist(),
            "travel_time": travel, "seed_sign": sign, "eps": eps}
    process = Process(grid=TimeGrid(t), states=y[:, None].copy(), cost_path=W, control=control,
                      derivs=np.column_stack([dy, dW]), path=zp, system=system, info=info)
    disc = np.exp(-model.rho * t)
    psi = -model.f0prime(u) * disc
    dpsi = disc * (model.rho * model.f0prime(u) - model.f0second(u) * du)
    arc = CostateArc(TimeGrid(t), psi[:, None], 1.0,
                     _int.DensePath.from_hermite(t, psi[:, None], dpsi[:, None]))
    return process, arc


def ramsey_constant_process(model, c, horizon, tol=(1e-10, 1e-10)):
    """Process from ``x_star`` under the constant control ``u = c``."""
    from .ode_core import integrate_process

    sys_ = ramsey_system(model)
    return integrate_process(sys_, [model.x_star], 0.0, ControlSignal.constant([c]), horizon, tol)
