import math

import numpy as np
import pytest

from infhorizon.errors import DomainError, ModelError, NoBracketError
from infhorizon.expr import evaluate, parse_expr
from infhorizon.models import (OSCILLATOR_S, PLANAR_S, RamseyModel, SDrivenModel, expr_system,
                               oscillator_model, planar_model, planar_optimal_process,
                               ramsey_eta, ramsey_jacobian, ramsey_reduced_field,
                               ramsey_saddle_path, ramsey_stationary, saddle_eigen,
                               sdriven_optimal_process, sdriven_system)
from infhorizon.ode_core import ControlSignal, eval_cost, integrate_process
from infhorizon.transversality import maxh_residual
from infhorizon.variational import transition_matrix

TOL = (1e-11, 1e-11)


def ramsey(f="sqrt(x)", f0="-ln(v)", rho=0.25, x_star=1.0, **kw):
    return RamseyModel(f, f0, rho, x_star, **kw)


def test_planar_system_matches_display():
    """f0 equals (e^{-t}u1 + y2) sin t - (e^{-t}u2 - y1) cos t + |u|^2/4 written out by hand."""
    sys = sdriven_system(planar_model())
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = rng.uniform(0, 5)
        y, u = rng.normal(size=2), rng.normal(size=2)
        want = ((math.exp(-t) * u[0] + y[1]) * math.sin(t) - (math.exp(-t) * u[1] - y[0]) * math.cos(t)
                + (u @ u) / 4)
        assert sys.cost_rate(t, y, u) == pytest.approx(want, rel=1e-13, abs=1e-13)
        assert np.allclose(sys.dyn(t, y, u), math.exp(-t) * u)
    assert sys.meta["fx_zero"]


def test_zero_S_gives_quadratic_cost():
    sys = sdriven_system(SDrivenModel(2, "0", [0.0, 0.0]))
    assert sys.cost_rate(1.0, np.zeros(2), np.array([2.0, 2.0])) == pytest.approx(2.0)


def test_planar_process_at_zero_C():
    proc, arc = planar_optimal_process([0.0, 0.0], span=6.0)
    ts = np.linspace(0, 6, 25)
    assert np.all(proc.states == 0.0)
    assert np.allclose(arc.at(ts), np.column_stack([np.sin(ts), -np.cos(ts)]), atol=1e-12)


def test_planar_process_unit_C():
    proc, _ = planar_optimal_process([1.0, 0.0], span=20.0)
    assert np.allclose(proc.states[-1], [1 - math.exp(-40), 0.0])
    model = planar_model()
    th = 3.0
    lhs = eval_cost(proc, th) - float(model.S_val(th, proc.state(th))) + float(model.S_val(0, model.x_star))
    assert lhs == pytest.approx((1 - math.exp(-2 * th)) / 2, abs=1e-12)


def test_planar_reintegration():
    proc, _ = planar_optimal_process([0.4, -0.2], x_star=(1.0, 2.0), span=5.0)
    num = integrate_process(proc.system, proc.x0, 0.0, proc.control, 5.0, TOL)
    assert np.max(np.abs(num.state(proc.grid.nodes) - proc.states)) < 1e-9


@pytest.mark.parametrize("x0", [(0.0, 0.0), (1.5, -2.0), (-3.0, 0.7)])
def test_sdriven_cost_independent_of_start(x0):
    """J - S(t, y(t)) + S(0, x) does not depend on x for a fixed control."""
    model = planar_model()
    sys = sdriven_system(model)
    u = ControlSignal.analytic(2, lambda t: np.array([math.cos(t), 0.5]))
    p = integrate_process(sys, x0, 0.0, u, 4.0, TOL)
    ref = integrate_process(sys, [0.0, 0.0], 0.0, u, 4.0, TOL)
    val = lambda q, x: eval_cost(q, 4.0) - float(model.S_val(4.0, q.state(4.0))) + float(model.S_val(0.0, x))  # noqa: E731
    assert abs(val(p, np.array(x0)) - val(ref, np.zeros(2))) < 1e-6


def test_linear_S_keeps_A_identity():
    proc, _ = planar_optimal_process([0.3, 0.3], span=5.0)
    sens = transition_matrix(proc.system, proc, 5.0)
    assert np.all(sens.A == np.eye(2))


def test_oscillator_sx_is_one():
    m = oscillator_model()
    assert np.allclose(m.S_x(np.linspace(0, 10, 11), np.zeros((1, 11))), 1.0)
    assert str(m.S) == str(parse_expr(OSCILLATOR_S))
    assert str(planar_model().S) == str(parse_expr(PLANAR_S))


def test_sdriven_rejects_bad_shapes():
    with pytest.raises(ModelError):
        SDrivenModel(2, PLANAR_S, [0.0])
    with pytest.raises(ModelError):
        sdriven_optimal_process(planar_model(), [1.0], 3.0)


def test_expr_system_dimension_check():
    with pytest.raises(ModelError):
        expr_system(["x1", "-x1"], "0", 1, 1)


@pytest.mark.parametrize("f,rho,x0", [("sqrt(x)", 0.25, 4.0), ("ln(1 + x)", 0.5, 1.0)])
def test_stationary(f, rho, x0):
    x, u = ramsey_stationary(ramsey(f=f, rho=rho))
    assert x == pytest.approx(x0, abs=1e-10)
    assert u == pytest.approx(float(evaluate(parse_expr(f), {"x": x0})), abs=1e-10)


def test_linear_f():
    with pytest.raises(ModelError):
        ramsey(f="x", strict=True)
    with pytest.raises(NoBracketError):
        ramsey_stationary(ramsey(f="x"))


def test_eta():
    m = ramsey()
    ps = np.array([0.1, 0.5, 1.0, 3.0, 10.0])
    etas = np.array([ramsey_eta(m, p) for p in ps])
    assert np.allclose(etas, 1 / ps, rtol=1e-12)
    assert np.all(np.diff(etas) < 0)


def test_eta_domain_guard():
    with pytest.raises(ModelError):
        ramsey(f0="v^2/2 - 2*v")
    m = ramsey(f0="v^2/2 - 2*v", check=False)
    with pytest.raises(ModelError):
        ramsey_eta(m, 1.0)


def test_reduced_field():
    m = ramsey()
    dy, du = ramsey_reduced_field(m, 4.0, 2.0)
    assert abs(dy) < 1e-15 and abs(du) < 1e-15
    y, u = 2.0, 1.1
    dy, du = ramsey_reduced_field(m, y, u)
    assert du == pytest.approx((1 / (2 * math.sqrt(y)) - 0.25) * u, rel=1e-13)
    dy, du = ramsey_reduced_field(m, 9.0, 3.0)
    assert dy == 0.0 and du != 0.0
    with pytest.raises(DomainError):
        ramsey_reduced_field(m, -1.0, 1.0)


def test_saddle():
    m = ramsey()
    J = ramsey_jacobian(m, 4.0, 2.0)
    lu, ls, v = saddle_eigen(J)
    assert lu > 0 > ls
    assert lu * ls == pytest.approx(np.linalg.det(J))
    assert float(m.fsecond(4.0)) * 2.0 * float(m.f0prime(2.0) / m.f0second(2.0)) > 0
    assert np.allclose(J @ v, ls * v, atol=1e-12)


def test_saddle_path_from_stationary_start():
    m = ramsey(x_star=4.0)
    proc, arc = ramsey_saddle_path(m, 20.0)
    assert np.allclose(proc.states, 4.0, atol=1e-10)
    assert np.allclose(proc.control.sample([0.0, 10.0, 20.0]), 2.0, atol=1e-10)


def test_saddle_path_converges_and_maximises():
    proc, arc = ramsey_saddle_path(ramsey(), 120.0)
    d = math.hypot(proc.state(100.0)[0] - 4, proc.control(100.0)[0] - 2)
    assert d < 1e-3
    res = maxh_residual(proc.system, proc, arc, np.linspace(0, 30, 31), np.linspace(0.05, 6, 400))
    assert res.residual < 1e-5


def test_ramsey_validation():
    with pytest.raises(ModelError):
        ramsey(f="x^2")
    with pytest.raises(ModelError):
        ramsey(f="sqrt(x) + 1")
    with pytest.raises(ModelError):
        ramsey(x_star=-1.0)
