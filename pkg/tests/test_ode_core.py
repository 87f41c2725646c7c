import math

import numpy as np
import pytest

from infhorizon.errors import (DimensionMismatchError, EmptyGridError, NonFiniteError,
                               OutOfRangeError)
from infhorizon.models import expr_system, planar_model, planar_optimal_process, sdriven_system
from infhorizon.ode_core import (ControlSignal, ControlSystem, TimeGrid, eval_cost, hamiltonian,
                                 integrate_process)

TOL = (1e-11, 1e-11)


def scalar_growth():
    return ControlSystem(1, 1, lambda t, x, u: x, lambda t, x, u: 0.0)


def test_timegrid_validation():
    with pytest.raises(EmptyGridError):
        TimeGrid([0.0])
    with pytest.raises(ValueError):
        TimeGrid([0.0, 1.0, 1.0])
    with pytest.raises(NonFiniteError):
        TimeGrid([0.0, np.inf])
    assert TimeGrid.linspace(0, 2, 5).span == (0.0, 2.0)


def test_grid_control_right_continuous():
    u = ControlSignal.from_grid([0.0, 1.0, 2.0], [[1.0], [2.0]])
    assert u(0.999)[0] == 1.0 and u(1.0)[0] == 2.0 and u(2.0)[0] == 2.0
    assert u.breakpoints == (0.0, 1.0, 2.0)


def test_zero_dynamics():
    sys = expr_system(["0", "0"], "0", 2, 1)
    x0 = np.array([1.5, -2.0])
    proc = integrate_process(sys, x0, 0.0, ControlSignal.constant([0.3]), 5.0)
    assert np.all(proc.states == x0)
    assert np.all(proc.cost_path == 0.0)
    assert eval_cost(proc, 3.3) == 0.0


def test_exponential():
    proc = integrate_process(scalar_growth(), [1.0], 0.0, ControlSignal.constant([0.0]), 1.0)
    assert abs(proc.states[-1, 0] - math.e) < 1e-9


def test_planar_trajectory():
    model = planar_model()
    sys = sdriven_system(model)
    C = np.array([0.7, -0.4])
    u = ControlSignal.analytic(2, lambda t: 2 * math.exp(-t) * C)
    proc = integrate_process(sys, model.x_star, 0.0, u, 6.0, TOL)
    ts = np.linspace(0, 6, 13)
    want = np.outer(1 - np.exp(-2 * ts), C)
    assert np.max(np.abs(proc.state(ts) - want)) < 1e-9
    assert proc.cost_path[0] == 0.0


def test_cost_identity():
    model = planar_model()
    C = np.array([0.2, 0.9])
    ref, _ = planar_optimal_process(C, span=8.0)
    proc = integrate_process(ref.system, model.x_star, 0.0, ref.control, 8.0, TOL)
    for th in (0.5, 3.0, 8.0):
        lhs = eval_cost(proc, th) - float(model.S_val(th, proc.state(th))) + float(model.S_val(0.0, model.x_star))
        assert abs(lhs - (1 - math.exp(-2 * th)) * (C @ C) / 2) < 1e-8


def test_cost_vs_trapezoid_oracle():
    sys = expr_system(["-x1 + u1"], "x1^2 + sin(t)*u1", 1, 1)
    u = ControlSignal.analytic(1, lambda t: np.array([math.cos(t)]))
    proc = integrate_process(sys, [1.0], 0.0, u, 4.0, TOL)
    ts = np.linspace(0, 4, 100_001)
    y = proc.state(ts)[:, 0]
    rate = y ** 2 + np.sin(ts) * np.cos(ts)
    assert abs(np.trapezoid(rate, ts) - eval_cost(proc, 4.0)) < 1e-6


def test_semigroup_and_additivity():
    sys = expr_system(["x2", "-sin(x1) - 0.1*x2 + u1"], "x1^2 + u1^2", 2, 1)
    u = ControlSignal.analytic(1, lambda t: np.array([0.3 * math.sin(2 * t)]))
    tol = (1e-10, 1e-10)
    full = integrate_process(sys, [1.0, 0.0], 0.0, u, 6.0, tol)
    first = integrate_process(sys, [1.0, 0.0], 0.0, u, 2.5, tol)
    second = integrate_process(sys, first.states[-1], 2.5, u, 6.0, tol)
    assert np.allclose(second.states[-1], full.states[-1], atol=1e-8)
    assert abs(first.cost_path[-1] + second.cost_path[-1] - full.cost_path[-1]) < 1e-8


def test_tolerance_refinement_monotone():
    model = planar_model()
    C = np.array([1.0, 0.5])
    u = ControlSignal.analytic(2, lambda t: 2 * math.exp(-t) * C)
    errs = []
    for tol in (1e-5, 5e-6, 2.5e-6, 1.25e-6):
        p = integrate_process(sdriven_system(model), model.x_star, 0.0, u, 5.0, (tol, tol))
        errs.append(np.max(np.abs(p.states[-1] - (1 - math.exp(-10)) * C)))
    assert all(b <= a for a, b in zip(errs, errs[1:]))


def test_rk4_grid_control_breakpoints():
    sys = ControlSystem(1, 1, lambda t, x, u: u, lambda t, x, u: 0.0)
    u = ControlSignal.from_grid([0.0, 0.35, 1.0], [[1.0], [-1.0]])
    proc = integrate_process(sys, [0.0], 0.0, u, 1.0, method="rk4", step=0.1)
    assert proc.states[-1, 0] == pytest.approx(0.35 - 0.65, abs=1e-14)
    assert 0.35 in set(np.round(proc.grid.nodes, 14))


def test_nonfinite_aborts():
    sys = ControlSystem(1, 1, lambda t, x, u: np.array([np.nan if t > 0.5 else 1.0]),
                        lambda t, x, u: 0.0)
    with pytest.raises(NonFiniteError):
        integrate_process(sys, [1.0], 0.0, ControlSignal.constant([0.0]), 2.0)


def test_eval_cost_range_and_dimension():
    proc = integrate_process(scalar_growth(), [1.0], 0.0, ControlSignal.constant([0.0]), 1.0)
    with pytest.raises(OutOfRangeError):
        eval_cost(proc, 1.5)
    with pytest.raises(DimensionMismatchError):
        integrate_process(scalar_growth(), [1.0, 2.0], 0.0, ControlSignal.constant([0.0]), 1.0)


def test_hamiltonian_zero():
    sys = sdriven_system(planar_model())
    assert hamiltonian(sys, [1.0, 2.0], [0.0, 0.0], [0.5, 0.1], 0, 0.3) == 0.0


def test_hamiltonian_maximiser_planar():
    model = planar_model()
    sys = sdriven_system(model)
    C = np.array([0.4, -0.8])
    for t in (0.0, 0.7, 2.0):
        y = (1 - math.exp(-2 * t)) * C
        psi = model.S_x(t, y) + C
        g = np.linspace(-3, 3, 241)
        U = np.stack(np.meshgrid(g, g, indexing="ij"), 0).reshape(2, -1)
        H = hamiltonian(sys, y, psi, U, 1, t)
        best = U[:, int(np.argmax(H))]
        assert np.allclose(best, 2 * math.exp(-t) * C, atol=0.026)


def test_hamiltonian_double_evaluation():
    rng = np.random.default_rng(3)
    sys = expr_system(["x2*u1", "-x1 + cos(t)*u2"], "x1^2 + u1*u2 + exp(-t)", 2, 2)
    for _ in range(20):
        t = rng.uniform(0, 3)
        x, psi, u = rng.normal(size=2), rng.normal(size=2), rng.normal(size=2)
        f = np.array([x[1] * u[0], -x[0] + math.cos(t) * u[1]])
        f0 = x[0] ** 2 + u[0] * u[1] + math.exp(-t)
        assert hamiltonian(sys, x, psi, u, 1, t) == pytest.approx(psi @ f - f0, rel=1e-13, abs=1e-13)


def test_jacobians_agree_with_finite_differences():
    sys = expr_system(["x2", "-sin(x1)*u1"], "x1*x2 + u1^2", 2, 1)
    probes = [(0.3, np.array([0.5, -1.0]), np.array([0.2])), (1.0, np.array([2.0, 0.1]), np.array([-1.0]))]
    assert sys.check_jacobians(probes) <= 1.0


def test_csv_columns():
    proc = integrate_process(scalar_growth(), [1.0], 0.0, ControlSignal.constant([0.0]), 1.0)
    lines = proc.to_csv().splitlines()
    assert lines[0] == "t,y_1,w"
    assert len(lines) == len(proc.grid) + 1
