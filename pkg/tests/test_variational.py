import math

import numpy as np
import pytest
from scipy.linalg import expm

from infhorizon.errors import GridMismatchError
from infhorizon.models import (expr_system, oscillator_optimal_process, planar_model,
                               planar_optimal_process, sdriven_system)
from infhorizon.ode_core import ControlSignal, ControlSystem, eval_cost, integrate_process
from infhorizon.variational import (CostateArc, batch_sensitivity, cauchy_residual, cost_gradient,
                                    costate_from_terminal, integrate_adjoint, transition_matrix)

TOL = (1e-11, 1e-11)


@pytest.fixture(scope="module")
def planar():
    C = np.array([0.5, 0.3])
    return planar_optimal_process(C, span=10.0)


@pytest.fixture(scope="module")
def pendulum():
    sys = expr_system(["x2", "-sin(x1) - 0.2*x2 + u1"], "x1^2 + 0.5*x2^2 + u1^2", 2, 1)
    u = ControlSignal.analytic(1, lambda t: np.array([0.2 * math.cos(t)]))
    return sys, u, integrate_process(sys, [0.8, -0.1], 0.0, u, 6.0, TOL)


def test_identity_for_state_free_dynamics(planar):
    proc, _ = planar
    sens = transition_matrix(proc.system, proc, 10.0, TOL)
    assert np.allclose(sens.A, np.eye(2), atol=0)
    assert not sens.singular


def test_linear_autonomous_matches_expm():
    M = np.array([[0.1, 1.0], [-1.0, -0.3]])
    sys = ControlSystem(2, 1, lambda t, x, u: M @ x, lambda t, x, u: 0.0, fx=lambda t, x, u: M)
    proc = integrate_process(sys, [1.0, 0.0], 0.0, ControlSignal.constant([0.0]), 3.0, TOL)
    sens = transition_matrix(sys, proc, 3.0, TOL)
    for t in (0.5, 1.7, 3.0):
        assert np.allclose(sens.A_at(t), expm(M * t), atol=1e-9)


def test_columns_match_finite_differences(pendulum):
    sys, u, proc = pendulum
    A = transition_matrix(sys, proc, 6.0, TOL).A_at(6.0)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        yp = integrate_process(sys, proc.x0 + e, 0.0, u, 6.0, TOL).states[-1]
        ym = integrate_process(sys, proc.x0 - e, 0.0, u, 6.0, TOL).states[-1]
        fd = (yp - ym) / (2 * h)
        assert np.linalg.norm(A[:, j] - fd) <= 1e-4 * max(1.0, np.linalg.norm(fd))


def test_cost_gradient_vs_finite_differences(pendulum):
    sys, u, proc = pendulum
    g = cost_gradient(sys, proc, 5.0, TOL)
    h = 1e-5
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        jp = eval_cost(integrate_process(sys, proc.x0 + e, 0.0, u, 5.0, TOL), 5.0)
        jm = eval_cost(integrate_process(sys, proc.x0 - e, 0.0, u, 5.0, TOL), 5.0)
        fd = (jp - jm) / (2 * h)
        assert abs(g[j] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_gradient_zero_when_cost_ignores_state():
    sys = expr_system(["x1 + u1"], "u1^2", 1, 1)
    proc = integrate_process(sys, [1.0], 0.0, ControlSignal.constant([0.5]), 2.0, TOL)
    assert np.all(cost_gradient(sys, proc, 2.0) == 0.0)


def test_sdriven_gradient(planar):
    proc, _ = planar
    model = planar_model()
    for th in (1.0, 4.0, 9.5):
        g = cost_gradient(proc.system, proc, th, TOL)
        want = model.S_x(th, proc.state(th)) - model.S_x(0.0, model.x_star)
        assert np.allclose(g, want, atol=1e-8)


def test_adjoint_constant_without_coupling():
    sys = expr_system(["u1", "u1"], "u1^2", 2, 1)
    proc = integrate_process(sys, [0.0, 0.0], 0.0, ControlSignal.constant([1.0]), 3.0)
    arc = integrate_adjoint(sys, proc, [0.4, -1.2], 0)
    assert np.allclose(arc.psi, [0.4, -1.2], atol=0)


def test_planar_adjoint_closure(planar):
    proc, arc = planar
    num = integrate_adjoint(proc.system, proc, arc.psi[0], 1, 10.0, TOL)
    ts = np.linspace(0, 10, 201)
    assert np.max(np.abs(num.at(ts) - arc.at(ts))) < 1e-8
    back = costate_from_terminal(proc.system, proc, arc.at(10.0), 10.0, 1, TOL)
    assert np.allclose(back.at(0.0), arc.psi[0], atol=1e-8)


def test_round_trip(pendulum):
    sys, _, proc = pendulum
    psi0 = np.array([0.3, -0.7])
    fwd = integrate_adjoint(sys, proc, psi0, 1, 4.0, TOL)
    back = costate_from_terminal(sys, proc, fwd.at(4.0), 4.0, 1, TOL)
    assert np.allclose(back.at(0.0), psi0, atol=1e-9)


def test_zero_terminal_identity(pendulum):
    sys, _, proc = pendulum
    for th in (1.0, 3.0, 6.0):
        arc = costate_from_terminal(sys, proc, np.zeros(2), th, 1, TOL)
        assert np.allclose(arc.at(0.0), -cost_gradient(sys, proc, th, TOL), atol=1e-8)


def test_terminal_constant_without_coupling():
    sys = expr_system(["u1"], "u1^2", 1, 1)
    proc = integrate_process(sys, [0.0], 0.0, ControlSignal.constant([1.0]), 3.0)
    arc = costate_from_terminal(sys, proc, [2.5], 3.0, 1)
    assert np.allclose(arc.psi, 2.5, atol=0)


def test_cocycle(pendulum):
    sys, u, proc = pendulum
    sens = transition_matrix(sys, proc, 6.0, TOL)
    t1 = 2.0
    tail = integrate_process(sys, proc.state(t1), t1, u, 6.0, TOL)
    A12 = transition_matrix(sys, tail, 6.0, TOL).A_at(6.0)
    assert np.allclose(sens.A_at(6.0), A12 @ sens.A_at(t1), atol=1e-7)


def test_cauchy_residual(pendulum, planar):
    sys, _, proc = pendulum
    sens = transition_matrix(sys, proc, 6.0, TOL)
    arc = integrate_adjoint(sys, proc, [0.2, 0.1], 1, 6.0, TOL)
    assert cauchy_residual(arc, sens, 1.0, 6.0) < 100 * 1e-9
    pproc, parc = planar
    psens = transition_matrix(pproc.system, pproc, 10.0, TOL)
    assert cauchy_residual(parc, psens, 0.5, 9.0) < 1e-8
    ts = pproc.grid.nodes
    bumped = CostateArc.from_function(
        lambda t: parc.at(t) + (0.1 * np.eye(2)[0] if t >= 9.0 else 0.0), ts[ts <= 9.0], 1.0)
    assert cauchy_residual(bumped, psens, 0.5, 9.0) >= 0.09


def test_cauchy_zero_arc():
    sys = expr_system(["x1 + u1"], "u1^2", 1, 1)
    proc = integrate_process(sys, [1.0], 0.0, ControlSignal.constant([0.0]), 2.0)
    sens = transition_matrix(sys, proc, 2.0)
    zero = CostateArc.from_function(lambda t: np.zeros(1), np.linspace(0, 2, 5), 1.0)
    assert cauchy_residual(zero, sens, 0.0, 2.0) == 0.0


def test_out_of_range(planar):
    proc, _ = planar
    sens = transition_matrix(proc.system, proc, 5.0)
    with pytest.raises(GridMismatchError):
        sens.A_at(7.0)


def test_batch_matches_single(pendulum):
    sys, u, proc = pendulum
    X0 = np.array([[0.8, 0.1, -0.5], [-0.1, 0.4, 0.0]])
    th = np.array([2.0, 4.0, 5.5])
    res = batch_sensitivity(sys, u, X0, 0.0, th, TOL)
    for b in range(3):
        p = integrate_process(sys, X0[:, b], 0.0, u, th[b], TOL)
        assert np.allclose(res.states[b], p.states[-1], atol=1e-8)
        assert abs(res.costs[b] - p.cost_path[-1]) < 1e-8
        assert np.allclose(res.grads[b], cost_gradient(sys, p, th[b], TOL), atol=1e-7)


def test_batch_groups(pendulum):
    sys, u, _ = pendulum
    v = ControlSignal.constant([0.0])
    X0 = np.array([[0.5, 0.5], [0.0, 0.0]])
    res = batch_sensitivity(sys, [u, v], X0, 0.0, 3.0, TOL, groups=[0, 1])
    for b, ctrl in enumerate((u, v)):
        p = integrate_process(sys, X0[:, b], 0.0, ctrl, 3.0, TOL)
        assert np.allclose(res.states[b], p.states[-1], atol=1e-8)


def test_oscillator_transition_identity():
    proc, arc = oscillator_optimal_process(20.0)
    sens = transition_matrix(proc.system, proc, 20.0)
    assert np.all(sens.A == 1.0)
    assert np.allclose(arc.psi, 1.0, atol=1e-12)
