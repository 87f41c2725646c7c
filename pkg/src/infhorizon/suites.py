"""Built-in regression suites comparing the library against closed-form results."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .convex_geom import ZeroCone, normal_cone
from .errors import EmptyLevelWarning
from .models import (RamseyModel, oscillator_optimal_process, planar_model,
                     planar_optimal_process, ramsey_constant_process, ramsey_jacobian,
                     ramsey_saddle_path, ramsey_stationary, saddle_eigen)
from .ode_core import integrate_process
from .transversality import (LimitSchedule, ak_limit, akk_check, akk_samples, anton_residual,
                             maxh_residual, overtaking_compare, wakk_check, wakk_samples_batch)
from .variational import CostateArc, cost_gradient, costate_from_terminal, integrate_adjoint


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: object
    expected: str

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "value": self.value,
                "expected": self.expected}


def zero_terminal_gap(system, process, theta):
    arc = costate_from_terminal(system, process, np.zeros(system.m), theta, 1)
    grad = cost_gradient(system, process, theta, (1e-11, 1e-11))
    return float(np.linalg.norm(arc.at(process.t0) + grad))


def planar_cost_identity_gap(C, theta, tol=(1e-11, 1e-11)):
    model = planar_model()
    proc, _ = planar_optimal_process(C, span=theta)
    num = integrate_process(proc.system, model.x_star, 0.0, proc.control, theta, tol)
    y = num.state(theta)
    lhs = num.cost(theta) - float(model.S_val(theta, y)) + float(model.S_val(0.0, model.x_star))
    return abs(lhs - (1 - math.exp(-2 * theta)) * float(np.dot(C, C)) / 2)


def planar_adjoint_gap(C, T=12.0):
    proc, arc = planar_optimal_process(C, span=T)
    num = integrate_adjoint(proc.system, proc, arc.psi[0], 1, T, (1e-11, 1e-11))
    ts = np.linspace(0, T, 601)
    return float(np.max(np.abs(num.at(ts) - arc.at(ts))))


def planar_suite():
    out = []
    C = np.array([0.6, -0.3])
    gap = max(planar_cost_identity_gap(C, th) for th in (1.0, 5.0, 12.0))
    out.append(Check("cost identity", gap < 1e-6, gap, "< 1e-6"))
    gap = planar_adjoint_gap(C)
    out.append(Check("adjoint closure", gap < 1e-6, gap, "< 1e-6"))
    proc, arc = planar_optimal_process(C, span=20.0)
    gap = max(zero_terminal_gap(proc.system, proc, th) for th in (5.0, 10.0, 20.0))
    out.append(Check("zero-terminal identity", gap < 1e-6, gap, "< 1e-6"))
    U = np.stack(np.meshgrid(np.linspace(-2, 2, 41), np.linspace(-2, 2, 41), indexing="ij"), -1)
    res = maxh_residual(proc.system, proc, arc, np.linspace(0, 5, 11), U.reshape(-1, 2))
    out.append(Check("maxH residual", res.residual < 1e-6, res.residual, "< 1e-6"))

    sched = LimitSchedule.default()
    refs = [planar_optimal_process(c, span=sched.theta_max) for c in ([0.3, 0.4], [1.2, 0.0])]
    ak = ak_limit(proc.system, refs[0][0], sched)
    out.append(Check("AK status", ak.status == "Oscillating", ak.status, "Oscillating"))
    sets = wakk_samples_batch(proc.system, [r for r, _ in refs], sched, 0)
    inside, m_in = wakk_check(refs[0][1].psi[0], 1, sets[0], ZeroCone(2))
    outside, m_out = wakk_check(refs[1][1].psi[0], 1, sets[1], ZeroCone(2))
    out.append(Check("WAKK accepts |C| = 0.5", inside, m_in.gap, "member"))
    out.append(Check("WAKK rejects |C| = 1.2", not outside and abs(m_out.gap - 0.2) < 2e-2,
                     m_out.gap, "non-member with gap near 0.2"))
    seqs = [phi + 2 * math.pi * np.arange(1, 21) for phi in (0.0, 1.5, 3.0, 4.5)]
    radii = 0.5 * 0.6 ** np.arange(1, 21)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyLevelWarning)
        aks = akk_samples(proc.system, planar_optimal_process([0.3, 0.4], span=4.5 + 40 * math.pi)[0],
                          seqs, radii, samples_per_level=8)
    member, _ = akk_check(refs[0][1].psi[0], 1, sample_sets=aks)
    out.append(Check("AKK rejects |C| = 0.5", not member, member, "non-member"))
    return out


def oscillator_suite():
    out = []
    sched = LimitSchedule.default()
    proc, arc = oscillator_optimal_process(sched.theta_max)
    ak = ak_limit(proc.system, proc, sched)
    norm = float(np.linalg.norm(ak.value)) if ak.converged else math.inf
    out.append(Check("AK converges to 0", ak.converged and norm < 1e-6, ak.status, "Converged, |v| < 1e-6"))
    U = np.linspace(-3, 3, 601)
    zero = CostateArc.from_function(lambda t: np.zeros(1), np.linspace(0, 5, 51), 1.0)
    r0 = maxh_residual(proc.system, proc, zero, [0.0], U)
    out.append(Check("maxH of the AK arc at t = 0", abs(r0.residual - 1) < 1e-3, r0.residual, "1"))
    r1 = maxh_residual(proc.system, proc, arc, np.linspace(0, 5, 51), U)
    out.append(Check("maxH of the true arc", r1.residual < 1e-6, r1.residual, "< 1e-6"))
    gap = max(zero_terminal_gap(proc.system, proc, th) for th in (5.0, 10.0, 20.0))
    out.append(Check("zero-terminal identity", gap < 1e-6, gap, "< 1e-6"))
    an = anton_residual(proc.system, proc, sched.thetas, U, [0.0, 1.0])
    want = -math.exp(-2 * 0.0)
    out.append(Check("Anton gap equals -exp(-2t)", abs(an.value - want) < 1e-3, an.value, "-1"))
    return out


def ramsey_suite(model=None):
    model = model or RamseyModel("sqrt(x)", "-ln(v)", 0.25, 1.0)
    out = []
    x0, u0 = ramsey_stationary(model)
    ok = abs(x0 - 4) < 1e-10 and abs(u0 - 2) < 1e-10
    out.append(Check("stationary point", ok, [x0, u0], "(4, 2)"))
    lu, ls, _ = saddle_eigen(ramsey_jacobian(model, x0, u0))
    out.append(Check("saddle eigenvalues", lu > 0 > ls, [lu, ls], "opposite signs"))
    proc, arc = ramsey_saddle_path(model, 130.0)
    dist = float(np.linalg.norm([proc.state(80.0)[0] - 4, proc.control(80.0)[0] - 2]))
    out.append(Check("saddle path reaches (4, 2) by T = 80", dist < 1e-3, dist, "< 1e-3"))
    res = maxh_residual(proc.system, proc, arc, np.linspace(0, 40, 81), np.linspace(0.05, 6, 600))
    out.append(Check("maxH along the path", res.residual < 1e-5, res.residual, "< 1e-5"))
    sched = LimitSchedule.default(samples_per_level=16)
    ak = ak_limit(proc.system, proc, sched)
    out.append(Check("AK converges to 0", ak.converged and abs(ak.value[0]) < 1e-12, ak.status, "Converged(0)"))
    sets = wakk_samples_batch(proc.system, [proc], sched, 0)
    cone = normal_cone(proc.system.c_as, proc.x0)
    member, m = wakk_check(arc.psi[0], 1, sets[0], cone)
    out.append(Check("WAKK with the half-line cone", member and arc.psi[0][0] > 0, m.gap, "member"))
    worst = math.inf
    for c in (0.6, 0.8, 1.0):
        lo, _ = overtaking_compare(proc.system, proc, ramsey_constant_process(model, c, 60.0),
                                   np.linspace(20, 60, 41))
        worst = min(worst, lo)
    out.append(Check("overtaking against constant controls", worst >= -1e-3, worst, ">= -1e-3"))
    gap = max(zero_terminal_gap(proc.system, proc, th) for th in (5.0, 10.0, 20.0))
    out.append(Check("zero-terminal identity", gap < 1e-6, gap, "< 1e-6"))
    return out


SUITES = {"planar": planar_suite, "oscillator": oscillator_suite, "ramsey": ramsey_suite}
