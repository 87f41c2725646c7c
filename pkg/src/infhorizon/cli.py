"""Command-line front end.

Exit codes: 0 success or member, 1 condition check negative, 2 usage or
configuration error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import errors as E
from .convex_geom import hull_of, normal_cone
from .modelfile import PRESETS, ConfigError, load_model, model_from_dict
from .models import RamseyModel, ramsey_jacobian, ramsey_saddle_path, ramsey_stationary, saddle_eigen
from .ode_core import ControlSignal, integrate_process
from .reports import build_report, write_report
from .suites import SUITES
from .transversality import (LimitSchedule, ak_limit, akk_check, akk_samples, psiA_residual,
                             wakk_check, wakk_samples)
from .variational import transition_matrix

EXIT_OK, EXIT_NEGATIVE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
AKK_LEVELS = 20

CONFIG_ERRORS = (ConfigError, E.ExprSyntaxError, E.UnknownIdentifierError, E.ModelError,
                 E.DimensionMismatchError, E.PointNotInSetError, OSError, KeyError, ValueError)
NUMERIC_ERRORS = (E.NonFiniteError, E.StepUnderflowError, E.NoConvergenceError, E.DomainError,
                  E.NoBracketError, E.NoCrossingError, E.NotASaddleError,
                  E.NegativeStationaryControlError, E.NoSamplesError, E.OutOfRangeError,
                  E.GridMismatchError, E.EmptyGridError)

# Resolved-config keys that never enter a report: they do not affect results.
_VOLATILE = {"out", "timestamp", "model", "handler", "format", "command"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _floats(text):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _common(p, model_required=True):
    p.add_argument("--model", required=model_required, help="model JSON file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("json", "csv", "both"), default="both")
    p.add_argument("--timestamp", action="store_true", help="add a UTC timestamp to reports")


def _schedule_flags(p, samples=True):
    p.add_argument("--theta-min", type=float, default=2 * math.pi)
    p.add_argument("--theta-max", type=float, default=40 * math.pi)
    p.add_argument("--levels", type=int, default=12)
    if samples:
        p.add_argument("--samples", type=int, default=64, help="samples per level")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--horizons", choices=("window", "fixed"), default="window")
        p.add_argument("--lambda", dest="lam", type=int, choices=(0, 1), default=1)


def build_parser():
    ap = _Parser(prog="infhorizon", description="Transversality conditions for infinite-horizon control.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate the reference process")
    _common(p)
    p.add_argument("--theta-max", type=float, default=10.0, help="horizon")
    p.add_argument("--C", type=_floats, help="S-driven parameter C (overrides the model file)")
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--method", choices=("dopri5", "rk4"), default="dopri5")
    p.add_argument("--step", type=float, help="fixed step for rk4")
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("gradient", help="cost gradient dJ/dx(x0; theta)")
    _common(p)
    p.add_argument("--theta", type=_floats, required=True, help="horizons, comma separated")
    p.add_argument("--C", type=_floats)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(handler=cmd_gradient)

    p = sub.add_parser("ak", help="limit of the partial integrals of f0x A")
    _common(p)
    _schedule_flags(p, samples=False)
    p.add_argument("--window", type=int, help="tail length (default ceil(N/2))")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--C", type=_floats)
    p.set_defaults(handler=cmd_ak)

    p = sub.add_parser("wakk", help="membership of -psi(0) in the limiting-gradient set")
    _common(p)
    _schedule_flags(p)
    p.add_argument("--tol", type=float, default=5e-2)
    p.add_argument("--psi0", type=_floats, help="co-state at 0 (default: the reference arc)")
    p.add_argument("--C", type=_floats)
    p.add_argument("--akk", action="store_true", help="also run the sequence-wise check")
    p.add_argument("--akk-phases", type=_floats, default=[0.0, 1.5, 3.0, 4.5])
    p.set_defaults(handler=cmd_wakk)

    p = sub.add_parser("verify", help="run a built-in regression suite")
    p.add_argument("name", help="|".join(SUITES))
    p.add_argument("--out", default=None, help="directory for the suite report")
    p.add_argument("--timestamp", action="store_true")
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("ramsey", help="stationary point and saddle path of a growth model")
    _common(p, model_required=False)
    p.add_argument("--f", dest="f_expr", help="production function in x")
    p.add_argument("--f0", dest="f0_expr", help="disutility in v")
    p.add_argument("--rho", type=float)
    p.add_argument("--x-star", type=float)
    p.add_argument("--horizon", type=float, default=40.0)
    p.set_defaults(handler=cmd_ramsey)
    return ap


# ---------------------------------------------------------------- helpers

def _config(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _VOLATILE}


def _outdir(args):
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(args, stem, report, csv_text=None, csv_stem=None):
    d = _outdir(args)
    if args.format in ("json", "both"):
        write_report(d / f"{stem}.json", report)
    if csv_text is not None and args.format in ("csv", "both"):
        (d / f"{csv_stem or stem}.csv").write_text(csv_text, encoding="utf-8")


def _summary(report):
    res = report.get("result") or {}
    keys = [k for k in ("status", "member", "passed", "x0", "u0") if k in res]
    text = ", ".join(f"{k}={res[k]}" for k in keys)
    if "akk" in res:
        text += f", akk_member={res['akk']['member']}"
    print(f"{report['command']}: {text}" if text else report["command"])


def _show(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_show(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".6g")
    return str(v)


def _reference(lm, span, C):
    return lm.reference(span, C) if lm.family == "sdriven" else lm.reference(span)


# ---------------------------------------------------------------- commands

def cmd_simulate(args, lm):
    if lm.family == "sdriven":
        C = lm.params["C"] if args.C is None else np.asarray(args.C, float)
        ref, _ = lm.reference(args.theta_max, C)
        x0, control = lm.model.x_star, ref.control
    elif lm.family == "ramsey":
        ref, _ = lm.reference(args.theta_max)
        x0 = [lm.model.x_star]
        control = ControlSignal.analytic(1, ref.control.fn)
    else:
        x0, control = lm.params["x0"], lm.params["control"]
    proc = integrate_process(lm.system, x0, 0.0, control, args.theta_max, (args.tol, args.tol),
                             method=args.method, step=args.step)
    result = {"final_time": proc.span[1], "final_state": proc.states[-1],
              "final_cost": proc.cost_path[-1], "nodes": len(proc.grid)}
    rep = build_report("simulate", "trajectory", config=_config(args), inputs_digest=lm.digest,
                       result=result, timestamp=args.timestamp)
    _emit(args, "simulate", rep, proc.to_csv(), "trajectory")
    _summary(rep)
    return EXIT_OK


def cmd_gradient(args, lm):
    thetas = sorted(args.theta)
    ref, _ = _reference(lm, thetas[-1], args.C)
    sens = transition_matrix(lm.system, ref, thetas[-1], (args.tol, args.tol))
    grads = np.atleast_2d(sens.g_at(np.array(thetas)))
    lgrad = lm.system.initial_cost_grad(ref.x0)
    result = {"x0": ref.x0, "thetas": thetas, "gradients": grads + lgrad,
              "singular_transition": sens.singular}
    rep = build_report("gradient", "cost gradient", config=_config(args), inputs_digest=lm.digest,
                       result=result, timestamp=args.timestamp)
    _emit(args, "gradient", rep, sens.to_csv(), "sensitivity")
    _summary(rep)
    return EXIT_OK


def cmd_ak(args, lm):
    sched = LimitSchedule.default(args.levels, args.theta_min, args.theta_max, samples_per_level=1)
    ref, arc = _reference(lm, sched.theta_max, args.C)
    sens = transition_matrix(lm.system, ref, sched.theta_max, (1e-10, 1e-10))
    res = ak_limit(lm.system, ref, sched, args.window, args.tol, sens=sens)
    result = res.to_dict()
    if arc is not None:
        result["psiA_residuals"] = [psiA_residual(arc, sens, th) for th in sched.thetas]
    rep = build_report("ak", "AK limit", config=_config(args), inputs_digest=lm.digest,
                       result=result, schedule=sched.to_dict(), timestamp=args.timestamp)
    _emit(args, "ak", rep, res.to_csv(), "ak_partials")
    _summary(rep)
    return EXIT_OK if res.converged else EXIT_NEGATIVE


def cmd_wakk(args, lm):
    sched = LimitSchedule.default(args.levels, args.theta_min, args.theta_max, args.samples,
                                  args.lam, args.horizons)
    ref, arc = _reference(lm, sched.theta_max, args.C)
    if args.psi0 is not None:
        psi0 = np.asarray(args.psi0, float)
    elif arc is not None:
        psi0 = arc.psi[0]
    else:
        raise ConfigError("psi0", "the model has no reference co-state; pass --psi0")
    if psi0.size != lm.m:
        raise ConfigError("psi0", f"expected {lm.m} numbers")
    cone = normal_cone(lm.system.c_as, ref.x0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", E.EmptyLevelWarning)
        samples = wakk_samples(lm.system, ref, sched, args.seed)
    member, mem = wakk_check(psi0, args.lam, samples, cone, args.tol)
    cloud = samples.deepest(2)
    hull = hull_of(cloud)
    result = {"member": member, "gap": mem.gap, "psi0": psi0, "point": mem.point,
              "cone": cone.to_dict(), "samples_per_level": samples.counts(),
              "empty_levels": [str(w.message) for w in caught],
              "note": "member means certified on samples; non-member means outside at tolerance"}
    cert = {"nu": mem.nu, "weights": mem.weights, "generators": cloud.points} if member else None
    if args.akk:
        # phase-shifted arithmetic sequences phi + n * theta_min, n = 1..AKK_LEVELS
        seqs = [ph + args.theta_min * np.arange(1, AKK_LEVELS + 1) for ph in args.akk_phases]
        ref2, _ = _reference(lm, max(s[-1] for s in seqs), args.C)
        radii = 0.5 * 0.6 ** np.arange(1, AKK_LEVELS + 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", E.EmptyLevelWarning)
            sets = akk_samples(lm.system, ref2, seqs, radii, samples_per_level=max(4, args.samples // 8),
                               lam=args.lam, seed=args.seed)
        akk_member, per = akk_check(psi0, args.lam, cone=cone, tol=args.tol, sample_sets=sets)
        result["akk"] = {"member": akk_member, "sequences": [r.to_dict() for r in per]}
        member = member and akk_member
    rep = build_report("wakk", "WAKK membership", config=_config(args), seed=args.seed,
                       inputs_digest=lm.digest, result=result, certificate=cert,
                       schedule=sched.to_dict(), timestamp=args.timestamp)
    d = _outdir(args)
    if args.format in ("json", "both"):
        write_report(d / "wakk.json", rep)
        write_report(d / "hull.json", {"schema_version": rep["schema_version"], "hull": hull.to_dict()})
    if args.format in ("csv", "both"):
        lines = ["level,theta," + ",".join(f"grad_{j + 1}" for j in range(lm.m))]
        for rec in samples.levels:
            for th, g in zip(rec.thetas, rec.grads):
                lines.append(",".join([str(rec.level)] + [format(v, ".16e") for v in (th, *g)]))
        (d / "wakk_samples.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _summary(rep)
    return EXIT_OK if member else EXIT_NEGATIVE


def cmd_verify(args, lm=None):
    if args.name not in SUITES:
        print(f"infhorizon verify: unknown example {args.name!r}; expected one of {sorted(SUITES)}",
              file=sys.stderr)
        return EXIT_CONFIG
    checks = SUITES[args.name]()
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {_show(c.value)} (expected {c.expected})")
    passed = all(c.passed for c in checks)
    result = {"passed": passed, "checks": [c.to_dict() for c in checks]}
    if args.name == "ramsey":
        x0, u0 = ramsey_stationary(RamseyModel(**{k: PRESETS["ramsey"][k] for k in ("f", "f0", "rho", "x_star")}))
        result.update({"x0": x0, "u0": u0})
    rep = build_report("verify", args.name, config={"name": args.name}, result=result,
                       timestamp=args.timestamp)
    if args.out is not None:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        write_report(d / f"verify_{args.name}.json", rep)
    return EXIT_OK if passed else EXIT_NEGATIVE


def cmd_ramsey(args, lm):
    if lm is not None and lm.family != "ramsey":
        raise ConfigError("family", "the ramsey command needs a ramsey model")
    base = dict(PRESETS["ramsey"]) if lm is None else dict(lm.raw)
    for key, val in (("f", args.f_expr), ("f0", args.f0_expr), ("rho", args.rho), ("x_star", args.x_star)):
        if val is not None:
            base[key] = val
    lm = model_from_dict(base, lm.digest if lm is not None and base == lm.raw else None)
    model = lm.model
    x0, u0 = ramsey_stationary(model)
    lu, ls, v = saddle_eigen(ramsey_jacobian(model, x0, u0))
    proc, arc = ramsey_saddle_path(model, args.horizon)
    T = args.horizon
    dist = float(np.hypot(proc.state(T)[0] - x0, proc.control(T)[0] - u0))
    result = {"x0": x0, "u0": u0, "eigenvalues": [lu, ls], "stable_vector": v,
              "travel_time": proc.info["travel_time"], "u_at_0": proc.control(0.0)[0],
              "psi_at_0": arc.psi[0], "distance_at_horizon": dist}
    rep = build_report("ramsey", "saddle path", config=_config(args), inputs_digest=lm.digest,
                       result=result, timestamp=args.timestamp, extra={"model": model.to_dict()})
    lines = ["t,y,u,psi,w"]
    for t, y, w, p in zip(proc.grid.nodes, proc.states[:, 0], proc.cost_path, arc.psi[:, 0]):
        lines.append(",".join(format(float(v), ".16e") for v in (t, y, proc.control(t)[0], p, w)))
    _emit(args, "ramsey", rep, "\n".join(lines) + "\n", "saddle_path")
    _summary(rep)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_CONFIG
    try:
        if args.command == "verify":
            return args.handler(args)
        lm = load_model(args.model) if getattr(args, "model", None) else None
        return args.handler(args, lm)
    except NUMERIC_ERRORS as exc:
        print(f"infhorizon {args.command}: numeric failure: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_NUMERIC
    except CONFIG_ERRORS as exc:
        print(f"infhorizon {args.command}: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
