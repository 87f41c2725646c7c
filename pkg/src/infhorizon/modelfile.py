"""Model files: JSON descriptions of the built-in families and custom systems.

Every loader error is a :class:`ConfigError` naming the offending key.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InfHorizonError
from .expr import compile_many, parse_expr
from .models import (OSCILLATOR_S, PLANAR_S, RamseyModel, SDrivenModel, expr_system,
                     ramsey_saddle_path, ramsey_system, sdriven_optimal_process, sdriven_system)
from .ode_core import ControlSignal, integrate_process
from .reports import digest_bytes
from .sets import constraint_from_dict, control_set_from_dict

FAMILIES = ("sdriven", "ramsey", "custom")

PRESETS = {
    "planar": {"family": "sdriven", "name": "planar", "m": 2, "S": PLANAR_S, "x_star": [0.0, 0.0]},
    "oscillator": {"family": "sdriven", "name": "oscillator", "m": 1, "S": OSCILLATOR_S,
                   "x_star": [0.0]},
    "ramsey": {"family": "ramsey", "name": "ramsey", "f": "sqrt(x)", "f0": "-ln(v)", "rho": 0.25,
               "x_star": 1.0},
}


class ConfigError(InfHorizonError, ValueError):
    def __init__(self, key, msg):
        super().__init__(f"{key}: {msg}")
        self.key = key


def _get(d, key, kind=None, default=...):
    if key not in d:
        if default is ...:
            raise ConfigError(key, "missing required key")
        return default
    v = d[key]
    if kind is not None and not isinstance(v, kind):
        raise ConfigError(key, f"expected {getattr(kind, '__name__', kind)}, got {type(v).__name__}")
    return v


def _vector(d, key, size=None, default=...):
    v = _get(d, key, default=default)
    try:
        arr = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise ConfigError(key, "expected a number or a list of numbers") from None
    if arr.ndim != 1 or (size is not None and arr.size != size):
        raise ConfigError(key, f"expected {size} numbers")
    return arr


@dataclass(eq=False)
class LoadedModel:
    """A model file resolved into a system plus a way to build its reference process."""

    family: str
    name: str
    system: object
    raw: dict
    digest: str
    model: object = None
    params: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.system.m

    def reference(self, span, C=None):
        """``(Process, CostateArc or None)`` over ``[0, span]``."""
        if self.family == "sdriven":
            C = self.params["C"] if C is None else np.asarray(C, dtype=float)
            return sdriven_optimal_process(self.model, C, span)
        if self.family == "ramsey":
            return ramsey_saddle_path(self.model, span)
        proc = integrate_process(self.system, self.params["x0"], 0.0, self.params["control"], span,
                                 self.params.get("tol", (1e-10, 1e-10)))
        return proc, None

    def default_u_grid(self, u_hat=None):
        """A finite control sample inside U for Hamiltonian checks."""
        k = self.system.k
        cs = self.system.control_set
        if cs.kind == "grid":
            return cs.points
        lo = np.full(k, -3.0)
        hi = np.full(k, 3.0)
        if cs.kind == "box":
            lo = np.where(np.isfinite(cs.lo), cs.lo, np.where(np.isfinite(cs.hi), cs.hi - 6.0, lo))
            hi = np.where(np.isfinite(cs.hi), cs.hi, lo + 6.0)
        n = 401 if k == 1 else 41 if k == 2 else 9
        axes = [np.linspace(a, b, n) for a, b in zip(lo, hi)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, k)

    def to_dict(self):
        return dict(self.raw)


def _control_from_dict(d, k):
    kind = _get(d, "kind", str)
    if kind == "expr":
        exprs = _get(d, "exprs", list)
        if len(exprs) != k:
            raise ConfigError("control.exprs", f"expected {k} expressions")
        fn = compile_many([parse_expr(e, {"t"}) for e in exprs], ["t"])
        return ControlSignal.analytic(k, lambda t: np.array(fn(t), dtype=float).reshape(k))
    if kind == "constant":
        return ControlSignal.constant(_vector(d, "value", k))
    if kind == "grid":
        return ControlSignal.from_grid(_get(d, "nodes", list), np.asarray(_get(d, "values", list), float).reshape(-1, k))
    raise ConfigError("control.kind", f"unknown control kind {kind!r}")


def model_from_dict(d, digest=None):
    if not isinstance(d, dict):
        raise ConfigError("<root>", "a model file must hold a JSON object")
    family = _get(d, "family", str)
    if family not in FAMILIES:
        raise ConfigError("family", f"unknown family {family!r}; expected one of {FAMILIES}")
    digest = digest or digest_bytes(json.dumps(d, sort_keys=True).encode())
    name = _get(d, "name", str, family)
    if family == "sdriven":
        m = _get(d, "m", int)
        model = SDrivenModel(m, _get(d, "S", str), _vector(d, "x_star", m), name=name)
        C = _vector(d, "C", m, [0.0] * m)
        return LoadedModel(family, name, sdriven_system(model), d, digest, model, {"C": C})
    if family == "ramsey":
        model = RamseyModel(_get(d, "f", str), _get(d, "f0", str), float(_get(d, "rho", (int, float))),
                            float(_get(d, "x_star", (int, float))), strict=bool(d.get("strict", False)))
        return LoadedModel(family, name, ramsey_system(model), d, digest, model, {})
    m = _get(d, "m", int)
    k = _get(d, "k", int)
    f = _get(d, "f", list)
    if len(f) != m:
        raise ConfigError("f", f"expected {m} expressions")
    try:
        c0 = constraint_from_dict(_get(d, "c0", dict, {"kind": "whole"}), m)
    except KeyError as exc:
        raise ConfigError(f"c0.{exc.args[0]}", "missing or unknown") from None
    try:
        c_as = constraint_from_dict(_get(d, "c_as", dict, {"kind": "whole"}), m)
    except KeyError as exc:
        raise ConfigError(f"c_as.{exc.args[0]}", "missing or unknown") from None
    try:
        U = control_set_from_dict(_get(d, "U", dict, {"kind": "whole"}), k)
    except KeyError as exc:
        raise ConfigError(f"U.{exc.args[0]}", "missing or unknown") from None
    system = expr_system(f, _get(d, "f0", str), m, k, l=d.get("l"), control_set=U, c0=c0,
                         c_as=c_as, name=name, meta={"family": "custom"})
    try:
        control = _control_from_dict(_get(d, "control", dict, {"kind": "constant", "value": [0.0] * k}), k)
    except KeyError as exc:
        raise ConfigError(f"control.{exc.args[0]}", "missing key") from None
    params = {"x0": _vector(d, "x0", m), "control": control}
    return LoadedModel(family, name, system, d, digest, None, params)


def load_model(path):
    """Read a model file; raises :class:`ConfigError` on malformed content."""
    data = Path(path).read_bytes()
    try:
        d = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ConfigError("<json>", f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return model_from_dict(d, digest_bytes(data))


def preset(name):
    if name not in PRESETS:
        raise ConfigError("example", f"unknown example {name!r}; expected one of {sorted(PRESETS)}")
    return model_from_dict(dict(PRESETS[name]))
