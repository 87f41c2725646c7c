import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from infhorizon.modelfile import ConfigError, load_model, model_from_dict, preset
from infhorizon.reports import build_report, digest_bytes, dumps, fmt_float


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(fmt_float(x)) == x


def test_dumps_sorted_and_parseable():
    obj = {"b": np.array([1.0, 2.5]), "a": {"z": np.float64(0.1), "y": True, "x": None},
           "n": np.int64(3), "s": "text", "nan": float("nan")}
    text = dumps(obj)
    back = json.loads(text)
    assert list(back) == sorted(back)
    assert back["b"] == [1.0, 2.5] and back["a"]["z"] == 0.1 and back["n"] == 3
    assert back["nan"] == "nan"
    assert "1.0000000000000001e-01" in text
    assert dumps(obj) == text


def test_dumps_rejects_unknown():
    with pytest.raises(TypeError):
        dumps({"x": object()})


def test_build_report_fields():
    rep = build_report("ak", "AK limit", config={"tol": 1e-6}, seed=1, inputs_digest="d")
    for key in ("schema_version", "command", "condition", "config", "seed", "inputs_digest",
                "result", "certificate", "schedule"):
        assert key in rep
    assert "timestamp" not in rep
    assert "timestamp" in build_report("ak", "x", config={}, timestamp=True)


def test_presets():
    for name in ("planar", "oscillator", "ramsey"):
        lm = preset(name)
        proc, arc = lm.reference(20.0)
        assert proc.span == (0.0, 20.0) and arc is not None
    with pytest.raises(ConfigError):
        preset("unknown")


def test_custom_model_controls():
    base = {"family": "custom", "m": 1, "k": 1, "f": ["-x1 + u1"], "f0": "x1^2", "x0": [1.0]}
    for ctrl in ({"kind": "expr", "exprs": ["sin(t)"]}, {"kind": "constant", "value": 0.5},
                 {"kind": "grid", "nodes": [0, 1, 2], "values": [1.0, -1.0]}):
        lm = model_from_dict(dict(base, control=ctrl))
        proc, arc = lm.reference(2.0)
        assert arc is None and proc.span == (0.0, 2.0)
    with pytest.raises(ConfigError) as exc:
        model_from_dict(dict(base, control={"kind": "spline"}))
    assert exc.value.key == "control.kind"


def test_custom_model_sets():
    d = {"family": "custom", "m": 1, "k": 1, "f": ["u1"], "f0": "u1^2", "x0": [1.0],
         "U": {"kind": "box", "lo": [0.0], "hi": [2.0]},
         "c_as": {"kind": "halfline", "lower": [1.0]}, "c0": {"kind": "point", "x": [1.0]}}
    lm = model_from_dict(d)
    assert lm.system.control_set.contains([1.5]) and not lm.system.control_set.contains([3.0])
    assert lm.default_u_grid().min() == 0.0 and lm.default_u_grid().max() == 2.0
    with pytest.raises(ConfigError):
        model_from_dict(dict(d, U={"kind": "ellipse"}))


@pytest.mark.parametrize("d,key", [
    ({}, "family"), ({"family": "other"}, "family"),
    ({"family": "sdriven", "m": 2, "S": "0", "x_star": [0.0]}, "x_star"),
    ({"family": "ramsey", "f": "sqrt(x)", "f0": "-ln(v)", "rho": "a", "x_star": 1}, "rho"),
    ({"family": "custom", "m": 2, "k": 1, "f": ["x1"], "f0": "0", "x0": [0, 0]}, "f"),
])
def test_config_errors_name_key(d, key):
    with pytest.raises(ConfigError) as exc:
        model_from_dict(d)
    assert exc.value.key == key


def test_load_model_digest(tmp_path):
    p = tmp_path / "m.json"
    raw = b'{"family": "sdriven", "m": 1, "S": "0", "x_star": [0]}'
    p.write_bytes(raw)
    lm = load_model(p)
    assert lm.digest == digest_bytes(raw)
    p.write_text("[1, 2")
    with pytest.raises(ConfigError):
        load_model(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_model(p)
