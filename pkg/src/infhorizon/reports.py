"""Deterministic JSON reports.

Floats are written in scientific notation with 17 significant digits so that
reports round-trip exactly and identical runs give identical bytes.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import math
from pathlib import Path

import numpy as np

SCHEMA_VERSION = "1.0"


def fmt_float(x):
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        # JSON has no literal for these; a string keeps the report parseable.
        return json.dumps(repr(x))
    return format(x, ".16e")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dump(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return fmt_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (list, dict)) for v in obj):
            return "[" + ", ".join(_dump(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _dump(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if not obj:
        return "{}"
    items = [pad + json.dumps(k) + ": " + _dump(v, indent, level + 1) for k, v in sorted(obj.items())]
    return "{\n" + ",\n".join(items) + "\n" + end + "}"


def dumps(obj, indent=1):
    """Serialise ``obj`` (dicts, lists, numbers, arrays, objects with ``to_dict``)."""
    return _dump(_plain(obj), indent, 0) + "\n"


def digest_bytes(data):
    return hashlib.sha256(data).hexdigest()


def digest_file(path):
    return digest_bytes(Path(path).read_bytes())


def build_report(command, condition, *, config, seed=None, inputs_digest=None, result=None,
                 certificate=None, schedule=None, timestamp=False, extra=None):
    rep = {"schema_version": SCHEMA_VERSION, "command": command, "condition": condition,
           "config": config, "seed": seed, "inputs_digest": inputs_digest, "result": result,
           "certificate": certificate, "schedule": schedule}
    if extra:
        rep.update(extra)
    if timestamp:
        rep["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    return rep


def write_report(path, report):
    text = dumps(report)
    Path(path).write_text(text, encoding="utf-8")
    return text
