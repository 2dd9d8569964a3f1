"""Byte-deterministic JSON emission.

The stdlib json module offers no control over float formatting; fits and
reports are part of the reproducibility contract, so floats are written
with exactly 17 significant digits (enough to round-trip any double) and
keys keep insertion order.  Parsing uses plain `json.loads`.
"""

from __future__ import annotations

import json

import numpy as np


def _encode(obj, out, indent, level):
    pad = " " * (indent * level)
    pad_in = " " * (indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            out.append(pad_in)
            out.append(json.dumps(str(key)))
            out.append(": ")
            _encode(value, out, indent, level + 1)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append(pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = obj.tolist() if isinstance(obj, np.ndarray) else list(obj)
        if not items:
            out.append("[]")
            return
        # Flat numeric lists stay on one line; nested structures wrap.
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in items):
            out.append("[")
            for i, value in enumerate(items):
                _encode(value, out, indent, level + 1)
                if i < len(items) - 1:
                    out.append(", ")
            out.append("]")
        else:
            out.append("[\n")
            for i, value in enumerate(items):
                out.append(pad_in)
                _encode(value, out, indent, level + 1)
                out.append(",\n" if i < len(items) - 1 else "\n")
            out.append(pad + "]")
    elif isinstance(obj, bool) or isinstance(obj, np.bool_):
        out.append("true" if obj else "false")
    elif obj is None:
        out.append("null")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        value = float(obj)
        if not np.isfinite(value):
            raise ValueError("non-finite float cannot be serialized: %r" % value)
        out.append(format(value, ".17g"))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    else:
        raise TypeError("cannot serialize %r" % type(obj))


def dumps(obj, indent: int = 2) -> str:
    """Serialize `obj` to a JSON string with 17-significant-digit floats."""
    out: list[str] = []
    _encode(obj, out, indent, 0)
    out.append("\n")
    return "".join(out)


def dump(obj, path, indent: int = 2) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj, indent=indent))


def load(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
