"""Canonical JSON encoding for model artifacts and reports.

Rules: keys sorted, compact separators, floats rendered with %.17g (enough
significant digits for an exact float64 round trip), no NaN/inf. Encoding
the same object graph always yields the same bytes, which is what makes
save -> load -> save byte-stable.
"""

from __future__ import annotations

import json
import math


def _format_float(x: float) -> str:
    if math.isnan(x) or math.isinf(x):
        raise ValueError("non-finite float cannot be serialized canonically")
    if x == int(x) and abs(x) < 1e16:
        # keep integral floats readable and stable ("3.0" not "3")
        return repr(float(x))
    return format(x, ".17g")


def _encode(obj, out: list) -> None:
    if obj is None:
        out.append("null")
    elif obj is True:
        out.append("true")
    elif obj is False:
        out.append("false")
    elif isinstance(obj, int):
        out.append(str(obj))
    elif isinstance(obj, float):
        out.append(_format_float(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj, ensure_ascii=False))
    elif isinstance(obj, (list, tuple)):
        out.append("[")
        for i, item in enumerate(obj):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif isinstance(obj, dict):
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            if not isinstance(key, str):
                raise TypeError(f"non-string key {key!r}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(obj[key], out)
        out.append("}")
    else:
        raise TypeError(f"cannot canonically serialize {type(obj).__name__}")


def dumps(obj) -> str:
    """Serialize to canonical JSON text."""
    out: list = []
    _encode(obj, out)
    return "".join(out)


def dump_path(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
        fh.write("\n")


def load_path(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def loads(text: str):
    return json.loads(text)
