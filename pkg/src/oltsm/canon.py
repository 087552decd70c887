"""Byte-deterministic JSON rendering for map files, reports and manifests.

Two regimes are used across the package: map/report/CSV artifacts are
written with a fixed 9-significant-digit float format so that storage
measurements are reproducible, while raw detection streams and ground
truth files keep full shortest-roundtrip precision (plain ``json.dumps``
with sorted keys).
"""

from __future__ import annotations

import json
import math
from typing import Any


class DataFormatError(ValueError):
    """Raised when an on-disk artifact does not match its declared format."""


def format_float(x: float, digits: int = 9) -> str:
    """Render a finite float with a fixed number of significant digits.

    The output always parses back as a JSON float (a ``.0`` is appended
    to integral renderings), and negative zero is normalized.
    """
    if not math.isfinite(x):
        raise ValueError(f"non-finite value not serializable: {x!r}")
    if x == 0.0:
        x = 0.0
    s = format(x, f".{digits}g")
    if "." not in s and "e" not in s and "E" not in s:
        s += ".0"
    return s


def round_float(x: float, digits: int = 9) -> float:
    """The float value the canonical writer would store for ``x``."""
    return float(format_float(x, digits))


def dumps(value: Any, digits: int | None = 9) -> str:
    """Serialize ``value`` to compact JSON with sorted keys.

    ``digits`` selects the float regime: an int gives fixed significant
    digits (canonical artifacts), ``None`` keeps full precision.
    """
    if digits is None:
        return json.dumps(value, sort_keys=True, separators=(",", ":"), allow_nan=False)
    parts: list[str] = []
    _render(value, digits, parts)
    return "".join(parts)


def _render(value: Any, digits: int, out: list[str]) -> None:
    if value is None:
        out.append("null")
    elif isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        out.append(format_float(value, digits))
    elif isinstance(value, str):
        out.append(json.dumps(value))
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _render(item, digits, out)
        out.append("]")
    elif isinstance(value, dict):
        out.append("{")
        for i, key in enumerate(sorted(value)):
            if not isinstance(key, str):
                raise TypeError(f"JSON object keys must be str, got {type(key).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(key))
            out.append(":")
            _render(value[key], digits, out)
        out.append("}")
    else:
        raise TypeError(f"not JSON-serializable: {type(value).__name__}")


def loads(text: str) -> Any:
    return json.loads(text)
