"""Canonical JSON: sorted keys, floats at 9 significant digits.

Nine digits round-trip: parsing an emitted float and re-formatting it gives
the same text, so emitted documents are byte-stable under parse/serialize
cycles. json.dumps cannot control float formatting, hence the tiny
serializer here.
"""
from __future__ import annotations

import math
from typing import Any


def format_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x}")
    if x == 0.0:
        return "0"  # avoid the "-0" sign bit leaking into output
    return f"{x:.9g}"


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ch == "\r":
            out.append("\\r")
        elif ch == "\t":
            out.append("\\t")
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _emit(value: Any, parts: list, indent: int | None, level: int) -> None:
    nl, pad, pad_in = "", "", ""
    if indent is not None:
        nl = "\n"
        pad = " " * (indent * level)
        pad_in = " " * (indent * (level + 1))
    if value is None:
        parts.append("null")
    elif value is True:
        parts.append("true")
    elif value is False:
        parts.append("false")
    elif isinstance(value, int):
        parts.append(str(value))
    elif isinstance(value, float):
        parts.append(format_float(value))
    elif isinstance(value, str):
        parts.append(_escape(value))
    elif isinstance(value, dict):
        keys = sorted(value)
        if any(not isinstance(k, str) for k in keys):
            raise TypeError("object keys must be strings")
        if not keys:
            parts.append("{}")
            return
        parts.append("{" + nl)
        for n, k in enumerate(keys):
            parts.append(pad_in + _escape(k) + (": " if indent else ":"))
            _emit(value[k], parts, indent, level + 1)
            parts.append(("," if n < len(keys) - 1 else "") + nl)
        parts.append(pad + "}")
    elif isinstance(value, (list, tuple)):
        if len(value) == 0:
            parts.append("[]")
            return
        parts.append("[" + nl)
        for n, item in enumerate(value):
            parts.append(pad_in)
            _emit(item, parts, indent, level + 1)
            parts.append(("," if n < len(value) - 1 else "") + nl)
        parts.append(pad + "]")
    else:
        # numpy scalars and arrays arrive via their Python equivalents
        if hasattr(value, "item") and getattr(value, "ndim", None) == 0:
            _emit(value.item(), parts, indent, level)
        elif hasattr(value, "tolist"):
            _emit(value.tolist(), parts, indent, level)
        else:
            raise TypeError(f"cannot serialize {type(value).__name__}")


def dumps(value: Any, indent: int | None = 2) -> str:
    """Canonical document text; indent=None gives the compact one-line form."""
    parts: list[str] = []
    _emit(value, parts, indent, 0)
    return "".join(parts)
