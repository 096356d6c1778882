"""Deterministic text output: 17-significant-digit floats, LF endings, UTF-8."""

from __future__ import annotations

import csv
import io
import json
import math
from typing import Sequence


def fmt_float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"refusing to serialise non-finite value {x!r}")
    return format(x, ".17g")


def fmt_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return fmt_float(v)
    return str(v)


def dumps_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with every float printed as %.17g (json.dumps uses the shortest repr)."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if obj is None or isinstance(obj, (bool, str)):
        return json.dumps(obj)
    if isinstance(obj, int):
        return str(int(obj))
    if isinstance(obj, float):
        s = fmt_float(obj)
        return s if any(c in s for c in ".en") else s + ".0"
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalar
        return dumps_json(obj.item(), indent, _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [pad + dumps_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def rows_to_csv(rows: Sequence[dict], header: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt_cell(r.get(k)) for k in header])
    return buf.getvalue()


def rows_to_text(rows: Sequence[dict], header: Sequence[str], fmt: str) -> str:
    if fmt == "csv":
        return rows_to_csv(rows, header)
    if fmt == "json":
        return dumps_json([{k: r.get(k) for k in header} for r in rows]) + "\n"
    raise ValueError(f"unknown format {fmt!r}")
