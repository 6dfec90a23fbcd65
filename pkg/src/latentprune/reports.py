"""Report serialization: versioned JSON with stable field order, CSV for curves."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
from typing import Any

from .errors import ValidationError

SCHEMA_VERSION = 1


def report_to_dict(report: Any) -> dict:
    """Dataclass (or mapping) to a plain dict in declared field order."""
    if dataclasses.is_dataclass(report) and not isinstance(report, type):
        out = {}
        for f in dataclasses.fields(report):
            v = getattr(report, f.name)
            out[f.name] = report_to_dict(v) if dataclasses.is_dataclass(v) else _plain(v)
        return out
    if isinstance(report, dict):
        return {k: _plain(v) for k, v in report.items()}
    raise ValidationError(f"cannot serialize report of type {type(report).__name__}")


def _plain(v):
    import numpy as np

    if dataclasses.is_dataclass(v) and not isinstance(v, type):
        return report_to_dict(v)
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    return v


def emit_json(report: Any, schema: str) -> str:
    """Serialize one report (or a list of them) with a schema envelope."""
    if isinstance(report, list):
        body = [report_to_dict(r) for r in report]
    else:
        body = report_to_dict(report)
    return json.dumps({"schema": schema, "schema_version": SCHEMA_VERSION, "report": body}, indent=2)


def parse_json(text: str) -> dict:
    doc = json.loads(text)
    if not isinstance(doc, dict) or "schema" not in doc or "report" not in doc:
        raise ValidationError("not a toolkit report document")
    return doc


def latency_curve_csv(curve) -> str:
    """CSV rows of a latency curve: kept_fraction, mean_ms, std_ms."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["kept_fraction", "mean_ms", "std_ms"])
    for f, m, s in zip(curve.fractions, curve.mean_s, curve.std_s):
        writer.writerow([f"{f:.6g}", f"{m * 1e3:.6f}", f"{s * 1e3:.6f}"])
    return buf.getvalue()
