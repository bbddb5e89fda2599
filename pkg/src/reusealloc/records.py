"""Versioned JSON records for allocations, reports and sweep metadata."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from . import patterns as pt
from .conservative import Allocation, DelayReport

ALLOCATION_SCHEMA = "reusealloc.allocation/1"
SWEEP_SCHEMA = "reusealloc.sweep/1"
TRAJECTORY_SCHEMA = "reusealloc.powerctl/1"


class RecordError(ValueError):
    pass


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    return obj


def dump(record: dict, path) -> None:
    Path(path).write_text(json.dumps(to_jsonable(record), indent=2, sort_keys=False) + "\n")


def allocation_record(x: Allocation, scheme: str, lam, report: DelayReport | None = None,
                      bounds=None, extra: dict | None = None) -> dict:
    support = x.support()
    rec = {
        "schema": ALLOCATION_SCHEMA,
        "scheme": scheme,
        "n": x.n,
        "arrival_rates": np.asarray(lam, dtype=float),
        "allocation": x.to_dict()["x"],
        "support": [{"bits": int(b), "pattern": pt.label(b), "fraction": x[b]} for b in support],
    }
    if report is not None:
        rec["report"] = report.to_dict()
    if bounds is not None:
        rec["bounds"] = bounds.to_dict()
    if extra:
        rec.update(extra)
    return rec


def read_allocation(path) -> tuple[Allocation, dict]:
    """Load an allocation record; returns the allocation and the raw record."""
    try:
        rec = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise RecordError(f"cannot read allocation record {path}: {exc}") from None
    if rec.get("schema") != ALLOCATION_SCHEMA:
        raise RecordError(f"{path}: expected schema {ALLOCATION_SCHEMA!r}, got {rec.get('schema')!r}")
    return Allocation.from_dict({"n": rec["n"], "x": rec["allocation"]}), rec
