"""JSON report envelope, validation against the published schema, and writing."""

from __future__ import annotations

import json
import math
import os
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

VERSION = "0.1.0"


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("latentfair").joinpath("schemas/report.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


def to_jsonable(obj):
    """Convert numpy containers and non-finite floats (to ``None``) recursively."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def envelope(command, results, seed=None, warnings=(), status="ok", error=None) -> dict:
    return to_jsonable(
        {
            "command": command,
            "version": VERSION,
            "status": status,
            "seed": seed,
            "results": results,
            "warnings": [str(w) for w in warnings],
            "error": error,
        }
    )


def validate_report(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` when ``report`` does not match the schema."""
    jsonschema.validate(report, report_schema())


def write_report(report: dict, out_dir: str, name: str) -> str:
    validate_report(report)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, name)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
