"""JSON reports: canonical serialisation, digests and schema validation."""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime, timezone
from functools import lru_cache
from importlib import resources
from typing import Any

import numpy as np

from . import __version__

__all__ = ["clean", "canonical", "sha256_of", "build_report", "dumps", "schema", "validate", "now"]

TOOL_VERSION = __version__


def clean(obj: Any) -> Any:
    """Convert to plain JSON types; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "to_json"):
        return clean(obj.to_json())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def canonical(obj: Any) -> str:
    return json.dumps(clean(obj), sort_keys=True, separators=(",", ":"))


def sha256_of(obj: Any) -> str:
    return hashlib.sha256(canonical(obj).encode()).hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_report(command: str, system: str, config, certificate=None, sub_reports=(), files=()) -> dict:
    return clean({
        "tool_version": TOOL_VERSION,
        "command": command,
        "system": system,
        "config_digest": config.digest(),
        "config": {k: v for k, v in config.to_json().items() if k not in ("output", "csv_dir")},
        "certificate": certificate,
        "sub_reports": list(sub_reports),
        "files": list(files),
    })


def dumps(report: dict) -> str:
    """Deterministic text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


@lru_cache(maxsize=1)
def schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("report_schema.json").read_text())


def validate(report: dict) -> None:
    """Raise ``jsonschema.ValidationError`` if ``report`` does not match the schema."""
    import jsonschema

    jsonschema.validate(report, schema())
