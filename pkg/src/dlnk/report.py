"""JSON reports.

A report has a numeric payload (everything reproducible from config and
seed) and an ``execution`` block with wall-clock time and thread count.
Determinism is defined on the payload alone, see :func:`payload_bytes`.
"""

from __future__ import annotations

import json
import math
from importlib import resources
from typing import Any, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict

SCHEMA_VERSION = "1.0"


class Provenance(BaseModel):
    model_config = ConfigDict(extra="forbid")

    package_version: str
    seed: int
    rng: str = "numpy Philox4x64, child streams keyed by (seed, stream_id)"
    chunk_size: int


class Execution(BaseModel):
    model_config = ConfigDict(extra="forbid")

    wall_clock_seconds: float
    threads: int
    timings: dict[str, float] = {}


class Report(BaseModel):
    model_config = ConfigDict(extra="forbid")

    schema_version: Literal["1.0"] = SCHEMA_VERSION
    command: Literal["sample-prior", "predict", "evidence", "ldp", "verify"]
    config: dict[str, Any]
    results: dict[str, Any]
    diagnostics: dict[str, Any]
    provenance: Provenance
    execution: Optional[Execution] = None


def plain(obj):
    """Convert numpy containers to JSON-safe Python; non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def to_json(report: Report) -> str:
    return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def payload_bytes(doc: dict | Report) -> bytes:
    """Canonical bytes of everything except the ``execution`` block."""
    if isinstance(doc, Report):
        doc = doc.model_dump(mode="json")
    body = {k: v for k, v in doc.items() if k != "execution"}
    return json.dumps(body, sort_keys=True, separators=(",", ":")).encode()


def schema() -> dict:
    """The published report schema shipped with the package."""
    text = resources.files("dlnk").joinpath("schemas/report.schema.json").read_text()
    return json.loads(text)


def generated_schema() -> dict:
    return Report.model_json_schema()
