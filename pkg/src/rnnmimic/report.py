"""Run-directory layout and deterministic report serialization.

Every training run lives under ``<out>/runs/<digest prefix>/`` with
``checkpoints/``, ``reports/`` and ``logs/`` subdirectories; every report
embeds the config digest and seed it was computed from and contains no
timestamps, so reruns with equal seeds are byte-identical.
"""

import json
import os

import numpy as np

from .train import canonical_json, config_digest

__all__ = [
    "run_dir",
    "write_json",
    "write_text",
    "report_doc",
    "jsonable",
]

DIGEST_PREFIX = 12


def run_dir(base, digest):
    """Create (if needed) and return the run directory for a digest."""
    path = os.path.join(base, "runs", digest[:DIGEST_PREFIX])
    for sub in ("checkpoints", "reports", "logs"):
        os.makedirs(os.path.join(path, sub), exist_ok=True)
    return path


def jsonable(value):
    """Recursively convert numpy scalars/arrays for JSON emission."""
    if isinstance(value, dict):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        if np.iscomplexobj(value):
            return [[float(v.real), float(v.imag)] for v in value.ravel()]
        return jsonable(value.tolist())
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if np.isnan(v) else v
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, complex):
        return [value.real, value.imag]
    return value


def report_doc(kind, digest, seed, params, data):
    """Standard report wrapper embedding provenance."""
    return {
        "kind": kind,
        "digest": digest,
        "seed": seed,
        "params": jsonable(params),
        "data": jsonable(data),
    }


def write_json(path, doc):
    with open(path, "w") as fh:
        fh.write(json.dumps(jsonable(doc), sort_keys=True, indent=2) + "\n")


def write_text(path, text):
    with open(path, "w") as fh:
        fh.write(text)
