"""Deterministic report emission: JSON summaries and CSV tables.

Everything here is bit-reproducible: floats go out at 17 significant digits
(shortest round trip), dict keys are sorted, no timestamps.  Every summary
embeds the fully resolved configuration, its hash, the seed, and versions.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np


def _canonical(obj):
    """JSON-friendly deep conversion with deterministic ordering."""
    if isinstance(obj, dict):
        return {str(k): _canonical(obj[k]) for k in sorted(obj, key=str)}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": float(obj.real), "im": float(obj.imag)}
    return obj


def config_hash(config):
    blob = json.dumps(_canonical(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json(path, payload, config=None):
    out = _canonical(payload)
    if config is not None:
        out["config"] = _canonical(config)
        out["config_hash"] = config_hash(config)
        out["versions"] = {"lorcal": "0.1.0", "numpy": np.__version__}
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return path


def write_csv(path, header, rows):
    """Locale-independent CSV at full (17 significant digit) precision."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = []
            for v in row:
                if isinstance(v, (float, np.floating)):
                    cells.append(f"{float(v):.17g}")
                elif isinstance(v, complex):
                    cells.append(f"{v.real:.17g}{v.imag:+.17g}j")
                else:
                    cells.append(str(v))
            fh.write(",".join(cells) + "\n")
    return path
