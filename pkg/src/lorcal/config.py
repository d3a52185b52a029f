"""Run configuration: nested key/value text files plus flag overrides.

The file format is plain text: one `dotted.key = value` per line, `#`
comments, values parsed as JSON scalars/lists when possible and kept as
strings otherwise.  Example:

    metric.family = ultrastatic
    metric.spatial = hyperbolic
    samples = 10000
    K = -1.0

Unknown keys are rejected against the schema of the chosen subcommand.
"""

from __future__ import annotations

import json

from .errors import ValidationError


def parse_kv_text(text):
    """Parse the nested key/value format into a nested dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        key = key.strip()
        val = val.strip()
        try:
            parsed = json.loads(val)
        except json.JSONDecodeError:
            parsed = val
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValidationError(f"line {lineno}: {key!r} collides with a scalar")
        node[parts[-1]] = parsed
    return out


def load_config(path):
    with open(path) as fh:
        return parse_kv_text(fh.read())


def validate_keys(config, allowed, where=""):
    """Reject unknown top-level keys; nested metric descriptors are validated
    by the metric builder itself."""
    for key in config:
        if key not in allowed:
            raise ValidationError(
                f"unknown key {key!r}{' in ' + where if where else ''}; "
                f"allowed: {', '.join(sorted(allowed))}")


def merged(config, overrides):
    out = dict(config)
    for k, v in overrides.items():
        if v is not None:
            out[k] = v
    return out
