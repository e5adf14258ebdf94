"""Versioned structured-text (YAML) configuration files.

Every file this package reads or writes starts with a `schema:` tag of the
form ``muralbot/<kind>@<version>`` so artifacts flowing between CLI
commands can be validated before use.
"""

from __future__ import annotations

import io
from pathlib import Path

import yaml

from .errors import SchemaError


def read_tagged(path: str | Path, expected_kind: str, expected_version: int = 1) -> dict:
    """Load a YAML document and verify its schema tag.

    Raises SchemaError when the tag is absent, names a different kind, or
    is a newer version than this code understands.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with open(path, "r") as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: expected a mapping at the top level")
    tag = doc.get("schema")
    expected = f"muralbot/{expected_kind}@"
    if not isinstance(tag, str) or not tag.startswith(expected):
        raise SchemaError(f"{path}: schema tag {tag!r}, expected {expected}{expected_version}")
    version = int(tag.rsplit("@", 1)[1])
    if version > expected_version:
        raise SchemaError(f"{path}: schema version {version} newer than supported {expected_version}")
    return doc


def _to_plain(value):
    """Recursively convert numpy scalars/arrays to YAML-safe builtins."""
    import numpy as np

    if isinstance(value, dict):
        return {k: _to_plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_plain(value.tolist())
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def write_tagged(path: str | Path, kind: str, payload: dict, version: int = 1) -> None:
    doc = {"schema": f"muralbot/{kind}@{version}"}
    doc.update(_to_plain(payload))
    buf = io.StringIO()
    yaml.safe_dump(doc, buf, sort_keys=False, default_flow_style=None)
    Path(path).write_text(buf.getvalue())
