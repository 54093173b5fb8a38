"""Canonical JSON encoding and config hashing.

Every stage of the pipeline stamps its outputs with the hash of the
configuration that produced them; downstream stages refuse mismatched
inputs instead of silently recomputing on stale artifacts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from typing import Any


def jsonable(obj: Any) -> Any:
    """Convert dataclasses / tuples / sets into plain JSON-encodable data."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(str(v) for v in obj)
    return obj


def canonical_json(obj: Any) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    """Stable hex digest of a configuration object."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()
