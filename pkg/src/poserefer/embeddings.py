"""Frozen semantic vectors for utterances and category names.

Real pretrained embeddings enter only as precomputed files; nothing here
runs an encoder. For desk-scale experiments a deterministic pseudo-embedder
produces unit vectors whose cosine structure mimics a semantic space:
keys sharing a group land near a common direction, everything else is
quasi-orthogonal at moderate dimension.

File format (``embeddings.jsonl``): a header line ``{"dim": D, ...}``
followed by one ``{"key": ..., "vec": [...]}`` record per line.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import EmbeddingError


@dataclass
class EmbeddingStore:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __contains__(self, key: str) -> bool:
        return key in self.vectors

    def __len__(self) -> int:
        return len(self.vectors)

    def keys(self):
        return self.vectors.keys()

    def insert(self, key: str, vec) -> None:
        v = np.asarray(vec, dtype=np.float64)
        if v.shape != (self.dim,):
            raise EmbeddingError(
                f"vector for key {key!r} has dim {v.shape}, store dim is {self.dim}"
            )
        self.vectors[key] = v

    def lookup(self, key: str) -> np.ndarray:
        try:
            return self.vectors[key]
        except KeyError:
            raise EmbeddingError(f"embedding key not found: {key!r}") from None


@dataclass(frozen=True)
class PseudoEmbedderConfig:
    seed: int = 0
    dim: int = 384
    group_map: dict[str, str] | None = None
    within_group_noise: float = 0.3

    def __post_init__(self):
        if self.dim < 2:
            raise EmbeddingError("pseudo-embedder dim must be >= 2")
        if not 0.0 <= self.within_group_noise <= 1.0:
            raise EmbeddingError("within_group_noise must be in [0, 1]")


def _unit_direction(seed: int, namespace: str, name: str, dim: int) -> np.ndarray:
    """Deterministic unit vector from a counter-based generator."""
    digest = hashlib.sha256(f"{seed}|{namespace}|{name}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    rng = np.random.Generator(np.random.Philox(key=key))
    v = rng.standard_normal(dim)
    n = np.linalg.norm(v)
    while n < 1e-12:  # never in practice; keeps the contract airtight
        v = rng.standard_normal(dim)
        n = np.linalg.norm(v)
    return v / n


def pseudo_embed(cfg: PseudoEmbedderConfig, key: str) -> np.ndarray:
    """Deterministic unit-norm vector for a key.

    Grouped keys are a convex mix of the group direction and a key-private
    direction, so within-group cosines are controllably high.
    """
    group = cfg.group_map.get(key) if cfg.group_map else None
    key_dir = _unit_direction(cfg.seed, "key", key, cfg.dim)
    if group is None:
        return key_dir
    group_dir = _unit_direction(cfg.seed, "group", group, cfg.dim)
    noise = cfg.within_group_noise
    v = (1.0 - noise) * group_dir + noise * key_dir
    n = np.linalg.norm(v)
    if n < 1e-12:
        return key_dir
    return v / n


def build_pseudo_store(cfg: PseudoEmbedderConfig, keys: Iterable[str]) -> EmbeddingStore:
    store = EmbeddingStore(dim=cfg.dim)
    for key in keys:
        store.insert(key, pseudo_embed(cfg, key))
    return store


def ingest_embeddings(path: str | Path) -> EmbeddingStore:
    """Read an embeddings.jsonl file, validating the uniform dimension."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise EmbeddingError(f"{path.name}: missing header line")
        header = json.loads(first)
        if "dim" not in header:
            raise EmbeddingError(f"{path.name}: header lacks 'dim'")
        store = EmbeddingStore(dim=int(header["dim"]))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            key = rec.get("key")
            vec = rec.get("vec")
            if key is None or vec is None:
                raise EmbeddingError(f"{path.name} line {lineno}: need 'key' and 'vec'")
            if len(vec) != store.dim:
                raise EmbeddingError(
                    f"{path.name} line {lineno}: key {key!r} has dim {len(vec)}, "
                    f"expected {store.dim}"
                )
            if key in store:
                raise EmbeddingError(f"{path.name} line {lineno}: duplicate key {key!r}")
            store.insert(key, vec)
    return store


def write_embeddings(
    path: str | Path, store: EmbeddingStore, extra_header: dict | None = None
) -> None:
    header = {"dim": store.dim}
    if extra_header:
        header.update(extra_header)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for key, vec in store.vectors.items():
            fh.write(json.dumps({"key": key, "vec": vec.tolist()}) + "\n")
