"""Domain types, category-vocabulary normalization, and dataset file I/O.

A dataset lives in a directory of three JSONL files:

* ``scenes.jsonl``  one scene per line: room id plus the ordered candidate
  objects (the stored order defines the candidate index every score vector
  and feature matrix aligns to),
* ``tracks.jsonl``  one pose track per line, keyed by ``ref_id``,
* ``events.jsonl``  one referring-expression event per line.

All floats are written as plain decimals and round-trip bit-exactly.
Loaded objects are immutable and safe to share across workers.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DatasetError, LabelError

log = logging.getLogger(__name__)

CHANNELS = ("r_arm", "l_arm", "head", "body")
REF_TYPES = ("exact_np", "pronominal", "partitive")
TIERS = ("T1", "T2", "T3", "T4", "T5")

DIRECTION_MIN_NORM = 1e-9

SCENES_FILE = "scenes.jsonl"
TRACKS_FILE = "tracks.jsonl"
EVENTS_FILE = "events.jsonl"


@dataclass(frozen=True)
class Vec3:
    """Point (meters) or direction (unitless) in room coordinates."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return float(np.sqrt(self.x * self.x + self.y * self.y + self.z * self.z))

    @classmethod
    def from_seq(cls, seq) -> "Vec3":
        if len(seq) != 3:
            raise DatasetError(f"expected 3-element vector, got {seq!r}")
        return cls(float(seq[0]), float(seq[1]), float(seq[2]))


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    centroid: Vec3
    raw_label: str
    category: str

    def __post_init__(self):
        if self.category != self.category.lower():
            raise DatasetError(
                f"object {self.object_id!r}: category {self.category!r} is not lowercase"
            )


@dataclass(frozen=True)
class Scene:
    """A room with its ordered candidate objects."""

    room_id: str
    objects: tuple[SceneObject, ...]

    def __post_init__(self):
        if len(self.objects) < 2:
            raise DatasetError(f"scene {self.room_id!r}: needs >= 2 objects")
        ids = [o.object_id for o in self.objects]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise DatasetError(f"scene {self.room_id!r}: duplicate object_id {dup!r}")

    def index_of(self, object_id: str) -> int:
        for n, obj in enumerate(self.objects):
            if obj.object_id == object_id:
                return n
        raise DatasetError(f"scene {self.room_id!r}: no object {object_id!r}")

    def centroid_matrix(self) -> np.ndarray:
        """Candidate centroids as an [N, 3] array in stored order."""
        return np.array([o.centroid.as_array() for o in self.objects], dtype=np.float64)


@dataclass(frozen=True)
class ChannelPose:
    direction: Vec3
    origin: Vec3


@dataclass(frozen=True)
class PoseFrame:
    """One frame of the four body channels (r_arm, l_arm, head, body)."""

    r_arm: ChannelPose
    l_arm: ChannelPose
    head: ChannelPose
    body: ChannelPose

    def channel(self, name: str) -> ChannelPose:
        return getattr(self, name)


@dataclass(frozen=True, eq=False)
class PoseTrack:
    """Per-frame channel rays, stored as [n_frames, 4, 3] arrays.

    The channel axis follows ``CHANNELS`` order. Arrays are float64 and
    must not be mutated after construction.
    """

    fps: float
    directions: np.ndarray
    origins: np.ndarray

    def __post_init__(self):
        if self.fps <= 0:
            raise DatasetError(f"track fps must be > 0, got {self.fps}")
        d, q = self.directions, self.origins
        if d.ndim != 3 or d.shape[1:] != (4, 3) or d.shape != q.shape:
            raise DatasetError(f"track arrays must be [n_frames, 4, 3], got {d.shape} / {q.shape}")
        if d.shape[0] < 1:
            raise DatasetError("track must have at least one frame")
        norms = np.linalg.norm(d, axis=-1)
        if np.any(norms <= DIRECTION_MIN_NORM):
            f, c = np.argwhere(norms <= DIRECTION_MIN_NORM)[0]
            raise DatasetError(
                f"degenerate direction at frame {f}, channel {CHANNELS[c]!r}"
            )

    @property
    def n_frames(self) -> int:
        return int(self.directions.shape[0])

    def frame(self, i: int) -> PoseFrame:
        poses = {
            name: ChannelPose(
                Vec3(*self.directions[i, c]), Vec3(*self.origins[i, c])
            )
            for c, name in enumerate(CHANNELS)
        }
        return PoseFrame(**poses)

    @classmethod
    def from_frames(cls, fps: float, frames: list[PoseFrame]) -> "PoseTrack":
        d = np.empty((len(frames), 4, 3), dtype=np.float64)
        q = np.empty((len(frames), 4, 3), dtype=np.float64)
        for i, fr in enumerate(frames):
            for c, name in enumerate(CHANNELS):
                pose = fr.channel(name)
                d[i, c] = pose.direction.as_array()
                q[i, c] = pose.origin.as_array()
        return cls(fps=fps, directions=d, origins=q)


@dataclass(frozen=True)
class ReferenceEvent:
    """One referring expression with its timing and ground-truth target."""

    ref_id: str
    room_id: str
    utterance_key: str
    phrase_start_s: float
    phrase_end_s: float
    hold_frame: int
    target_id: str
    ref_type: str
    tier: str

    def __post_init__(self):
        if self.phrase_start_s > self.phrase_end_s:
            raise DatasetError(f"event {self.ref_id!r}: phrase_start_s > phrase_end_s")
        if self.ref_type not in REF_TYPES:
            raise DatasetError(f"event {self.ref_id!r}: unknown ref_type {self.ref_type!r}")
        if self.tier not in TIERS:
            raise DatasetError(f"event {self.ref_id!r}: unknown tier {self.tier!r}")
        if self.hold_frame < 0:
            raise DatasetError(f"event {self.ref_id!r}: negative hold_frame")


@dataclass
class Dataset:
    """Scenes, tracks and events, cross-validated on construction."""

    scenes: dict[str, Scene]
    tracks: dict[str, PoseTrack]
    events: list[ReferenceEvent]

    def validate(self) -> None:
        seen: set[str] = set()
        for ev in self.events:
            if ev.ref_id in seen:
                raise DatasetError(f"duplicate ref_id {ev.ref_id!r}")
            seen.add(ev.ref_id)
            scene = self.scenes.get(ev.room_id)
            if scene is None:
                raise DatasetError(f"event {ev.ref_id!r}: unknown room {ev.room_id!r}")
            if ev.target_id not in {o.object_id for o in scene.objects}:
                raise DatasetError(
                    f"event {ev.ref_id!r}: target {ev.target_id!r} not in scene {ev.room_id!r}"
                )
            track = self.tracks.get(ev.ref_id)
            if track is None:
                raise DatasetError(f"event {ev.ref_id!r}: no pose track")
            if not 0 <= ev.hold_frame < track.n_frames:
                raise DatasetError(
                    f"event {ev.ref_id!r}: hold_frame {ev.hold_frame} outside "
                    f"[0, {track.n_frames})"
                )

    def rooms(self) -> list[str]:
        return sorted(self.scenes)


# --- category vocabulary ----------------------------------------------------

DEFAULT_MODIFIER_LEXICON = frozenset(
    {
        # colors
        "red", "green", "blue", "white", "black", "brown", "gray", "grey",
        "yellow", "orange", "purple", "pink", "beige",
        # materials
        "wood", "wooden", "metal", "metallic", "glass", "plastic", "leather",
        "ceramic", "fabric", "steel", "marble",
        # sizes
        "small", "big", "large", "tiny", "little", "huge", "tall", "short", "mini",
    }
)


@dataclass
class CategoryVocabulary:
    """Modifier lexicon plus the set of canonical categories seen so far."""

    modifier_lexicon: frozenset[str] = DEFAULT_MODIFIER_LEXICON
    canonical: set[str] = field(default_factory=set)

    def __post_init__(self):
        if any(w != w.lower() for w in self.modifier_lexicon):
            raise DatasetError("modifier lexicon must be lowercase")
        overlap = self.modifier_lexicon & self.canonical
        if overlap:
            raise DatasetError(f"lexicon and canonical set overlap: {sorted(overlap)}")


_CAMEL_RE = re.compile(r"[A-Z]+(?![a-z])|[A-Z][a-z]*|[a-z]+")


def normalize_category(raw_label: str, vocab: CategoryVocabulary) -> str:
    """Lowercase head noun of a raw scene-graph label.

    The label is split at case changes and non-alphabetic separators,
    lowercased, and stripped of modifier-lexicon tokens; the surviving
    tokens are joined with single spaces and recorded as canonical.
    Raises LabelError when nothing survives (caller decides the fallback).
    """
    if not raw_label:
        raise LabelError("empty label")
    tokens = [
        tok.lower()
        for run in re.findall(r"[A-Za-z]+", raw_label)
        for tok in _CAMEL_RE.findall(run)
    ]
    kept = [t for t in tokens if t not in vocab.modifier_lexicon]
    if not kept:
        raise LabelError(f"label reduced to empty: {raw_label!r}")
    name = " ".join(kept)
    vocab.canonical.add(name)
    return name


def normalize_or_fallback(raw_label: str, vocab: CategoryVocabulary) -> str:
    """normalize_category, falling back to the lowercase raw label.

    The fallback keeps the candidate set intact when a label is nothing
    but modifiers; it is not registered as canonical.
    """
    try:
        return normalize_category(raw_label, vocab)
    except LabelError:
        log.warning("label %r reduced to empty; keeping lowercase raw label", raw_label)
        return raw_label.lower()


# --- reference validation ---------------------------------------------------

def validate_reference(event, dataset, store, kernel=None) -> str | None:
    """Screen one event against the dataset and embedding store.

    Returns None when the event is usable, otherwise a machine-readable
    rejection code: missing_scene, missing_target, missing_track,
    missing_utterance, hold_frame_out_of_range, or empty_window.
    """
    # local import: affordance depends on these domain types
    from .affordance import KernelConfig, frame_window

    kernel = kernel if kernel is not None else KernelConfig()
    scene = dataset.scenes.get(event.room_id)
    if scene is None:
        return "missing_scene"
    if event.target_id not in {o.object_id for o in scene.objects}:
        return "missing_target"
    track = dataset.tracks.get(event.ref_id)
    if track is None:
        return "missing_track"
    if event.utterance_key not in store:
        return "missing_utterance"
    if not 0 <= event.hold_frame < track.n_frames:
        return "hold_frame_out_of_range"
    try:
        frame_window(event, track, "arm", kernel)
        frame_window(event, track, "head_body", kernel)
    except Exception:
        return "empty_window"
    return None


# --- JSONL I/O ----------------------------------------------------------------

def _read_jsonl(path: Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path.name} line {lineno}: invalid JSON ({exc})") from exc
            if not isinstance(obj, dict):
                raise DatasetError(f"{path.name} line {lineno}: expected an object")
            yield lineno, obj


def _require(obj: dict, key: str, where: str):
    if key not in obj:
        raise DatasetError(f"{where}: missing field {key!r}")
    return obj[key]


def _scene_from_json(obj: dict, where: str) -> Scene:
    objects = []
    for o in _require(obj, "objects", where):
        objects.append(
            SceneObject(
                object_id=str(_require(o, "object_id", where)),
                centroid=Vec3.from_seq(_require(o, "centroid", where)),
                raw_label=str(_require(o, "raw_label", where)),
                category=str(_require(o, "category", where)),
            )
        )
    return Scene(room_id=str(_require(obj, "room_id", where)), objects=tuple(objects))


def _track_from_json(obj: dict, where: str) -> tuple[str, PoseTrack]:
    ref_id = str(_require(obj, "ref_id", where))
    frames = _require(obj, "frames", where)
    if not frames:
        raise DatasetError(f"{where}: track has no frames")
    d = np.empty((len(frames), 4, 3), dtype=np.float64)
    q = np.empty((len(frames), 4, 3), dtype=np.float64)
    for i, fr in enumerate(frames):
        for c, name in enumerate(CHANNELS):
            ch = _require(fr, name, where)
            d[i, c] = _require(ch, "direction", where)
            q[i, c] = _require(ch, "origin", where)
    try:
        track = PoseTrack(fps=float(_require(obj, "fps", where)), directions=d, origins=q)
    except DatasetError as exc:
        raise DatasetError(f"{where}: {exc}") from exc
    return ref_id, track


def _event_from_json(obj: dict, where: str) -> ReferenceEvent:
    try:
        return ReferenceEvent(
            ref_id=str(_require(obj, "ref_id", where)),
            room_id=str(_require(obj, "room_id", where)),
            utterance_key=str(_require(obj, "utterance_key", where)),
            phrase_start_s=float(_require(obj, "phrase_start_s", where)),
            phrase_end_s=float(_require(obj, "phrase_end_s", where)),
            hold_frame=int(_require(obj, "hold_frame", where)),
            target_id=str(_require(obj, "target_id", where)),
            ref_type=str(_require(obj, "ref_type", where)),
            tier=str(_require(obj, "tier", where)),
        )
    except DatasetError as exc:
        raise DatasetError(f"{where}: {exc}") from exc


def load_dataset(path: str | Path) -> Dataset:
    """Load and validate a dataset directory."""
    root = Path(path)
    for name in (SCENES_FILE, TRACKS_FILE, EVENTS_FILE):
        if not (root / name).exists():
            raise DatasetError(f"missing dataset file: {root / name}")

    scenes: dict[str, Scene] = {}
    for lineno, obj in _read_jsonl(root / SCENES_FILE):
        where = f"{SCENES_FILE} line {lineno}"
        try:
            scene = _scene_from_json(obj, where)
        except DatasetError as exc:
            raise DatasetError(f"{where}: {exc}") from exc
        if scene.room_id in scenes:
            raise DatasetError(f"{where}: duplicate room_id {scene.room_id!r}")
        scenes[scene.room_id] = scene

    tracks: dict[str, PoseTrack] = {}
    for lineno, obj in _read_jsonl(root / TRACKS_FILE):
        where = f"{TRACKS_FILE} line {lineno}"
        ref_id, track = _track_from_json(obj, where)
        if ref_id in tracks:
            raise DatasetError(f"{where}: duplicate ref_id {ref_id!r}")
        tracks[ref_id] = track

    events: list[ReferenceEvent] = []
    seen: set[str] = set()
    for lineno, obj in _read_jsonl(root / EVENTS_FILE):
        where = f"{EVENTS_FILE} line {lineno}"
        ev = _event_from_json(obj, where)
        if ev.ref_id in seen:
            raise DatasetError(f"{where}: duplicate ref_id {ev.ref_id!r}")
        seen.add(ev.ref_id)
        events.append(ev)

    ds = Dataset(scenes=scenes, tracks=tracks, events=events)
    ds.validate()
    return ds


def _vec_list(a: np.ndarray) -> list[float]:
    return [float(a[0]), float(a[1]), float(a[2])]


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the three JSONL dataset files (floats round-trip bit-exactly)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)

    with open(root / SCENES_FILE, "w", encoding="utf-8") as fh:
        for scene in dataset.scenes.values():
            rec = {
                "room_id": scene.room_id,
                "objects": [
                    {
                        "object_id": o.object_id,
                        "centroid": [o.centroid.x, o.centroid.y, o.centroid.z],
                        "raw_label": o.raw_label,
                        "category": o.category,
                    }
                    for o in scene.objects
                ],
            }
            fh.write(json.dumps(rec) + "\n")

    with open(root / TRACKS_FILE, "w", encoding="utf-8") as fh:
        for ref_id, track in dataset.tracks.items():
            frames = [
                {
                    name: {
                        "direction": _vec_list(track.directions[i, c]),
                        "origin": _vec_list(track.origins[i, c]),
                    }
                    for c, name in enumerate(CHANNELS)
                }
                for i in range(track.n_frames)
            ]
            fh.write(json.dumps({"ref_id": ref_id, "fps": track.fps, "frames": frames}) + "\n")

    with open(root / EVENTS_FILE, "w", encoding="utf-8") as fh:
        for ev in dataset.events:
            rec = {
                "ref_id": ev.ref_id,
                "room_id": ev.room_id,
                "utterance_key": ev.utterance_key,
                "phrase_start_s": ev.phrase_start_s,
                "phrase_end_s": ev.phrase_end_s,
                "hold_frame": ev.hold_frame,
                "target_id": ev.target_id,
                "ref_type": ev.ref_type,
                "tier": ev.tier,
            }
            fh.write(json.dumps(rec) + "\n")
