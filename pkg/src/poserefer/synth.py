"""Synthetic rooms, pose tracks and references for desk-scale experiments.

The generator mirrors the statistical skeleton of a naturalistic
referential-gesture corpus: a handful of rooms with dozens of candidate
objects, a pointing regime where the dominant arm is aimed at the target
under angular noise, a non-pointing regime where arms are uninformative
and only head/body carry weak orientation cues, and a reference-type mix
in which only exact noun phrases put category information into the
utterance key (pronominal and partitive keys share type-level embedding
groups instead).

Directional noise is modeled as one persistent per-reference angular
offset per channel plus a small per-frame tremor, mimicking how people
hold an off-target aim rather than resampling it every frame; temporal
max pooling therefore cannot average the configured noise away.

Everything is a pure function of the config: regime and type counts are
allocated by largest remainder rather than sampled, and all randomness
flows from one seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    CategoryVocabulary,
    Dataset,
    PoseTrack,
    ReferenceEvent,
    Scene,
    SceneObject,
    Vec3,
    normalize_category,
)
from .errors import DatasetError

FPS = 30.0

CATEGORY_NAMES = (
    "armchair", "basket", "bed", "bench", "book", "bookshelf", "bottle", "bowl",
    "box", "cabinet", "candle", "chair", "clock", "coffee table", "couch", "cup",
    "curtain", "cushion", "desk", "dining table", "door", "drawer", "dresser",
    "floor lamp", "fork", "fridge", "kettle", "knife", "lamp", "laptop",
    "microwave", "mirror", "monitor", "mug", "nightstand", "ottoman", "painting",
    "pan", "phone", "pillow", "plant", "plate", "pot", "rug", "shelf", "sofa",
    "spoon", "stool", "vase", "window",
)

_MODIFIER_PREFIXES = ("Red", "Green", "Blue", "White", "Black", "Wood", "Metal",
                      "Glass", "Small", "Big", "Large", "Tiny")

# per-regime tier frequencies (pointing-like vs. weak/no pointing)
_POINTING_TIERS = (("T1", 0.65), ("T2", 0.27), ("T5", 0.08))
_NON_POINTING_TIERS = (("T3", 0.09), ("T4", 0.91))

# Channel noise is a persistent per-reference angular offset plus a small
# per-frame tremor; a persistent bias cannot be undone by max pooling,
# which is what makes the configured noise levels meaningful.
_WEAK_HEAD_FACTOR = 3.0   # non-pointing head offset, x head_noise_deg
_BODY_FACTOR = 1.5        # pointing body offset, x head_noise_deg
_WEAK_BODY_FACTOR = 3.5   # non-pointing body offset, x head_noise_deg
_REST_OFFSET_DEG = 15.0
_REST_JITTER_DEG = 5.0
_TREMOR_FRACTION = 0.25   # per-frame jitter as a fraction of the offset scale
_TREMOR_CAP_DEG = 3.0

PRONOMINAL_GROUP = "_pronominal"
PARTITIVE_GROUP = "_partitive"

ROOM_BOX = (6.0, 6.0, 2.5)
MIN_OBJECT_SPACING = 0.3
MIN_SPEAKER_TARGET_DIST = 1.0


@dataclass(frozen=True)
class SynthConfig:
    n_rooms: int = 5
    objects_per_room: tuple[int, int] = (42, 61)
    n_refs: int = 2000
    pointing_fraction: float = 0.55
    type_mix: dict = field(
        default_factory=lambda: {"exact_np": 0.38, "partitive": 0.14, "pronominal": 0.48}
    )
    arm_noise_deg: float = 8.0
    head_noise_deg: float = 20.0
    distractor_same_category_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.pointing_fraction <= 1.0:
            raise DatasetError("pointing_fraction must be in [0, 1]")
        if abs(sum(self.type_mix.values()) - 1.0) > 1e-9:
            raise DatasetError("type_mix must sum to 1")
        if not 0.0 <= self.distractor_same_category_prob <= 1.0:
            raise DatasetError("distractor_same_category_prob must be in [0, 1]")
        if self.n_rooms < 2:
            raise DatasetError("need at least 2 rooms for leave-one-room-out")


def _allocate(n: int, weights: list[float]) -> list[int]:
    """Largest-remainder allocation of n items over weights (ties by index)."""
    raw = [n * w for w in weights]
    counts = [int(math.floor(r)) for r in raw]
    remainder = n - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:remainder]:
        counts[i] += 1
    return counts


def _zipf_weights(n: int, s: float = 1.0) -> np.ndarray:
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def _round9(a: np.ndarray) -> np.ndarray:
    # keeps JSONL files compact; harmless at the 1e-9 geometry scale
    return np.round(a, 9)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise DatasetError("cannot normalize zero vector")
    return v / n


def _orthobasis(d: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    helper = np.array([0.0, 0.0, 1.0]) if abs(d[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = _unit(np.cross(d, helper))
    return e1, np.cross(d, e1)


def perturb_direction(d: np.ndarray, sigma_deg: float, rng: np.random.Generator) -> np.ndarray:
    """Rotate d by |N(0, sigma)| about a uniformly random orthogonal axis."""
    if sigma_deg <= 0.0:
        return d.copy()
    phi = abs(rng.normal(0.0, math.radians(sigma_deg)))
    psi = rng.uniform(0.0, 2.0 * math.pi)
    e1, e2 = _orthobasis(d)
    return math.cos(phi) * d + math.sin(phi) * (math.cos(psi) * e1 + math.sin(psi) * e2)


def _camel(category: str) -> str:
    return "".join(part.capitalize() for part in category.split())


def gen_scene(cfg: SynthConfig, room_index: int, rng: np.random.Generator) -> Scene:
    """Scene with Zipf-distributed categories and minimum object spacing."""
    room_id = f"room{room_index:02d}"
    lo, hi = cfg.objects_per_room
    n_objects = int(rng.integers(lo, hi + 1))
    weights = _zipf_weights(len(CATEGORY_NAMES))

    positions: list[np.ndarray] = []
    for i in range(n_objects):
        for _ in range(200):
            p = rng.uniform((0.0, 0.0, 0.0), ROOM_BOX)
            if all(np.linalg.norm(p - q) >= MIN_OBJECT_SPACING for q in positions):
                positions.append(p)
                break
        else:
            raise DatasetError(
                f"{room_id}: could not place object {i} with spacing {MIN_OBJECT_SPACING}"
            )

    vocab = CategoryVocabulary()
    objects = []
    cat_ids = rng.choice(len(CATEGORY_NAMES), size=n_objects, p=weights)
    for i, (pos, cid) in enumerate(zip(positions, cat_ids)):
        category = CATEGORY_NAMES[cid]
        raw = _camel(category)
        if rng.random() < 0.5:
            raw = str(rng.choice(_MODIFIER_PREFIXES)) + raw
        assert normalize_category(raw, vocab) == category
        objects.append(
            SceneObject(
                object_id=f"{room_id}_obj{i:03d}",
                centroid=Vec3(*_round9(pos)),
                raw_label=raw,
                category=category,
            )
        )
    return Scene(room_id=room_id, objects=tuple(objects))


def _pick_target(cfg: SynthConfig, scene: Scene, rng: np.random.Generator) -> SceneObject:
    """Prefer targets with (or without) same-category distractors per config."""
    counts: dict[str, int] = {}
    for o in scene.objects:
        counts[o.category] = counts.get(o.category, 0) + 1
    shared = [o for o in scene.objects if counts[o.category] >= 2]
    unique = [o for o in scene.objects if counts[o.category] == 1]
    want_shared = rng.random() < cfg.distractor_same_category_prob
    pool = shared if (want_shared and shared) else (unique if unique else shared)
    return pool[int(rng.integers(len(pool)))]


def _sample_tier(pairs, rng: np.random.Generator) -> str:
    names = [t for t, _ in pairs]
    probs = [p for _, p in pairs]
    return names[int(rng.choice(len(names), p=probs))]


def gen_reference(
    cfg: SynthConfig,
    scene: Scene,
    regime: str,
    ref_type: str,
    ref_id: str,
    rng: np.random.Generator,
) -> tuple[PoseTrack, ReferenceEvent, str]:
    """One reference: a pose track, its event, and the utterance key."""
    if regime not in ("pointing", "non_pointing"):
        raise DatasetError(f"unknown regime {regime!r}")
    target = _pick_target(cfg, scene, rng)
    p_target = target.centroid.as_array()

    # speaker placement: pelvis at standing height, >= 1 m from the target
    for _ in range(200):
        pelvis = np.array([rng.uniform(0.5, 5.5), rng.uniform(0.5, 5.5), 0.95])
        if np.linalg.norm(pelvis - p_target) >= MIN_SPEAKER_TARGET_DIST:
            break
    else:
        raise DatasetError(f"{ref_id}: could not place speaker away from target")

    facing_h = p_target - pelvis
    facing_h[2] = 0.0
    facing = _unit(facing_h) if np.linalg.norm(facing_h) > 1e-9 else np.array([1.0, 0.0, 0.0])
    right = _unit(np.cross(facing, np.array([0.0, 0.0, 1.0])))
    eye = pelvis + 0.05 * facing + np.array([0.0, 0.0, 0.65])

    tier = _sample_tier(
        _POINTING_TIERS if regime == "pointing" else _NON_POINTING_TIERS, rng
    )
    both_arms = tier == "T5"
    dominant = "r_arm" if (both_arms or rng.random() < 0.9) else "l_arm"

    def wrist(side: str, pointing: bool) -> np.ndarray:
        lat = right if side == "r_arm" else -right
        if pointing:
            return pelvis + 0.25 * lat + 0.15 * facing + np.array([0.0, 0.0, 0.40])
        return pelvis + 0.25 * lat + 0.02 * facing + np.array([0.0, 0.0, -0.10])

    phrase_start = rng.uniform(0.6, 1.2)
    phrase_end = phrase_start + rng.uniform(1.0, 3.0)
    n_frames = int(math.ceil((phrase_end + 0.5) * FPS)) + 2
    hold = int(round(0.5 * (phrase_start + phrase_end) * FPS))
    hold = min(max(hold, 0), n_frames - 1)

    arm_points = {
        "r_arm": regime == "pointing" and (both_arms or dominant == "r_arm"),
        "l_arm": regime == "pointing" and (both_arms or dominant == "l_arm"),
    }
    origins_static = {}
    aimed_dirs = {}   # per-reference persistent direction (base + offset)
    tremor = {}       # small per-frame jitter around it
    for side in ("r_arm", "l_arm"):
        q = wrist(side, arm_points[side])
        origins_static[side] = q
        if arm_points[side]:
            base = _unit(p_target - q)
            aimed_dirs[side] = perturb_direction(base, cfg.arm_noise_deg, rng)
            tremor[side] = min(_TREMOR_CAP_DEG, _TREMOR_FRACTION * cfg.arm_noise_deg)
        elif regime == "pointing":
            # resting arm hangs relative to the body
            lat = right if side == "r_arm" else -right
            base = _unit(0.2 * lat + 0.05 * facing + np.array([0.0, 0.0, -1.0]))
            aimed_dirs[side] = perturb_direction(base, _REST_OFFSET_DEG, rng)
            tremor[side] = _REST_JITTER_DEG
        else:
            # target-independent random rest direction
            az = rng.uniform(0.0, 2.0 * math.pi)
            spread = rng.uniform(0.0, 0.8)
            aimed_dirs[side] = _unit(
                np.array([math.cos(az) * spread, math.sin(az) * spread, -1.0])
            )
            tremor[side] = _REST_JITTER_DEG
    origins_static["head"] = eye
    origins_static["body"] = pelvis
    if regime == "pointing":
        head_noise, body_noise = cfg.head_noise_deg, _BODY_FACTOR * cfg.head_noise_deg
    else:
        head_noise = _WEAK_HEAD_FACTOR * cfg.head_noise_deg
        body_noise = _WEAK_BODY_FACTOR * cfg.head_noise_deg
    aimed_dirs["head"] = perturb_direction(_unit(p_target - eye), head_noise, rng)
    tremor["head"] = min(_TREMOR_CAP_DEG, _TREMOR_FRACTION * head_noise)
    aimed_dirs["body"] = perturb_direction(facing, body_noise, rng)
    tremor["body"] = min(_TREMOR_CAP_DEG, _TREMOR_FRACTION * body_noise)

    channel_order = ("r_arm", "l_arm", "head", "body")
    directions = np.empty((n_frames, 4, 3))
    origins = np.empty((n_frames, 4, 3))
    for f in range(n_frames):
        for c, name in enumerate(channel_order):
            directions[f, c] = perturb_direction(aimed_dirs[name], tremor[name], rng)
            origins[f, c] = origins_static[name]
    track = PoseTrack(fps=FPS, directions=_round9(directions), origins=_round9(origins))

    event = ReferenceEvent(
        ref_id=ref_id,
        room_id=scene.room_id,
        utterance_key=f"utt_{ref_id}",
        phrase_start_s=float(round(phrase_start, 9)),
        phrase_end_s=float(round(phrase_end, 9)),
        hold_frame=hold,
        target_id=target.object_id,
        ref_type=ref_type,
        tier=tier,
    )
    return track, event, event.utterance_key


def utterance_group(ref_type: str, target_category: str) -> str:
    """Pseudo-embedding group for an utterance key.

    Exact noun phrases join the target's category group; pronominal and
    partitive keys share category-agnostic type groups.
    """
    if ref_type == "exact_np":
        return target_category
    return PRONOMINAL_GROUP if ref_type == "pronominal" else PARTITIVE_GROUP


def gen_dataset(cfg: SynthConfig) -> tuple[Dataset, dict]:
    """Dataset plus the embedding-key manifest (keys, groups, categories)."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed]))
    scenes = {
        scene.room_id: scene
        for scene in (gen_scene(cfg, i, rng) for i in range(cfg.n_rooms))
    }
    room_ids = sorted(scenes)

    per_room = _allocate(cfg.n_refs, [1.0 / cfg.n_rooms] * cfg.n_rooms)
    type_names = list(cfg.type_mix)
    type_weights = [cfg.type_mix[t] for t in type_names]

    tracks: dict[str, PoseTrack] = {}
    events: list[ReferenceEvent] = []
    group_map: dict[str, str] = {}
    ref_counter = 0
    for room_id, n_room in zip(room_ids, per_room):
        scene = scenes[room_id]
        n_pointing = _allocate(n_room, [cfg.pointing_fraction, 1.0 - cfg.pointing_fraction])[0]
        cells: list[tuple[str, str]] = []
        for regime, n_regime in (("pointing", n_pointing), ("non_pointing", n_room - n_pointing)):
            for t, n_t in zip(type_names, _allocate(n_regime, type_weights)):
                cells.extend([(regime, t)] * n_t)
        order = rng.permutation(len(cells))
        for k in order:
            regime, ref_type = cells[k]
            ref_id = f"{room_id}_ref{ref_counter:05d}"
            ref_counter += 1
            track, event, key = gen_reference(cfg, scene, regime, ref_type, ref_id, rng)
            tracks[ref_id] = track
            events.append(event)
            target_cat = next(
                o.category for o in scene.objects if o.object_id == event.target_id
            )
            group_map[key] = utterance_group(ref_type, target_cat)

    dataset = Dataset(scenes=scenes, tracks=tracks, events=events)
    dataset.validate()
    categories = sorted({o.category for s in scenes.values() for o in s.objects})
    manifest = {
        "utterance_keys": [ev.utterance_key for ev in events],
        "group_map": group_map,
        "categories": categories,
    }
    return dataset, manifest
