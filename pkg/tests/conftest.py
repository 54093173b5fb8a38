"""Shared builders for small deterministic datasets and models."""

from __future__ import annotations

import numpy as np
import pytest

from poserefer.core import (
    ChannelPose,
    Dataset,
    PoseFrame,
    PoseTrack,
    ReferenceEvent,
    Scene,
    SceneObject,
    Vec3,
)
from poserefer.embeddings import EmbeddingStore
from poserefer.fusion import ModelConfig, FusionModel, Sample


def make_frame(directions: dict[str, tuple], origins: dict[str, tuple]) -> PoseFrame:
    poses = {
        name: ChannelPose(Vec3(*directions[name]), Vec3(*origins[name]))
        for name in ("r_arm", "l_arm", "head", "body")
    }
    return PoseFrame(**poses)


def make_uniform_frame(direction=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)) -> PoseFrame:
    d = {c: direction for c in ("r_arm", "l_arm", "head", "body")}
    q = {c: origin for c in ("r_arm", "l_arm", "head", "body")}
    return make_frame(d, q)


def make_scene(room_id: str, centroids, categories=None) -> Scene:
    categories = categories or [f"cat{i}" for i in range(len(centroids))]
    objects = tuple(
        SceneObject(
            object_id=f"{room_id}_o{i}",
            centroid=Vec3(*c),
            raw_label=cat.capitalize(),
            category=cat,
        )
        for i, (c, cat) in enumerate(zip(centroids, categories))
    )
    return Scene(room_id=room_id, objects=objects)


def make_track(n_frames=40, fps=30.0, direction=(1.0, 0.0, 0.0), origin=(0.0, 0.0, 0.0)):
    return PoseTrack.from_frames(fps, [make_uniform_frame(direction, origin)] * n_frames)


def make_event(ref_id="e0", room_id="r0", hold=20, start=0.5, end=1.0,
               target_id="r0_o0", ref_type="exact_np", tier="T1"):
    return ReferenceEvent(
        ref_id=ref_id,
        room_id=room_id,
        utterance_key=f"utt_{ref_id}",
        phrase_start_s=start,
        phrase_end_s=end,
        hold_frame=hold,
        target_id=target_id,
        ref_type=ref_type,
        tier=tier,
    )


@pytest.fixture
def tiny_dataset() -> Dataset:
    """Two rooms, a few objects each, one well-formed event per room."""
    s0 = make_scene("r0", [(2.0, 0.0, 0.0), (0.0, 2.0, 0.0), (0.0, 0.0, 2.0)])
    s1 = make_scene("r1", [(1.0, 1.0, 0.0), (3.0, 0.0, 1.0)])
    e0 = make_event(ref_id="e0", room_id="r0", target_id="r0_o0")
    e1 = make_event(ref_id="e1", room_id="r1", target_id="r1_o1", ref_type="pronominal",
                    tier="T4")
    ds = Dataset(
        scenes={"r0": s0, "r1": s1},
        tracks={"e0": make_track(), "e1": make_track()},
        events=[e0, e1],
    )
    ds.validate()
    return ds


@pytest.fixture
def tiny_store(tiny_dataset) -> EmbeddingStore:
    store = EmbeddingStore(dim=8)
    rng = np.random.default_rng(0)
    for ev in tiny_dataset.events:
        store.insert(ev.utterance_key, rng.standard_normal(8))
    for scene in tiny_dataset.scenes.values():
        for o in scene.objects:
            if o.category not in store:
                store.insert(o.category, rng.standard_normal(8))
    return store


def random_sample(rng, n_candidates=None, n_categories=7, emb_dim=12) -> Sample:
    n = n_candidates or int(rng.integers(2, 9))
    return Sample(
        ref_id="s",
        room_id="x",
        tier="T1",
        ref_type="exact_np",
        pose_features=rng.random((n, 6)),
        cat_ids=rng.integers(0, n_categories, size=n),
        utterance_vec=rng.standard_normal(emb_dim),
        target=int(rng.integers(n)),
    )


def small_model(rng_seed=1, n_categories=7, emb_dim=12, **config_kwargs) -> FusionModel:
    defaults = dict(hidden=16, text_emb_dim=emb_dim, cat_emb_dim=5, seed=0)
    defaults.update(config_kwargs)
    config = ModelConfig(**defaults)
    cats = [f"cat{i}" for i in range(n_categories)]
    frozen = None
    if config.needs_frozen_vectors():
        frozen = np.random.default_rng(99).standard_normal((n_categories, emb_dim))
    return FusionModel(config, cats, np.random.default_rng(rng_seed), frozen)
