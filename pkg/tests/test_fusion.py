import math

import numpy as np
import pytest

from poserefer.errors import DatasetError
from poserefer.fusion import (
    CONFIG_NAMES,
    FusionModel,
    ModelConfig,
    Sample,
    TrainerConfig,
    combine,
    fold_streams,
    fuse,
    named_config,
    pack,
    pose_pathway,
    predict,
    rank_of_target,
    score_ranking,
    text_pathway,
    train_fold,
)
from poserefer.neural import ScheduleConfig, grad_check, znorm

from conftest import random_sample, small_model


# --- config --------------------------------------------------------------------------

def test_config_requires_a_pathway():
    with pytest.raises(DatasetError):
        ModelConfig(use_pose=False, use_text=False)


def test_named_configs_cover_matrix():
    for name in CONFIG_NAMES:
        cfg = named_config(name, text_emb_dim=16)
        assert cfg.use_pose or cfg.use_text
    assert named_config("PT_minilm", text_emb_dim=16).text_cat == "frozen_semantic"
    assert named_config("PT_minilm", text_emb_dim=16).pose_cat == "learned16"
    assert named_config("PT_minilm_both", text_emb_dim=16).pose_cat == "frozen_semantic"
    with pytest.raises(DatasetError):
        named_config("nope", text_emb_dim=16)


def test_frozen_mode_requires_vectors():
    cfg = ModelConfig(text_cat="frozen_semantic", hidden=8, text_emb_dim=4)
    with pytest.raises(DatasetError, match="frozen_semantic"):
        FusionModel(cfg, ["a", "b"], np.random.default_rng(0), None)


# --- hand-computed forward -------------------------------------------------------------

def _set_all(layer, w, b=None):
    layer.W.value[...] = w
    if layer.b is not None:
        layer.b.value[...] = 0.0 if b is None else b


def test_pose_pathway_matches_hand_computation():
    model = small_model(hidden=2, cat_emb_dim=1, emb_dim=2,
                        use_pose=True, use_text=True,
                        pose_cat="learned16", text_cat="learned16", dropout=0.0)
    for layer, w in ((model.pose_enc1, 0.1), (model.pose_enc2, 0.2),
                     (model.pose_sc1, 0.3)):
        _set_all(layer, w)
    _set_all(model.pose_sc2, 0.5, b=0.1)
    model.E_pose.rows.value[...] = np.arange(7)[:, None] * 0.05

    feats = np.array([[1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                      [0.2, 0.4, 0.1, 0.0, 0.3, 0.9],
                      [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]])
    sample = Sample(ref_id="s", room_id="r", tier="T1", ref_type="exact_np",
                    pose_features=feats, cat_ids=np.array([0, 3, 5]),
                    utterance_vec=np.zeros(2), target=0)

    got = pose_pathway(model, sample)

    expected = []
    for n in range(3):
        x = list(feats[n]) + [0.05 * sample.cat_ids[n]]
        h1 = [max(0.0, sum(0.1 * v for v in x)) for _ in range(2)]
        h2 = [max(0.0, sum(0.2 * v for v in h1)) for _ in range(2)]
        g1 = [max(0.0, sum(0.3 * v for v in h2)) for _ in range(2)]
        expected.append(sum(0.5 * v for v in g1) + 0.1)
    assert np.max(np.abs(got - np.array(expected))) < 1e-12


def test_text_pathway_matches_hand_computation():
    model = small_model(hidden=2, cat_emb_dim=1, emb_dim=2,
                        use_pose=False, use_text=True, text_cat="learned16", dropout=0.0)
    _set_all(model.text_proj, 0.4, b=0.2)
    _set_all(model.text_sc1, 0.3)
    _set_all(model.text_sc2, 0.7, b=-0.05)
    model.E_text.rows.value[...] = np.arange(7)[:, None] * 0.1

    sample = Sample(ref_id="s", room_id="r", tier="T1", ref_type="exact_np",
                    pose_features=np.zeros((2, 6)), cat_ids=np.array([2, 6]),
                    utterance_vec=np.array([1.0, -0.5]), target=0)
    got = text_pathway(model, sample)

    u = [0.4 * (1.0 - 0.5) + 0.2] * 2
    expected = []
    for cid in (2, 6):
        x = u + [0.1 * cid]
        h = [max(0.0, sum(0.3 * v for v in x)) for _ in range(2)]
        expected.append(sum(0.7 * v for v in h) - 0.05)
    assert np.max(np.abs(got - np.array(expected))) < 1e-12


# --- architectural invariants -----------------------------------------------------------

def test_identical_rows_get_equal_scores():
    model = small_model(use_pose=True, use_text=False, pose_cat="learned16")
    feats = np.tile(np.array([0.5, 0.1, 0.2, 0.0, 0.9, 0.3]), (4, 1))
    sample = Sample(ref_id="s", room_id="r", tier="T1", ref_type="exact_np",
                    pose_features=feats, cat_ids=np.full(4, 2),
                    utterance_vec=np.zeros(12), target=0)
    scores = pose_pathway(model, sample)
    assert np.all(scores == scores[0])


def test_decoupling_is_bit_exact():
    rng = np.random.default_rng(0)
    model = small_model(use_pose=True, use_text=True,
                        pose_cat="learned16", text_cat="learned16")
    sample = random_sample(np.random.default_rng(1))
    pose_before = pose_pathway(model, sample)
    # scribble over the text pathway's parameters: pose must not move
    for layer in (model.text_proj, model.text_sc1, model.text_sc2):
        layer.W.value[...] = rng.standard_normal(layer.W.value.shape)
    model.E_text.rows.value[...] = rng.standard_normal(model.E_text.rows.value.shape)
    assert np.array_equal(pose_pathway(model, sample), pose_before)
    # and symmetrically for the pose side
    text_before = text_pathway(model, sample)
    for layer in (model.pose_enc1, model.pose_enc2, model.pose_sc1, model.pose_sc2):
        layer.W.value[...] = rng.standard_normal(layer.W.value.shape)
    model.E_pose.rows.value[...] = rng.standard_normal(model.E_pose.rows.value.shape)
    assert np.array_equal(text_pathway(model, sample), text_before)


def test_text_without_category_is_constant_across_candidates():
    model = small_model(use_pose=False, use_text=True, text_cat="none")
    sample = random_sample(np.random.default_rng(2), n_candidates=8)
    scores = text_pathway(model, sample)
    assert np.ptp(scores) == 0.0  # variance exactly zero before znorm


def test_same_category_objects_get_equal_text_scores():
    model = small_model(use_pose=False, use_text=True, text_cat="learned16")
    sample = random_sample(np.random.default_rng(3), n_candidates=6)
    sample.cat_ids[:] = np.array([1, 4, 1, 2, 4, 1])
    scores = text_pathway(model, sample)
    for cid in (1, 2, 4):
        vals = scores[sample.cat_ids == cid]
        assert np.all(vals == vals[0])


def test_frozen_vector_perturbation_is_local():
    model = small_model(use_pose=False, use_text=True, text_cat="frozen_semantic")
    sample = random_sample(np.random.default_rng(4), n_candidates=7)
    sample.cat_ids[:] = np.array([0, 1, 2, 3, 0, 1, 2])
    before = text_pathway(model, sample)
    model.E_text.rows.value[2] += 0.5
    after = text_pathway(model, sample)
    changed = sample.cat_ids == 2
    assert np.array_equal(after[~changed], before[~changed])
    assert not np.allclose(after[changed], before[changed])


# --- fuse -------------------------------------------------------------------------------

def test_fuse_at_zero_gate_averages():
    rng = np.random.default_rng(5)
    p, t = rng.standard_normal(6), rng.standard_normal(6)
    fused = fuse(p, t, gate_w=0.0)
    assert np.allclose(fused, 0.5 * (znorm(p) + znorm(t)), atol=1e-12)


def test_fuse_large_gate_follows_pose():
    rng = np.random.default_rng(6)
    p, t = rng.standard_normal(8), rng.standard_normal(8)
    fused = fuse(p, t, gate_w=40.0)
    assert np.argmax(fused) == np.argmax(p)


def test_fuse_constant_text_follows_pose_for_any_alpha():
    rng = np.random.default_rng(7)
    p = rng.standard_normal(8)
    zt = np.zeros(8)  # text after the znorm epsilon path
    for alpha in (0.05, 0.3, 0.9):
        assert np.argmax(combine(znorm(p), zt, alpha)) == np.argmax(p)


def test_alpha_in_open_unit_interval_and_monotone():
    model_w = np.linspace(-30, 30, 101)
    alphas = [1.0 / (1.0 + math.exp(-w)) for w in model_w]
    assert all(0.0 < a < 1.0 for a in alphas)
    assert all(b > a for a, b in zip(alphas, alphas[1:]))


def test_alpha_one_reduces_to_pose_argmax():
    rng = np.random.default_rng(8)
    for _ in range(20):
        p, t = rng.standard_normal(9), rng.standard_normal(9)
        assert np.argmax(combine(znorm(p), znorm(t), 1.0)) == np.argmax(p)


def test_fused_model_matches_fuse_helper():
    model = small_model(use_pose=True, use_text=True,
                        pose_cat="learned16", text_cat="learned16")
    sample = random_sample(np.random.default_rng(9))
    model.gate.value[0] = 0.37
    fused = model.sample_scores(sample)
    by_parts = fuse(pose_pathway(model, sample), text_pathway(model, sample), 0.37)
    assert np.allclose(fused, by_parts, atol=1e-12)


# --- predict / ranking --------------------------------------------------------------------

def test_ranking_injected_scores():
    assert score_ranking(np.array([0.1, 0.9, 0.5])).tolist() == [1, 2, 0]


def test_ranking_all_equal_is_identity():
    assert score_ranking(np.zeros(5)).tolist() == [0, 1, 2, 3, 4]


def test_predict_and_rank(tiny_sample_model=None):
    model = small_model(use_pose=True, use_text=False)
    sample = random_sample(np.random.default_rng(10), n_candidates=5)
    ranking = predict(model, sample)
    assert sorted(ranking.tolist()) == [0, 1, 2, 3, 4]
    rank = rank_of_target(model, sample)
    assert ranking[rank - 1] == sample.target


def test_permutation_equivariance():
    rng = np.random.default_rng(11)
    model = small_model(use_pose=True, use_text=True,
                        pose_cat="learned16", text_cat="learned16")
    model.gate.value[0] = -0.4
    for _ in range(20):
        sample = random_sample(rng)
        n = sample.n_candidates
        perm = rng.permutation(n)
        permuted = Sample(
            ref_id=sample.ref_id, room_id=sample.room_id, tier=sample.tier,
            ref_type=sample.ref_type,
            pose_features=sample.pose_features[perm],
            cat_ids=sample.cat_ids[perm],
            utterance_vec=sample.utterance_vec,
            target=int(np.nonzero(perm == sample.target)[0][0]),
        )
        s0 = model.sample_scores(sample)
        s1 = model.sample_scores(permuted)
        assert np.allclose(s1, s0[perm], atol=1e-9)
        assert rank_of_target(model, sample) == rank_of_target(model, permuted)


# --- gradients through the full model ------------------------------------------------------

def test_full_model_gradient_check_including_gate():
    model = small_model(use_pose=True, use_text=True,
                        pose_cat="learned16", text_cat="learned16")
    model.gate.value[0] = 0.3
    rng = np.random.default_rng(12)
    batch = pack([random_sample(rng) for _ in range(4)])

    def loss_fn():
        model.zero_grad()
        return model.loss_and_grads(batch, train=False)

    err = grad_check(loss_fn, model.parameters(), np.random.default_rng(13), num_coords=80)
    assert err < 1e-4


def test_frozen_table_untouched_by_training():
    samples = [random_sample(np.random.default_rng(s)) for s in range(8)]
    cfg = dict(use_pose=True, use_text=True, pose_cat="learned16",
               text_cat="frozen_semantic")
    model_probe = small_model(**cfg)
    frozen_before = model_probe.E_text.rows.value.copy()
    categories = [f"cat{i}" for i in range(7)]
    result = train_fold(
        samples,
        model_probe.config,
        ScheduleConfig(total_epochs=3),
        TrainerConfig(batch_size=4),
        fold_index=0,
        test_room="x",
        categories=categories,
        frozen_category_vectors=frozen_before,
    )
    assert np.array_equal(result.model.E_text.rows.value, frozen_before)


# --- training behavior -------------------------------------------------------------------

def _separable_sample(rng) -> Sample:
    # target's features dominate every other candidate
    n = 6
    feats = rng.uniform(0.0, 0.2, size=(n, 6))
    target = int(rng.integers(n))
    feats[target] = rng.uniform(0.8, 1.0, size=6)
    return Sample(ref_id="s", room_id="r", tier="T1", ref_type="exact_np",
                  pose_features=feats, cat_ids=rng.integers(0, 7, size=n),
                  utterance_vec=rng.standard_normal(12), target=target)


def test_training_loss_decreases_on_separable_sample():
    sample = _separable_sample(np.random.default_rng(14))
    config = ModelConfig(use_pose=True, use_text=False, hidden=16, text_emb_dim=12,
                         dropout=0.0, seed=0)
    result = train_fold([sample], config, ScheduleConfig(total_epochs=10),
                        TrainerConfig(batch_size=1), 0, "x",
                        [f"cat{i}" for i in range(7)])
    losses = result.loss_trace
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_training_is_seed_reproducible():
    samples = [random_sample(np.random.default_rng(s)) for s in range(6)]
    config = ModelConfig(use_pose=True, use_text=True, hidden=8, text_emb_dim=12, seed=5)
    kwargs = dict(schedule=ScheduleConfig(total_epochs=3), trainer=TrainerConfig(batch_size=2),
                  fold_index=1, test_room="x", categories=[f"cat{i}" for i in range(7)])
    r1 = train_fold(samples, config, kwargs["schedule"], kwargs["trainer"], 1, "x",
                    kwargs["categories"])
    r2 = train_fold(samples, config, kwargs["schedule"], kwargs["trainer"], 1, "x",
                    kwargs["categories"])
    for p1, p2 in zip(r1.model.parameters(), r2.model.parameters()):
        assert np.array_equal(p1.value, p2.value)
    assert r1.alpha_trace == r2.alpha_trace

    config3 = ModelConfig(use_pose=True, use_text=True, hidden=8, text_emb_dim=12, seed=6)
    r3 = train_fold(samples, config3, kwargs["schedule"], kwargs["trainer"], 1, "x",
                    kwargs["categories"])
    assert any(
        not np.array_equal(p1.value, p3.value)
        for p1, p3 in zip(r1.model.parameters(), r3.model.parameters())
    )


def test_alpha_trace_recorded_per_epoch():
    samples = [random_sample(np.random.default_rng(s)) for s in range(4)]
    config = ModelConfig(use_pose=True, use_text=True, hidden=8, text_emb_dim=12, seed=0)
    result = train_fold(samples, config, ScheduleConfig(total_epochs=4),
                        TrainerConfig(batch_size=2), 0, "x",
                        [f"cat{i}" for i in range(7)])
    assert len(result.alpha_trace) == 4
    assert all(0.0 < a < 1.0 for a in result.alpha_trace)
    assert result.alpha_final == result.alpha_trace[-1]


def test_singleton_has_no_alpha():
    samples = [random_sample(np.random.default_rng(s)) for s in range(4)]
    config = ModelConfig(use_pose=True, use_text=False, hidden=8, text_emb_dim=12, seed=0)
    result = train_fold(samples, config, ScheduleConfig(total_epochs=2),
                        TrainerConfig(batch_size=2), 0, "x",
                        [f"cat{i}" for i in range(7)])
    assert result.alpha_trace == []
    assert result.alpha_final is None


def test_fold_streams_are_stable():
    a1, b1, c1 = fold_streams(3, 2)
    a2, b2, c2 = fold_streams(3, 2)
    assert a1.random() == a2.random()
    assert b1.random() == b2.random()
    assert c1.random() == c2.random()
    d1, _, _ = fold_streams(3, 1)
    assert d1.random() != a1.random()
