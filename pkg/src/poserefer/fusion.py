"""Decoupled two-pathway scoring with a learned scalar fusion gate.

The pose pathway encodes per-object angular features (optionally
concatenated with a pose-local category embedding) and scores each
candidate; the text pathway projects the utterance embedding, broadcasts
it across candidates, concatenates a text-local category embedding when
enabled, and scores. The pathways share no parameters. Under fusion, each
score vector is z-normalized per sample and combined as

    s = alpha * z_pose + (1 - alpha) * z_text,   alpha = sigmoid(w),

with w a single learned scalar initialized to 0. Single-pathway
configurations skip normalization and use raw pathway scores.

Training batches are ragged: each reference keeps its own candidate set.
Batches are packed into one [T, d] matrix (T = total candidates) with an
offsets array, so every layer runs as a single matrix product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .affordance import POSE_FEATURE_NAMES
from .core import Dataset
from .embeddings import EmbeddingStore
from .errors import DatasetError, TrainingError
from .neural import (
    ACTIVATIONS,
    AdamW,
    AffineLayer,
    EmbeddingTable,
    Parameter,
    ScheduleConfig,
    cosine_lr,
    dropout_mask,
    relu_dropout_mask,
    softmax_ce_segments,
    znorm,
    znorm_segments,
    znorm_segments_backward,
)

CAT_NONE = "none"
CAT_LEARNED = "learned16"
CAT_FROZEN = "frozen_semantic"

CONFIG_NAMES = (
    "P", "P_cat", "T", "T_minilm", "PT_nocat", "PT", "PT_minilm", "PT_minilm_both",
)

# (use_pose, use_text, pose_cat, text_cat) per named ablation row
_PRESETS = {
    "P": (True, False, CAT_NONE, CAT_NONE),
    "P_cat": (True, False, CAT_LEARNED, CAT_NONE),
    "T": (False, True, CAT_NONE, CAT_LEARNED),
    "T_minilm": (False, True, CAT_NONE, CAT_FROZEN),
    "PT_nocat": (True, True, CAT_NONE, CAT_NONE),
    "PT": (True, True, CAT_LEARNED, CAT_LEARNED),
    "PT_minilm": (True, True, CAT_LEARNED, CAT_FROZEN),
    "PT_minilm_both": (True, True, CAT_FROZEN, CAT_FROZEN),
}

# seed-stream components, split per fold
_STREAM_INIT, _STREAM_SHUFFLE, _STREAM_DROPOUT = 0, 1, 2


@dataclass(frozen=True)
class ModelConfig:
    use_pose: bool = True
    use_text: bool = True
    pose_cat: str = CAT_NONE
    text_cat: str = CAT_NONE
    hidden: int = 128
    pose_feat_dim: int = 6
    text_emb_dim: int = 384
    cat_emb_dim: int = 16
    dropout: float = 0.3
    activation: str = "relu"
    projector_bias: bool = True
    dropout_on_projector: bool = True
    znorm_through_stats: bool = True
    seed: int = 0

    def __post_init__(self):
        if not (self.use_pose or self.use_text):
            raise DatasetError("at least one pathway must be enabled")
        for side, cat in (("pose_cat", self.pose_cat), ("text_cat", self.text_cat)):
            if cat not in (CAT_NONE, CAT_LEARNED, CAT_FROZEN):
                raise DatasetError(f"unknown {side} {cat!r}")
        if self.activation not in ACTIVATIONS:
            raise DatasetError(f"unknown activation {self.activation!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise DatasetError("dropout must be in [0, 1)")
        if self.seed < 0:
            raise DatasetError("seed must be non-negative")

    @property
    def fused(self) -> bool:
        return self.use_pose and self.use_text

    def needs_frozen_vectors(self) -> bool:
        return CAT_FROZEN in (self.pose_cat, self.text_cat)


def named_config(name: str, text_emb_dim: int, seed: int = 0, **overrides) -> ModelConfig:
    """ModelConfig for one of the named ablation rows."""
    if name not in _PRESETS:
        raise DatasetError(f"unknown config name {name!r} (choose from {CONFIG_NAMES})")
    use_pose, use_text, pose_cat, text_cat = _PRESETS[name]
    return ModelConfig(
        use_pose=use_pose,
        use_text=use_text,
        pose_cat=pose_cat,
        text_cat=text_cat,
        text_emb_dim=text_emb_dim,
        seed=seed,
        **overrides,
    )


# --- samples ---------------------------------------------------------------------

@dataclass(eq=False)
class Sample:
    """One reference with its candidate features and metadata."""

    ref_id: str
    room_id: str
    tier: str
    ref_type: str
    pose_features: np.ndarray  # [N, 6]
    cat_ids: np.ndarray        # [N] int64
    utterance_vec: np.ndarray  # [text_emb_dim]
    target: int

    @property
    def n_candidates(self) -> int:
        return int(self.pose_features.shape[0])


def category_index(dataset: Dataset) -> dict[str, int]:
    """Stable id per canonical category across all scenes (sorted order)."""
    cats = sorted({o.category for scene in dataset.scenes.values() for o in scene.objects})
    return {c: i for i, c in enumerate(cats)}


def frozen_category_matrix(store: EmbeddingStore, categories: list[str]) -> np.ndarray:
    """Per-category frozen vectors in category-id order."""
    return np.stack([store.lookup(c) for c in categories])


def build_samples(
    dataset: Dataset,
    store: EmbeddingStore,
    features: dict[str, np.ndarray],
    cat_to_id: dict[str, int] | None = None,
) -> list[Sample]:
    cat_to_id = cat_to_id if cat_to_id is not None else category_index(dataset)
    samples = []
    for ev in dataset.events:
        scene = dataset.scenes[ev.room_id]
        feats = features.get(ev.ref_id)
        if feats is None:
            raise DatasetError(f"no features for ref {ev.ref_id!r}")
        if feats.shape != (len(scene.objects), len(POSE_FEATURE_NAMES)):
            raise DatasetError(
                f"ref {ev.ref_id!r}: features shape {feats.shape} does not match "
                f"scene {ev.room_id!r} with {len(scene.objects)} objects"
            )
        samples.append(
            Sample(
                ref_id=ev.ref_id,
                room_id=ev.room_id,
                tier=ev.tier,
                ref_type=ev.ref_type,
                pose_features=np.ascontiguousarray(feats, dtype=np.float64),
                cat_ids=np.array([cat_to_id[o.category] for o in scene.objects], dtype=np.int64),
                utterance_vec=np.asarray(store.lookup(ev.utterance_key), dtype=np.float64),
                target=scene.index_of(ev.target_id),
            )
        )
    return samples


@dataclass(eq=False)
class PackedBatch:
    feats: np.ndarray      # [T, 6]
    cat_ids: np.ndarray    # [T]
    utt: np.ndarray        # [B, E]
    counts: np.ndarray     # [B]
    offsets: np.ndarray    # [B+1]
    targets: np.ndarray    # [B] global indices into the packed axis

    @property
    def n_samples(self) -> int:
        return int(self.counts.shape[0])


def pack(samples: list[Sample]) -> PackedBatch:
    counts = np.array([s.n_candidates for s in samples], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return PackedBatch(
        feats=np.concatenate([s.pose_features for s in samples], axis=0),
        cat_ids=np.concatenate([s.cat_ids for s in samples]),
        utt=np.stack([s.utterance_vec for s in samples]),
        counts=counts,
        offsets=offsets,
        targets=offsets[:-1] + np.array([s.target for s in samples], dtype=np.int64),
    )


# --- the model -------------------------------------------------------------------

def sigmoid(w: float) -> float:
    if w >= 0:
        return 1.0 / (1.0 + math.exp(-w))
    e = math.exp(w)
    return e / (1.0 + e)


class FusionModel:
    """Pose and text scoring pathways plus the fusion gate.

    Parameter creation order is fixed (pose encoder, pose scorer, text
    projector, text scorer, pose table, text table, gate) so that a given
    init stream reproduces a model exactly.
    """

    def __init__(
        self,
        config: ModelConfig,
        categories: list[str],
        rng: np.random.Generator | None = None,
        frozen_category_vectors: np.ndarray | None = None,
    ):
        self.config = config
        self.categories = list(categories)
        if rng is None:
            rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0, _STREAM_INIT]))
        if config.needs_frozen_vectors():
            if frozen_category_vectors is None:
                raise DatasetError("frozen_semantic category mode needs category vectors")
            if frozen_category_vectors.shape[0] != len(self.categories):
                raise DatasetError(
                    f"frozen vectors cover {frozen_category_vectors.shape[0]} categories, "
                    f"need {len(self.categories)}"
                )

        self.act, self.act_backward = ACTIVATIONS[config.activation]
        h = config.hidden

        self.pose_enc1 = self.pose_enc2 = self.pose_sc1 = self.pose_sc2 = None
        self.text_proj = self.text_sc1 = self.text_sc2 = None
        self.E_pose = self.E_text = None
        self.gate = None

        if config.use_pose:
            pose_in = config.pose_feat_dim + self._cat_dim(config.pose_cat, frozen_category_vectors)
            self.pose_enc1 = AffineLayer("pose_enc1", pose_in, h, rng)
            self.pose_enc2 = AffineLayer("pose_enc2", h, h, rng)
            self.pose_sc1 = AffineLayer("pose_sc1", h, h, rng)
            self.pose_sc2 = AffineLayer("pose_sc2", h, 1, rng)
        if config.use_text:
            text_in = h + self._cat_dim(config.text_cat, frozen_category_vectors)
            self.text_proj = AffineLayer(
                "text_proj", config.text_emb_dim, h, rng, bias=config.projector_bias
            )
            self.text_sc1 = AffineLayer("text_sc1", text_in, h, rng)
            self.text_sc2 = AffineLayer("text_sc2", h, 1, rng)
        if config.use_pose and config.pose_cat != CAT_NONE:
            self.E_pose = self._make_table("E_pose", config.pose_cat, rng, frozen_category_vectors)
        if config.use_text and config.text_cat != CAT_NONE:
            self.E_text = self._make_table("E_text", config.text_cat, rng, frozen_category_vectors)
        if config.fused:
            self.gate = Parameter.of("gate_w", np.zeros(1))

    def _cat_dim(self, cat_mode: str, frozen: np.ndarray | None) -> int:
        if cat_mode == CAT_NONE:
            return 0
        if cat_mode == CAT_LEARNED:
            return self.config.cat_emb_dim
        return int(frozen.shape[1])

    def _make_table(self, name, cat_mode, rng, frozen) -> EmbeddingTable:
        if cat_mode == CAT_LEARNED:
            return EmbeddingTable.learned(name, len(self.categories), self.config.cat_emb_dim, rng)
        return EmbeddingTable.frozen(name, frozen.copy())

    # -- parameter plumbing --

    def parameters(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in (self.pose_enc1, self.pose_enc2, self.pose_sc1, self.pose_sc2,
                      self.text_proj, self.text_sc1, self.text_sc2):
            if layer is not None:
                out.extend(layer.parameters())
        for table in (self.E_pose, self.E_text):
            if table is not None:
                out.extend(table.parameters())
        if self.gate is not None:
            out.append(self.gate)
        return out

    def trainable_parameters(self) -> list[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    @property
    def gate_w(self) -> float | None:
        return float(self.gate.value[0]) if self.gate is not None else None

    def gate_alpha(self) -> float | None:
        return sigmoid(self.gate_w) if self.gate is not None else None

    # -- forward / backward --

    def _block_forward(self, layer, x, train, rng, cache, tag):
        pre = layer.forward(x)
        if train and self.config.activation == "relu":
            # one multiplier carries both the relu subgradient and dropout
            m = relu_dropout_mask(pre, self.config.dropout, rng)
            cache[tag] = (x, None, m)
            pre *= m
            return pre
        hid = self.act(pre)
        mask = None
        if train and self.config.dropout > 0.0:
            mask = dropout_mask(hid.shape, self.config.dropout, rng)
            hid = hid * mask
        cache[tag] = (x, pre, mask)
        return hid

    def _block_backward(self, layer, cache, tag, d_out, need_input_grad=True):
        x, pre, mask = cache[tag]
        if pre is None:
            d_pre = np.multiply(d_out, mask, out=d_out)  # d_out is block-owned
        else:
            if mask is not None:
                d_out = d_out * mask
            d_pre = self.act_backward(pre, d_out)
        return layer.backward(x, d_pre, need_input_grad)

    def _pose_forward(self, batch, train, rng, cache):
        x = batch.feats
        if self.E_pose is not None:
            x = np.concatenate([x, self.E_pose.lookup(batch.cat_ids)], axis=1)
        cache["pose_in"] = x
        hid = self._block_forward(self.pose_enc1, x, train, rng, cache, "pose_enc1")
        hid = self._block_forward(self.pose_enc2, hid, train, rng, cache, "pose_enc2")
        hid = self._block_forward(self.pose_sc1, hid, train, rng, cache, "pose_sc1")
        cache["pose_sc2_in"] = hid
        return self.pose_sc2.forward(hid)[:, 0]

    def _pose_backward(self, batch, cache, d_scores):
        d = self.pose_sc2.backward(cache["pose_sc2_in"], d_scores[:, None])
        d = self._block_backward(self.pose_sc1, cache, "pose_sc1", d)
        d = self._block_backward(self.pose_enc2, cache, "pose_enc2", d)
        d = self._block_backward(
            self.pose_enc1, cache, "pose_enc1", d, need_input_grad=self.E_pose is not None
        )
        if self.E_pose is not None:
            self.E_pose.backward(batch.cat_ids, d[:, self.config.pose_feat_dim :])

    def _text_forward(self, batch, train, rng, cache):
        """Text scores, computed once per distinct (sample, category) pair.

        The pathway's input for a candidate is fully determined by its
        sample's utterance and its category, so scoring deduplicated rows
        and scattering guarantees that same-category candidates receive
        the identical float score (and that the no-category configuration
        is exactly constant per sample), besides saving work.
        """
        u_pre = self.text_proj.forward(batch.utt)
        u_mask = None
        if train and self.config.dropout_on_projector and self.config.dropout > 0.0:
            u_mask = dropout_mask(u_pre.shape, self.config.dropout, rng)
            u = u_pre * u_mask
        else:
            u = u_pre
        cache["text_proj"] = (batch.utt, u_mask)
        if self.E_text is None:
            hid = self._block_forward(self.text_sc1, u, train, rng, cache, "text_sc1")
            cache["text_sc2_in"] = hid
            s_per_sample = self.text_sc2.forward(hid)[:, 0]
            cache["text_unique"] = (None, None)
            return np.repeat(s_per_sample, batch.counts)
        n_cats = len(self.categories)
        sample_idx = np.repeat(np.arange(batch.n_samples), batch.counts)
        keys = sample_idx * n_cats + batch.cat_ids
        uniq, inverse = np.unique(keys, return_inverse=True)
        x = np.concatenate(
            [u[uniq // n_cats], self.E_text.lookup(uniq % n_cats)], axis=1
        )
        hid = self._block_forward(self.text_sc1, x, train, rng, cache, "text_sc1")
        cache["text_sc2_in"] = hid
        s_unique = self.text_sc2.forward(hid)[:, 0]
        cache["text_unique"] = (uniq, inverse)
        return s_unique[inverse]

    def _text_backward(self, batch, cache, d_scores):
        h = self.config.hidden
        uniq, inverse = cache["text_unique"]
        if uniq is None:
            d_per_sample = np.add.reduceat(d_scores, batch.offsets[:-1])
            d = self.text_sc2.backward(cache["text_sc2_in"], d_per_sample[:, None])
            d_u = self._block_backward(self.text_sc1, cache, "text_sc1", d)
        else:
            n_cats = len(self.categories)
            d_unique = np.bincount(inverse, weights=d_scores, minlength=len(uniq))
            d = self.text_sc2.backward(cache["text_sc2_in"], d_unique[:, None])
            d = self._block_backward(self.text_sc1, cache, "text_sc1", d)
            self.E_text.backward(uniq % n_cats, d[:, h:])
            d_u = np.zeros((batch.n_samples, h))
            np.add.at(d_u, uniq // n_cats, d[:, :h])
        utt, u_mask = cache["text_proj"]
        if u_mask is not None:
            d_u = d_u * u_mask
        self.text_proj.backward(utt, d_u, need_input_grad=False)

    def forward_scores(
        self, batch: PackedBatch, train: bool = False, rng: np.random.Generator | None = None
    ) -> tuple[np.ndarray, dict]:
        """Packed per-candidate scores [T] plus the cache backward needs."""
        cache: dict = {}
        s_pose = s_text = None
        if self.config.use_pose:
            s_pose = self._pose_forward(batch, train, rng, cache)
        if self.config.use_text:
            s_text = self._text_forward(batch, train, rng, cache)
        if self.config.fused:
            zp = znorm_segments(s_pose, batch.offsets)
            zt = znorm_segments(s_text, batch.offsets)
            alpha = sigmoid(float(self.gate.value[0]))
            scores = alpha * zp + (1.0 - alpha) * zt
            cache["fuse"] = (s_pose, s_text, zp, zt, alpha)
        else:
            scores = s_pose if self.config.use_pose else s_text
        return scores, cache

    def backward_scores(self, batch: PackedBatch, cache: dict, d_scores: np.ndarray) -> None:
        if self.config.fused:
            s_pose, s_text, zp, zt, alpha = cache["fuse"]
            d_alpha = float(np.dot(d_scores, zp - zt))
            self.gate.grad[0] += d_alpha * alpha * (1.0 - alpha)
            through = self.config.znorm_through_stats
            d_sp = znorm_segments_backward(
                s_pose, batch.offsets, alpha * d_scores, through_stats=through
            )
            d_st = znorm_segments_backward(
                s_text, batch.offsets, (1.0 - alpha) * d_scores, through_stats=through
            )
            self._pose_backward(batch, cache, d_sp)
            self._text_backward(batch, cache, d_st)
        elif self.config.use_pose:
            self._pose_backward(batch, cache, d_scores)
        else:
            self._text_backward(batch, cache, d_scores)

    def loss_and_grads(
        self, batch: PackedBatch, rng: np.random.Generator | None = None, train: bool = True
    ) -> float:
        """Mean per-sample cross-entropy; accumulates gradients."""
        scores, cache = self.forward_scores(batch, train=train, rng=rng)
        losses, probs = softmax_ce_segments(scores, batch.offsets, batch.targets)
        d = probs
        d[batch.targets] -= 1.0
        d /= batch.n_samples
        self.backward_scores(batch, cache, d)
        return float(losses.mean())

    def sample_scores(self, sample: Sample) -> np.ndarray:
        """Eval-mode fused (or singleton) scores for one sample."""
        scores, _ = self.forward_scores(pack([sample]), train=False)
        return scores

    # -- checkpoint plumbing --

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.value.copy() for p in self.parameters()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for p in self.parameters():
            if p.name not in tensors:
                raise DatasetError(f"checkpoint lacks tensor {p.name!r}")
            arr = tensors[p.name]
            if arr.shape != p.value.shape:
                raise DatasetError(
                    f"tensor {p.name!r} has shape {arr.shape}, expected {p.value.shape}"
                )
            p.value[...] = arr


# --- spec-surface pathway functions ------------------------------------------------

def pose_pathway(model: FusionModel, sample: Sample) -> np.ndarray:
    """Raw pose-pathway scores (eval mode) for one sample."""
    if not model.config.use_pose:
        raise DatasetError("pose pathway disabled in this config")
    return model._pose_forward(pack([sample]), False, None, {})


def text_pathway(model: FusionModel, sample: Sample) -> np.ndarray:
    """Raw text-pathway scores (eval mode) for one sample."""
    if not model.config.use_text:
        raise DatasetError("text pathway disabled in this config")
    return model._text_forward(pack([sample]), False, None, {})


def combine(z_pose: np.ndarray, z_text: np.ndarray, alpha: float) -> np.ndarray:
    return alpha * z_pose + (1.0 - alpha) * z_text


def fuse(pose_scores: np.ndarray, text_scores: np.ndarray, gate_w: float) -> np.ndarray:
    """z-normalize each pathway per sample, then gate-weighted combination."""
    return combine(znorm(pose_scores), znorm(text_scores), sigmoid(gate_w))


def score_ranking(scores: np.ndarray) -> np.ndarray:
    """Candidate indices sorted by descending score, ties by ascending index."""
    n = scores.shape[0]
    return np.lexsort((np.arange(n), -scores))


def predict(model: FusionModel, sample: Sample) -> np.ndarray:
    return score_ranking(model.sample_scores(sample))


def rank_of_target(model: FusionModel, sample: Sample) -> int:
    ranking = predict(model, sample)
    return int(np.nonzero(ranking == sample.target)[0][0]) + 1


# --- training ---------------------------------------------------------------------

@dataclass(frozen=True)
class TrainerConfig:
    batch_size: int = 32
    weight_decay: float = 1e-4

    def __post_init__(self):
        if self.batch_size < 1:
            raise DatasetError("batch_size must be >= 1")


@dataclass(eq=False)
class FoldResult:
    fold_index: int
    test_room: str
    model: FusionModel
    alpha_trace: list[float]
    loss_trace: list[float]

    @property
    def alpha_final(self) -> float | None:
        return self.alpha_trace[-1] if self.alpha_trace else None


def fold_streams(master_seed: int, fold_index: int):
    """Per-fold init / shuffle / dropout generators.

    Streams derive from SeedSequence([master_seed, fold_index, component])
    with components 0=init, 1=shuffle, 2=dropout, so any fold reproduces
    in isolation.
    """
    mk = lambda comp: np.random.default_rng(
        np.random.SeedSequence([master_seed, fold_index, comp])
    )
    return mk(_STREAM_INIT), mk(_STREAM_SHUFFLE), mk(_STREAM_DROPOUT)


def train_fold(
    train_samples: list[Sample],
    config: ModelConfig,
    schedule: ScheduleConfig,
    trainer: TrainerConfig,
    fold_index: int,
    test_room: str,
    categories: list[str],
    frozen_category_vectors: np.ndarray | None = None,
) -> FoldResult:
    """Train one LORO fold; records alpha after every epoch."""
    if not train_samples:
        raise TrainingError(f"fold {fold_index}: no training samples")
    init_rng, shuffle_rng, dropout_rng = fold_streams(config.seed, fold_index)
    model = FusionModel(config, categories, init_rng, frozen_category_vectors)
    opt = AdamW(model.trainable_parameters(), lr=schedule.base_lr,
                weight_decay=trainer.weight_decay)

    alpha_trace: list[float] = []
    loss_trace: list[float] = []
    n = len(train_samples)
    for epoch in range(schedule.total_epochs):
        opt.lr = cosine_lr(schedule, epoch)
        order = shuffle_rng.permutation(n)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n, trainer.batch_size):
            idxs = order[start : start + trainer.batch_size]
            batch = pack([train_samples[i] for i in idxs])
            model.zero_grad()
            loss = model.loss_and_grads(batch, rng=dropout_rng, train=True)
            if not math.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at fold {fold_index}, epoch {epoch}, "
                    f"batch {n_batches}"
                )
            opt.step()
            epoch_loss += loss
            n_batches += 1
        loss_trace.append(epoch_loss / n_batches)
        if model.gate is not None:
            alpha_trace.append(model.gate_alpha())
    return FoldResult(
        fold_index=fold_index,
        test_room=test_room,
        model=model,
        alpha_trace=alpha_trace,
        loss_trace=loss_trace,
    )


def train(
    dataset: Dataset,
    store: EmbeddingStore,
    features: dict[str, np.ndarray],
    fold_plan,
    config: ModelConfig,
    schedule: ScheduleConfig | None = None,
    trainer: TrainerConfig | None = None,
) -> list[FoldResult]:
    """Train every LORO fold of a fold plan."""
    schedule = schedule if schedule is not None else ScheduleConfig()
    trainer = trainer if trainer is not None else TrainerConfig()
    cat_to_id = category_index(dataset)
    categories = sorted(cat_to_id, key=cat_to_id.get)
    frozen = (
        frozen_category_matrix(store, categories) if config.needs_frozen_vectors() else None
    )
    samples = build_samples(dataset, store, features, cat_to_id)
    results = []
    for fold_index, fold in enumerate(fold_plan.folds):
        train_samples = [s for s in samples if s.room_id != fold.test_room]
        results.append(
            train_fold(
                train_samples, config, schedule, trainer,
                fold_index, fold.test_room, categories, frozen,
            )
        )
    return results
