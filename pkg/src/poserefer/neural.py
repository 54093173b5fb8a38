"""Reverse-mode differentiable building blocks on float64 numpy arrays.

No autograd graph: each operation has an explicit backward that consumes
the forward inputs the caller kept around. Gradients accumulate into
per-parameter buffers. Everything runs in 64-bit so finite-difference
checks are clean.

Segment variants (``*_segments``) operate on a concatenation of
variable-length candidate lists, delimited by an ``offsets`` array of
length B+1; they are the workhorse for ragged batches and reduce to the
plain versions for a single segment.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigMismatchError, DatasetError, GradientError

ZNORM_EPS = 1e-8


# --- parameters ---------------------------------------------------------------

@dataclass(eq=False)
class Parameter:
    name: str
    value: np.ndarray
    grad: np.ndarray
    trainable: bool = True

    @classmethod
    def of(cls, name: str, value: np.ndarray, trainable: bool = True) -> "Parameter":
        value = np.asarray(value, dtype=np.float64)
        return cls(name=name, value=value, grad=np.zeros_like(value), trainable=trainable)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0


class AffineLayer:
    """y = x @ W.T + b, with Glorot-uniform W and zero b."""

    def __init__(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True):
        limit = math.sqrt(6.0 / (in_dim + out_dim))
        w = rng.uniform(-limit, limit, size=(out_dim, in_dim))
        self.W = Parameter.of(f"{name}.W", w)
        self.b = Parameter.of(f"{name}.b", np.zeros(out_dim)) if bias else None
        self.in_dim, self.out_dim = in_dim, out_dim

    def forward(self, x: np.ndarray) -> np.ndarray:
        single = x.ndim == 1
        y = np.atleast_2d(x) @ self.W.value.T
        if self.b is not None:
            y += self.b.value
        return y[0] if single else y

    def backward(self, x: np.ndarray, d_out: np.ndarray,
                 need_input_grad: bool = True) -> np.ndarray | None:
        single = x.ndim == 1
        x2, d2 = np.atleast_2d(x), np.atleast_2d(d_out)
        if x2.shape[1] != self.in_dim or d2.shape[1] != self.out_dim:
            raise DatasetError(
                f"{self.W.name}: shape mismatch x={x2.shape} d_out={d2.shape}"
            )
        self.W.grad += d2.T @ x2
        if self.b is not None:
            self.b.grad += d2.sum(axis=0)
        if not need_input_grad:
            return None
        d_in = d2 @ self.W.value
        return d_in[0] if single else d_in

    def parameters(self) -> list[Parameter]:
        return [self.W] if self.b is None else [self.W, self.b]


class EmbeddingTable:
    """Row lookup table; frozen tables accumulate no gradient."""

    def __init__(self, name: str, rows: np.ndarray, trainable: bool):
        self.rows = Parameter.of(f"{name}.rows", rows, trainable=trainable)

    @classmethod
    def learned(cls, name: str, num_rows: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        return cls(name, rng.normal(0.0, 0.02, size=(num_rows, dim)), trainable=True)

    @classmethod
    def frozen(cls, name: str, rows: np.ndarray) -> "EmbeddingTable":
        return cls(name, rows, trainable=False)

    @property
    def dim(self) -> int:
        return int(self.rows.value.shape[1])

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        return self.rows.value[ids]

    def backward(self, ids: np.ndarray, d_out: np.ndarray) -> None:
        if self.rows.trainable:
            np.add.at(self.rows.grad, ids, d_out)

    def parameters(self) -> list[Parameter]:
        return [self.rows]


# --- activations and dropout ----------------------------------------------------

def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    # subgradient 0 at 0
    return np.where(x > 0.0, d_out, 0.0)


def tanh_act(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def tanh_backward(x: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    t = np.tanh(x)
    return d_out * (1.0 - t * t)


ACTIVATIONS = {"relu": (relu, relu_backward), "tanh": (tanh_act, tanh_backward)}


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier array: 0 with prob p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise DatasetError(f"dropout p must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=np.float64)
    keep = rng.random(shape, dtype=np.float32) >= p
    return keep * (1.0 / (1.0 - p))


def relu_dropout_mask(pre: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Combined multiplier for relu followed by inverted dropout.

    relu(pre) * mask == pre * relu_dropout_mask(pre, ...), and the same
    multiplier is the exact backward factor; the rng draw matches
    dropout_mask(pre.shape, ...) element for element.
    """
    if p == 0.0:
        return (pre > 0.0) * 1.0
    keep = rng.random(pre.shape, dtype=np.float32) >= p
    keep &= pre > 0.0
    return keep * (1.0 / (1.0 - p))


def dropout(x: np.ndarray, p: float = 0.3, mode: str = "train",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout; identity in eval mode."""
    if mode == "eval" or p == 0.0:
        if not 0.0 <= p < 1.0:
            raise DatasetError(f"dropout p must be in [0, 1), got {p}")
        return x
    if mode != "train":
        raise DatasetError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise DatasetError("train-mode dropout needs an rng")
    return x * dropout_mask(x.shape, p, rng)


# --- per-sample normalization -----------------------------------------------------

def _seg_counts(offsets: np.ndarray) -> np.ndarray:
    return np.diff(offsets)


def znorm_segments(s: np.ndarray, offsets: np.ndarray, eps: float = ZNORM_EPS) -> np.ndarray:
    """Per-segment (s - mean) / (population std + eps)."""
    counts = _seg_counts(offsets)
    mu = np.add.reduceat(s, offsets[:-1]) / counts
    d = s - np.repeat(mu, counts)
    var = np.add.reduceat(d * d, offsets[:-1]) / counts
    sigma = np.sqrt(var)
    return d / np.repeat(sigma + eps, counts)


def znorm_segments_backward(
    s: np.ndarray,
    offsets: np.ndarray,
    g: np.ndarray,
    eps: float = ZNORM_EPS,
    through_stats: bool = True,
) -> np.ndarray:
    """Gradient of znorm_segments; optionally treat mean/std as constants."""
    counts = _seg_counts(offsets)
    mu = np.add.reduceat(s, offsets[:-1]) / counts
    d = s - np.repeat(mu, counts)
    var = np.add.reduceat(d * d, offsets[:-1]) / counts
    sigma = np.sqrt(var)
    denom = np.repeat(sigma + eps, counts)
    if not through_stats:
        return g / denom
    gbar = np.add.reduceat(g, offsets[:-1]) / counts
    term1 = (g - np.repeat(gbar, counts)) / denom
    gd = np.add.reduceat(g * d, offsets[:-1])
    scale = gd / (counts * np.maximum(sigma, 1e-300) * (sigma + eps) ** 2)
    return term1 - d * np.repeat(scale, counts)


def znorm(s: np.ndarray, eps: float = ZNORM_EPS) -> np.ndarray:
    """(s - mean) / (population std + eps); constant input maps to zeros."""
    s = np.asarray(s, dtype=np.float64)
    return znorm_segments(s, np.array([0, s.shape[0]]), eps)


def znorm_backward(s: np.ndarray, g: np.ndarray, eps: float = ZNORM_EPS,
                   through_stats: bool = True) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    return znorm_segments_backward(s, np.array([0, s.shape[0]]), g, eps, through_stats)


# --- softmax cross-entropy ---------------------------------------------------------

def softmax_ce_segments(
    scores: np.ndarray, offsets: np.ndarray, targets: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment cross-entropy over candidates.

    ``targets`` holds global indices into ``scores``. Returns (losses [B],
    probs [T]); the gradient of the summed loss is probs minus the one-hot
    targets, which the caller scales.
    """
    counts = _seg_counts(offsets)
    m = np.maximum.reduceat(scores, offsets[:-1])
    e = np.exp(scores - np.repeat(m, counts))
    z = np.add.reduceat(e, offsets[:-1])
    probs = e / np.repeat(z, counts)
    losses = np.log(z) + m - scores[targets]
    return losses, probs


def softmax_ce(scores: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Stabilized -log softmax(scores)[target] and its gradient."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    if not 0 <= target < n:
        raise DatasetError(f"target {target} outside [0, {n})")
    losses, probs = softmax_ce_segments(scores, np.array([0, n]), np.array([target]))
    d = probs.copy()
    d[target] -= 1.0
    return float(losses[0]), d


# --- optimizer -----------------------------------------------------------------

class AdamW:
    """AdamW with decoupled weight decay applied before the moment update."""

    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-4,
    ):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p in self.params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise GradientError(
                    f"non-finite gradient in {p.name!r} at optimizer step {self.t}"
                )
            if self.weight_decay != 0.0:
                p.value *= 1.0 - self.lr * self.weight_decay
            m = self.m[p.name]
            v = self.v[p.name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 1e-3
    total_epochs: int = 50
    floor_lr: float = 0.0

    def __post_init__(self):
        if not self.base_lr > self.floor_lr >= 0.0:
            raise DatasetError("need base_lr > floor_lr >= 0")
        if self.total_epochs < 1:
            raise DatasetError("total_epochs must be >= 1")


def cosine_lr(schedule: ScheduleConfig, epoch: int) -> float:
    """Cosine decay from base_lr to floor_lr over total_epochs, no warmup."""
    if not 0 <= epoch < schedule.total_epochs:
        raise DatasetError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    if schedule.total_epochs == 1:
        return schedule.base_lr
    span = schedule.base_lr - schedule.floor_lr
    frac = epoch / (schedule.total_epochs - 1)
    return schedule.floor_lr + 0.5 * span * (1.0 + math.cos(math.pi * frac))


# --- gradient checking ---------------------------------------------------------

def grad_check(
    loss_fn,
    params: list[Parameter],
    rng: np.random.Generator,
    num_coords: int = 200,
    h: float = 1e-5,
    denom_floor: float = 1e-3,
) -> float:
    """Max relative error of analytic vs. central-difference gradients.

    ``loss_fn()`` must recompute the loss deterministically (dropout off)
    and leave fresh gradients in the parameters. Coordinates are sampled
    across all trainable parameters, with at least one per tensor.
    Non-trainable parameters are constants and report error 0.
    """
    trainables = [p for p in params if p.trainable]
    loss_fn()
    analytic = {p.name: p.grad.copy() for p in trainables}

    coords: list[tuple[Parameter, int]] = []
    for p in trainables:
        coords.append((p, int(rng.integers(p.value.size))))
    sizes = np.array([p.value.size for p in trainables])
    total = int(sizes.sum())
    extra = max(0, num_coords - len(coords))
    flat_choices = rng.choice(total, size=min(extra, total), replace=False)
    bounds = np.cumsum(sizes)
    for flat in flat_choices:
        which = int(np.searchsorted(bounds, flat, side="right"))
        coords.append((trainables[which], int(flat - (bounds[which] - sizes[which]))))

    max_err = 0.0
    for p, idx in coords:
        orig = p.value.flat[idx]
        p.value.flat[idx] = orig + h
        lp = loss_fn()
        p.value.flat[idx] = orig - h
        lm = loss_fn()
        p.value.flat[idx] = orig
        fd = (lp - lm) / (2.0 * h)
        g = analytic[p.name].flat[idx]
        err = abs(fd - g) / max(abs(fd), abs(g), denom_floor)
        max_err = max(max_err, err)
    return max_err


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path: str | Path, params: list[Parameter], config_hash: str,
                    gate_w: float | None) -> None:
    """Flat named-tensor JSONL with a config-hash header."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config_hash": config_hash, "gate_w": gate_w}) + "\n")
        for p in params:
            rec = {
                "name": p.name,
                "shape": list(p.value.shape),
                "data": p.value.ravel().tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def load_checkpoint(
    path: str | Path, expected_config_hash: str | None = None
) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if expected_config_hash is not None and header.get("config_hash") != expected_config_hash:
            raise ConfigMismatchError(
                f"checkpoint {path.name} has config hash "
                f"{str(header.get('config_hash'))[:12]}, expected {expected_config_hash[:12]}"
            )
        tensors: dict[str, np.ndarray] = {}
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            arr = np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
            tensors[rec["name"]] = arr
    return tensors, header
