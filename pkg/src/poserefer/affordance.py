"""Temporal angular affordance features.

Each candidate object gets, per reference, a 6-component vector of pooled
Gaussian-kernel scores of the angles between body-channel rays and the ray
from the channel origin to the object centroid. Component order is fixed
and is a file-format contract:

    (r_arm_max, r_arm_mean, l_arm_max, l_arm_mean, head_max, body_mean)

Arm channels pool over a narrow window centered on the hold frame; head
and body pool over the padded phrase window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CHANNELS, Dataset, PoseTrack, ReferenceEvent, Scene, SceneObject, Vec3
from .errors import DatasetError, EmptyWindowError, ConfigMismatchError
from .serialize import config_hash, jsonable

_R_ARM, _L_ARM, _HEAD, _BODY = (CHANNELS.index(c) for c in ("r_arm", "l_arm", "head", "body"))

POSE_FEATURE_NAMES = ("r_arm_max", "r_arm_mean", "l_arm_max", "l_arm_mean", "head_max", "body_mean")

DEGENERATE_EPS = 1e-9

FEATURES_FILE = "features.jsonl"


@dataclass(frozen=True)
class KernelConfig:
    """Kernel widths (degrees) and temporal window sizes."""

    sigma_arm: float = 15.0
    sigma_head: float = 30.0
    sigma_body: float = 45.0
    arm_half_window_frames: int = 10
    head_body_pad_s: float = 0.5

    def __post_init__(self):
        if min(self.sigma_arm, self.sigma_head, self.sigma_body) <= 0:
            raise DatasetError("kernel sigmas must be > 0")
        if self.arm_half_window_frames < 0 or self.head_body_pad_s < 0:
            raise DatasetError("window sizes must be >= 0")


@dataclass(frozen=True)
class PoseFeatures:
    r_arm_max: float
    r_arm_mean: float
    l_arm_max: float
    l_arm_mean: float
    head_max: float
    body_mean: float

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.r_arm_max, self.r_arm_mean, self.l_arm_max, self.l_arm_mean,
             self.head_max, self.body_mean],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a) -> "PoseFeatures":
        return cls(*(float(v) for v in a))


def _as_vec(v) -> np.ndarray:
    if isinstance(v, Vec3):
        return v.as_array()
    return np.asarray(v, dtype=np.float64)


def channel_angle(direction, origin, centroid) -> float:
    """Angle in [0, pi] between a channel ray and the origin-to-centroid ray.

    A centroid coincident with the origin scores pi: a candidate sitting on
    the channel origin is never the deictic target.
    """
    d = _as_vec(direction)
    dn = float(np.linalg.norm(d))
    if dn <= DEGENERATE_EPS:
        raise DatasetError("degenerate channel direction")
    v = _as_vec(centroid) - _as_vec(origin)
    vn = float(np.linalg.norm(v))
    if vn < DEGENERATE_EPS:
        return math.pi
    cos = float(np.dot(d, v)) / (dn * vn)
    return math.acos(min(1.0, max(-1.0, cos)))


def gaussian_score(theta: float, sigma_deg: float) -> float:
    """exp(-theta^2 / (2 sigma^2)) with theta in radians, sigma in degrees."""
    if sigma_deg <= 0:
        raise DatasetError("sigma must be > 0")
    s = math.radians(sigma_deg)
    return math.exp(-(theta * theta) / (2.0 * s * s))


def frame_window(
    event: ReferenceEvent,
    track: PoseTrack,
    channel_kind: str,
    config: KernelConfig | None = None,
) -> tuple[int, int]:
    """Inclusive frame range pooled for ``arm`` or ``head_body`` channels."""
    config = config if config is not None else KernelConfig()
    last = track.n_frames - 1
    if channel_kind == "arm":
        lo = event.hold_frame - config.arm_half_window_frames
        hi = event.hold_frame + config.arm_half_window_frames
    elif channel_kind == "head_body":
        lo = math.floor((event.phrase_start_s - config.head_body_pad_s) * track.fps)
        hi = math.ceil((event.phrase_end_s + config.head_body_pad_s) * track.fps)
    else:
        raise DatasetError(f"unknown channel_kind {channel_kind!r}")
    lo_c, hi_c = max(lo, 0), min(hi, last)
    if lo_c > hi_c:
        raise EmptyWindowError(
            f"event {event.ref_id!r}: empty {channel_kind} window [{lo}, {hi}]"
        )
    return lo_c, hi_c


def _window_scores(
    track: PoseTrack, lo: int, hi: int, channel: int, centroids: np.ndarray, sigma_deg: float
) -> np.ndarray:
    """Kernel scores [n_frames_in_window, N] for one channel against N centroids."""
    d = track.directions[lo : hi + 1, channel, :]
    q = track.origins[lo : hi + 1, channel, :]
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    v = centroids[None, :, :] - q[:, None, :]
    vn = np.linalg.norm(v, axis=-1)
    degenerate = vn < DEGENERATE_EPS
    vn_safe = np.where(degenerate, 1.0, vn)
    cos = np.einsum("fc,fnc->fn", d, v) / vn_safe
    theta = np.arccos(np.clip(cos, -1.0, 1.0))
    theta = np.where(degenerate, np.pi, theta)
    s = math.radians(sigma_deg)
    return np.exp(-(theta * theta) / (2.0 * s * s))


def feature_matrix(
    event: ReferenceEvent, track: PoseTrack, scene: Scene, config: KernelConfig | None = None
) -> np.ndarray:
    """[N, 6] affordance features for every candidate in scene order."""
    config = config if config is not None else KernelConfig()
    centroids = scene.centroid_matrix()
    a_lo, a_hi = frame_window(event, track, "arm", config)
    h_lo, h_hi = frame_window(event, track, "head_body", config)

    r = _window_scores(track, a_lo, a_hi, _R_ARM, centroids, config.sigma_arm)
    l = _window_scores(track, a_lo, a_hi, _L_ARM, centroids, config.sigma_arm)
    h = _window_scores(track, h_lo, h_hi, _HEAD, centroids, config.sigma_head)
    b = _window_scores(track, h_lo, h_hi, _BODY, centroids, config.sigma_body)

    out = np.empty((centroids.shape[0], 6), dtype=np.float64)
    out[:, 0] = r.max(axis=0)
    out[:, 1] = r.mean(axis=0)
    out[:, 2] = l.max(axis=0)
    out[:, 3] = l.mean(axis=0)
    out[:, 4] = h.max(axis=0)
    out[:, 5] = b.mean(axis=0)
    return out


def pose_features(
    event: ReferenceEvent,
    track: PoseTrack,
    obj: SceneObject,
    config: KernelConfig | None = None,
) -> PoseFeatures:
    """Pooled affordance features for a single candidate object."""
    config = config if config is not None else KernelConfig()
    centroid = obj.centroid.as_array()[None, :]
    a_lo, a_hi = frame_window(event, track, "arm", config)
    h_lo, h_hi = frame_window(event, track, "head_body", config)
    r = _window_scores(track, a_lo, a_hi, _R_ARM, centroid, config.sigma_arm)[:, 0]
    l = _window_scores(track, a_lo, a_hi, _L_ARM, centroid, config.sigma_arm)[:, 0]
    h = _window_scores(track, h_lo, h_hi, _HEAD, centroid, config.sigma_head)[:, 0]
    b = _window_scores(track, h_lo, h_hi, _BODY, centroid, config.sigma_body)[:, 0]
    return PoseFeatures(
        r_arm_max=float(r.max()),
        r_arm_mean=float(r.mean()),
        l_arm_max=float(l.max()),
        l_arm_mean=float(l.mean()),
        head_max=float(h.max()),
        body_mean=float(b.mean()),
    )


def extract_features(
    dataset: Dataset, config: KernelConfig | None = None
) -> dict[str, np.ndarray]:
    """Feature matrices for every event, keyed by ref_id."""
    config = config if config is not None else KernelConfig()
    out: dict[str, np.ndarray] = {}
    for ev in dataset.events:
        scene = dataset.scenes[ev.room_id]
        track = dataset.tracks[ev.ref_id]
        out[ev.ref_id] = feature_matrix(ev, track, scene, config)
    return out


def save_features(path: str | Path, features: dict[str, np.ndarray], config: KernelConfig) -> None:
    """Write the feature cache with the kernel-config hash in its header."""
    with open(path, "w", encoding="utf-8") as fh:
        header = {"config_hash": config_hash(config), "kernel": jsonable(config)}
        fh.write(json.dumps(header) + "\n")
        for ref_id, mat in features.items():
            fh.write(json.dumps({"ref_id": ref_id, "features": mat.tolist()}) + "\n")


def load_features(
    path: str | Path, expected_config: KernelConfig | None = None
) -> tuple[dict[str, np.ndarray], dict]:
    """Read a feature cache; optionally refuse a kernel-config mismatch."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise DatasetError(f"{path.name}: missing header line")
        header = json.loads(first)
        if "config_hash" not in header:
            raise DatasetError(f"{path.name}: header lacks config_hash")
        if expected_config is not None and header["config_hash"] != config_hash(expected_config):
            raise ConfigMismatchError(
                f"{path.name} was extracted under kernel config "
                f"{header['config_hash'][:12]}, expected {config_hash(expected_config)[:12]}"
            )
        features: dict[str, np.ndarray] = {}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            mat = np.asarray(rec["features"], dtype=np.float64)
            if mat.ndim != 2 or mat.shape[1] != 6:
                raise DatasetError(f"{path.name} line {lineno}: features must be [N, 6]")
            features[rec["ref_id"]] = mat
    return features, header
