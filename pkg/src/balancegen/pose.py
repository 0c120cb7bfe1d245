"""Hand keypoint normalization and conditioning-map rasterization.

A hand pose is 21 keypoints in normalized crop coordinates ([0,1]^2, x
right, y down) following the standard single-hand topology: wrist (0),
then four joints per finger for thumb, index, middle, ring, pinky.

Two rasterizations condition the generator:

- joints: one channel per keypoint holding an isotropic Gaussian with
  peak value exactly 1 at the keypoint pixel (21 channels);
- bones: one channel per skeleton edge holding an anti-aliased line
  segment (20 channels).

Keypoints with confidence below ``CONFIDENCE_GATE`` render as all-zero
channels: zero is the natural "absent" signal for spatially-adaptive
conditioning. Both renderers are pure functions, safe to call from any
number of workers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_KEYPOINTS = 21
NUM_BONES = 20
CONFIDENCE_GATE = 0.05

# Edges of the 21-point hand tree, rooted at the wrist (0): four joints per
# finger in the order thumb, index, middle, ring, pinky.
HAND_SKELETON_EDGES: tuple[tuple[int, int], ...] = (
    (0, 1), (1, 2), (2, 3), (3, 4),        # thumb
    (0, 5), (5, 6), (6, 7), (7, 8),        # index
    (0, 9), (9, 10), (10, 11), (11, 12),   # middle
    (0, 13), (13, 14), (14, 15), (15, 16),  # ring
    (0, 17), (17, 18), (18, 19), (19, 20),  # pinky
)


@dataclass(frozen=True)
class HandSkeleton:
    """Ordered (parent, child) keypoint index pairs forming the hand tree."""

    bones: tuple[tuple[int, int], ...] = HAND_SKELETON_EDGES

    def __post_init__(self) -> None:
        if len(self.bones) != NUM_BONES:
            raise ValueError(f"expected {NUM_BONES} bones, got {len(self.bones)}")
        for a, b in self.bones:
            if not (0 <= a < NUM_KEYPOINTS and 0 <= b < NUM_KEYPOINTS):
                raise ValueError(f"bone ({a}, {b}) indexes outside [0, {NUM_KEYPOINTS})")
        # child indices must be unique and never the root: that is a tree
        children = [b for _, b in self.bones]
        if len(set(children)) != NUM_BONES or 0 in children:
            raise ValueError("bones do not form a tree rooted at the wrist")


DEFAULT_SKELETON = HandSkeleton()


@dataclass(frozen=True)
class HandPose:
    """21 keypoints with confidences, clamped to the unit square."""

    keypoints: np.ndarray   # (21, 2) float64, columns (x, y), clamped to [0,1]
    confidences: np.ndarray  # (21,) float64 in [0,1]

    def __post_init__(self) -> None:
        kp = np.asarray(self.keypoints, dtype=np.float64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if kp.shape != (NUM_KEYPOINTS, 2):
            raise ValueError(f"keypoints must have shape (21, 2), got {kp.shape}")
        if conf.shape != (NUM_KEYPOINTS,):
            raise ValueError(f"confidences must have shape (21,), got {conf.shape}")
        if not np.isfinite(kp).all() or not np.isfinite(conf).all():
            raise ValueError("keypoints and confidences must be finite")
        object.__setattr__(self, "keypoints", np.clip(kp, 0.0, 1.0))
        object.__setattr__(self, "confidences", np.clip(conf, 0.0, 1.0))

    @property
    def mean_confidence(self) -> float:
        return float(self.confidences.mean())

    @classmethod
    def from_triples(cls, triples: Sequence[tuple[float, float, float]]) -> "HandPose":
        arr = np.asarray(triples, dtype=np.float64)
        if arr.shape != (NUM_KEYPOINTS, 3):
            raise ValueError(f"expected 21 (x, y, confidence) triples, got shape {arr.shape}")
        return cls(keypoints=arr[:, :2], confidences=arr[:, 2])

    def flipped_horizontal(self) -> "HandPose":
        kp = self.keypoints.copy()
        kp[:, 0] = 1.0 - kp[:, 0]
        return HandPose(keypoints=kp, confidences=self.confidences.copy())


@dataclass(frozen=True)
class ConditioningMap:
    """C x H x W raster of values in [0,1]; C=21 for joints, C=20 for bones."""

    channels: np.ndarray
    mode: str  # "joints" or "bones"

    def __post_init__(self) -> None:
        ch = np.asarray(self.channels, dtype=np.float32)
        if self.mode not in ("joints", "bones"):
            raise ValueError(f"unknown mode {self.mode!r}")
        expected = NUM_KEYPOINTS if self.mode == "joints" else NUM_BONES
        if ch.ndim != 3 or ch.shape[0] != expected:
            raise ValueError(
                f"{self.mode} map must have {expected} channels, got shape {ch.shape}"
            )
        if ch.min() < 0.0 or ch.max() > 1.0:
            raise ValueError("conditioning map values must lie in [0, 1]")
        object.__setattr__(self, "channels", ch)

    @property
    def num_channels(self) -> int:
        return self.channels.shape[0]

    @property
    def height(self) -> int:
        return self.channels.shape[1]

    @property
    def width(self) -> int:
        return self.channels.shape[2]


def map_channels_for_mode(mode: str) -> int:
    if mode == "joints":
        return NUM_KEYPOINTS
    if mode == "bones":
        return NUM_BONES
    raise ValueError(f"unknown conditioning mode {mode!r}")


def select_primary_hand(candidates: Sequence[HandPose]) -> HandPose | None:
    """Pick the candidate with the highest mean confidence; None when empty."""
    if not candidates:
        return None
    return max(candidates, key=lambda p: p.mean_confidence)


def default_sigma_px(height: int, width: int) -> float:
    """Gaussian std in pixels, 1.5 at 64x64 and proportional to resolution."""
    return 1.5 * min(height, width) / 64.0


def _to_pixel(coords: np.ndarray, height: int, width: int) -> np.ndarray:
    """Map normalized (x, y) to continuous pixel coordinates (u, v).

    Pixel centers sit at integer coordinates 0..W-1 / 0..H-1, so x in [0,1]
    spans exactly the pixel-center range and horizontal flips mirror the
    grid exactly on odd-sized rasters.
    """
    out = np.empty_like(coords)
    out[:, 0] = coords[:, 0] * (width - 1)
    out[:, 1] = coords[:, 1] * (height - 1)
    return out


def render_joints(
    pose: HandPose,
    height: int,
    width: int,
    sigma_px: float | None = None,
) -> ConditioningMap:
    """Rasterize each keypoint as a Gaussian in its own channel.

    Channel k holds exp(-((u-u_k)^2 + (v-v_k)^2) / (2 sigma_px^2)) sampled
    at pixel centers, with (u_k, v_k) the keypoint snapped to the nearest
    pixel center so the peak value is exactly 1. Keypoints sharing a
    location produce identical separate channels; no information is lost
    when keypoints overlap. Gated keypoints yield all-zero channels.
    """
    if sigma_px is None:
        sigma_px = default_sigma_px(height, width)
    if sigma_px <= 0:
        raise ValueError(f"sigma_px must be positive, got {sigma_px}")
    centers = np.rint(_to_pixel(pose.keypoints, height, width))
    vv, uu = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    channels = np.zeros((NUM_KEYPOINTS, height, width), dtype=np.float32)
    inv = 1.0 / (2.0 * sigma_px * sigma_px)
    for k in range(NUM_KEYPOINTS):
        if pose.confidences[k] < CONFIDENCE_GATE:
            continue
        d2 = (uu - centers[k, 0]) ** 2 + (vv - centers[k, 1]) ** 2
        channels[k] = np.exp(-d2 * inv)
    return ConditioningMap(channels=channels, mode="joints")


def render_bones(
    pose: HandPose,
    height: int,
    width: int,
    skeleton: HandSkeleton = DEFAULT_SKELETON,
    thickness_px: float = 1.0,
) -> ConditioningMap:
    """Rasterize each skeleton edge as an anti-aliased segment in its own channel.

    Pixel intensity ramps linearly from 1 inside the stroke to 0 one pixel
    outside it: clip(thickness/2 + 0.5 - dist_to_segment, 0, 1). A bone
    with coincident endpoints degenerates to a filled disc of radius
    thickness/2. Bones with either endpoint gated render all-zero.
    """
    if thickness_px < 1:
        raise ValueError(f"thickness_px must be >= 1, got {thickness_px}")
    ends = _to_pixel(pose.keypoints, height, width)
    vv, uu = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    channels = np.zeros((NUM_BONES, height, width), dtype=np.float32)
    half = thickness_px / 2.0
    for b, (i, j) in enumerate(skeleton.bones):
        if pose.confidences[i] < CONFIDENCE_GATE or pose.confidences[j] < CONFIDENCE_GATE:
            continue
        a, c = ends[i], ends[j]
        seg = c - a
        seg_len2 = float(seg @ seg)
        du, dv = uu - a[0], vv - a[1]
        if seg_len2 == 0.0:
            dist = np.sqrt(du * du + dv * dv)
        else:
            t = np.clip((du * seg[0] + dv * seg[1]) / seg_len2, 0.0, 1.0)
            dist = np.sqrt((du - t * seg[0]) ** 2 + (dv - t * seg[1]) ** 2)
        channels[b] = np.clip(half + 0.5 - dist, 0.0, 1.0)
    return ConditioningMap(channels=channels, mode="bones")


def render_map(
    pose: HandPose,
    height: int,
    width: int,
    mode: str,
    skeleton: HandSkeleton = DEFAULT_SKELETON,
) -> ConditioningMap:
    """Render a pose in the requested conditioning mode with default settings."""
    if mode == "joints":
        return render_joints(pose, height, width)
    if mode == "bones":
        return render_bones(pose, height, width, skeleton=skeleton)
    raise ValueError(f"unknown conditioning mode {mode!r}")
