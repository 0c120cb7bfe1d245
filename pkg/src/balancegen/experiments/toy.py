"""Procedural hand-glyph dataset with ground-truth keypoints.

Each class is a distinct finger-extension pattern rendered from the
standard 21-keypoint hand skeleton with per-sample jitter in joint angles,
global rotation, scale, translation, brightness, and background shading.
Because keypoints are exact by construction, pose-conditioned pipelines
run without any pose-estimation dependency.

The long-tail preset mirrors a severely imbalanced class profile: counts
(200, 120, 70, 40, 25, 15, 9, 6, 4, 3) over 10 classes, ratio ~66.7. Tail
patterns differ from frequent ones by a single finger, so a classifier
starved of tail examples confuses them with their majority neighbors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from ..datasets import DatasetManifest, SampleRecord, save_manifest
from ..seeding import derive_seed

LONG_TAIL_COUNTS = (200, 120, 70, 40, 25, 15, 9, 6, 4, 3)

# (thumb, index, middle, ring, pinky) extension per class, ordered most- to
# least-frequent under the long-tail preset; neighbors in frequency differ
# by one finger so starved classes have a natural confusion target
CLASS_PATTERNS = (
    (1, 1, 1, 1, 1),  # open hand
    (0, 1, 1, 1, 1),  # four
    (0, 0, 0, 0, 0),  # fist
    (0, 1, 0, 0, 0),  # point
    (0, 1, 1, 0, 0),  # peace
    (0, 1, 1, 1, 0),  # three
    (1, 0, 0, 0, 0),  # thumb
    (0, 1, 0, 0, 1),  # horns
    (0, 0, 0, 0, 1),  # pinky
    (1, 0, 0, 0, 1),  # shaka
)

CLASS_NAMES = (
    "open",
    "four",
    "fist",
    "point",
    "peace",
    "three",
    "thumb",
    "horns",
    "pinky",
    "shaka",
)

_FINGER_ANGLES = (-1.05, -0.35, 0.0, 0.3, 0.65)  # radians from straight up
_MCP_DIST = (0.22, 0.34, 0.36, 0.34, 0.30)
_SEGMENTS = (
    (0.13, 0.10, 0.08),
    (0.14, 0.11, 0.08),
    (0.15, 0.12, 0.08),
    (0.14, 0.11, 0.08),
    (0.11, 0.08, 0.06),
)
_CURL_BENDS = (0.9, 1.7, 2.4)
_WRIST = (0.0, -0.42)


@dataclass(frozen=True)
class ToyStyle:
    """Rendering palette; two presets stand in for visually distinct domains."""

    name: str
    background: tuple[int, int] = (25, 70)
    hand: tuple[int, int] = (205, 250)
    stroke: int = 12  # at 4x supersampling
    joint_radius: int = 9
    noise_std: float = 5.0


STYLES = {
    "light": ToyStyle(name="light"),
    "dark": ToyStyle(
        name="dark", background=(95, 150), hand=(25, 75), stroke=10, joint_radius=8
    ),
}


def _glyph_keypoints(pattern: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """21 keypoints in canonical hand space (x right, y up), with jitter."""
    pts = np.zeros((21, 2))
    pts[0] = _WRIST
    for f, extended in enumerate(pattern):
        theta = _FINGER_ANGLES[f] + rng.uniform(-0.05, 0.05)
        direction = np.array([math.sin(theta), math.cos(theta)])
        mcp = np.array(_WRIST) + direction * _MCP_DIST[f]
        pts[1 + 4 * f] = mcp
        lengths = np.array(_SEGMENTS[f])
        joint = mcp
        for k in range(3):
            if extended:
                seg_theta = theta + rng.uniform(-0.07, 0.07)
                seg_len = lengths[k] * rng.uniform(0.9, 1.1)
            else:
                # curl: successive segments rotate clockwise toward the palm;
                # the thumb bends further so its tip crosses the palm
                bend = _CURL_BENDS[k] + rng.uniform(-0.15, 0.15)
                seg_theta = theta + bend * (1.2 if f == 0 else 1.0)
                seg_len = lengths[k] * 0.8
            joint = joint + seg_len * np.array([math.sin(seg_theta), math.cos(seg_theta)])
            pts[2 + 4 * f + k] = joint
    return pts


def _place(pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Rotate/scale/translate canonical points into normalized image coords."""
    phi = rng.uniform(-0.35, 0.35)
    scale = rng.uniform(0.80, 1.05)
    rot = np.array([[math.cos(phi), -math.sin(phi)], [math.sin(phi), math.cos(phi)]])
    placed = (pts @ rot.T) * scale
    cx = 0.5 + rng.uniform(-0.05, 0.05)
    cy = 0.54 + rng.uniform(-0.05, 0.05)
    out = np.empty_like(placed)
    out[:, 0] = cx + placed[:, 0]
    out[:, 1] = cy - placed[:, 1]  # image y grows downward
    return np.clip(out, 0.02, 0.98)


def _render_glyph(
    keypoints: np.ndarray, image_size: int, style: ToyStyle, rng: np.random.Generator
) -> np.ndarray:
    """Rasterize the skeleton as a flat-shaded hand on a shaded background."""
    ss = 4 * image_size
    bg = rng.uniform(*style.background)
    hand = int(rng.uniform(*style.hand))
    gradient = rng.uniform(-20.0, 20.0)
    column = bg + gradient * np.linspace(-0.5, 0.5, ss)
    base = np.tile(column[:, None], (1, ss))
    img = Image.fromarray(np.clip(base, 0, 255).astype(np.uint8), mode="L")
    draw = ImageDraw.Draw(img)

    px = keypoints * (ss - 1)
    palm = [tuple(px[0])] + [tuple(px[1 + 4 * f]) for f in range(5)]
    draw.polygon(palm, fill=hand)
    for f in range(5):
        idx = [0, 1 + 4 * f, 2 + 4 * f, 3 + 4 * f, 4 + 4 * f]
        for a, b in zip(idx, idx[1:]):
            draw.line([tuple(px[a]), tuple(px[b])], fill=hand, width=style.stroke)
        for j in idx[1:]:
            x, y = px[j]
            r = style.joint_radius
            draw.ellipse([x - r, y - r, x + r, y + r], fill=hand)

    small = img.resize((image_size, image_size), Image.LANCZOS)
    arr = np.asarray(small, dtype=np.float64)
    arr = arr + rng.normal(0.0, style.noise_std, size=arr.shape)
    gray = np.clip(arr, 0, 255).astype(np.uint8)
    return np.stack([gray, gray, gray], axis=-1)


def make_toy_dataset(
    out_dir: str | Path,
    counts: tuple[int, ...] = LONG_TAIL_COUNTS,
    seed: int = 0,
    style: str = "light",
    image_size: int = 64,
) -> DatasetManifest:
    """Render the glyph dataset and write images plus a manifest.

    Every record carries exactly 21 ground-truth keypoints. Deterministic:
    the same (counts, seed, style, image_size) reproduce bit-identical
    images and manifest.
    """
    if len(counts) > len(CLASS_PATTERNS):
        raise ValueError(f"at most {len(CLASS_PATTERNS)} classes available")
    if any(c < 1 for c in counts):
        raise ValueError("class counts must be positive")
    if style not in STYLES:
        raise ValueError(f"unknown style {style!r}; choose from {sorted(STYLES)}")
    out_dir = Path(out_dir)
    sty = STYLES[style]
    records = []
    for label, count in enumerate(counts):
        pattern = CLASS_PATTERNS[label]
        for i in range(count):
            rng = np.random.default_rng(derive_seed(seed, "toy", style, label, i))
            kp = _place(_glyph_keypoints(pattern, rng), rng)
            image = _render_glyph(kp, image_size, sty, rng)
            rel = f"images/{label:02d}/{i:04d}.png"
            path = out_dir / rel
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(image, mode="RGB").save(path, format="PNG")
            confidences = rng.uniform(0.9, 1.0, size=21)
            triples = tuple(
                (float(x), float(y), float(c)) for (x, y), c in zip(kp, confidences)
            )
            records.append(
                SampleRecord(
                    sample_id=f"toy-{label:02d}-{i:04d}",
                    image_path=rel,
                    label=label,
                    split="train",
                    keypoints=triples,
                )
            )
    manifest = DatasetManifest(
        records=tuple(records),
        num_classes=len(counts),
        image_size=(image_size, image_size),
        root=out_dir,
        class_names=CLASS_NAMES[: len(counts)],
        provenance=f"toy:{style}:seed={seed}",
    )
    save_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
