"""Balanced synthetic dataset generation, scoring, and top-K filtering.

Generation is deterministic: each sample's latent seed derives from the
dataset creation seed plus its (class, index) slot, so a stored
(generator fingerprint, seed) pair reproduces the dataset bit for bit.
Datasets persist as a directory of PNGs plus a metadata file, so scoring
and metric passes never need a generator reload.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .classifier.train import ClassifierCheckpoint, ClassifierEmbedder, LabeledImageArray
from .datasets import DatasetManifest, SampleRecord
from .gan.checkpoint import (
    GanCheckpoint,
    GanCondition,
    generate_batch,
    latent_from_seed,
)
from .images import save_image, load_image, to_uint8_image
from .pose import HandPose, render_map
from .seeding import derive_seed

_GEN_BATCH = 64


class SynthesisError(ValueError):
    """Raised on mode mismatches or missing scores/keypoints."""


@dataclass(frozen=True)
class SyntheticSample:
    """One generated image with its provenance and optional quality score."""

    sample_id: str
    image: np.ndarray  # (H, W, 3) uint8
    label: int
    latent_seed: int
    condition_ref: str  # label value (label mode) or source sample_id (pose mode)
    score: float | None = None

    def __post_init__(self) -> None:
        if self.score is not None and not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must be in [0, 1], got {self.score}")


@dataclass(frozen=True)
class SyntheticDataset:
    """Generated samples plus the provenance needed to reproduce them."""

    samples: tuple[SyntheticSample, ...]
    generator_fingerprint: str
    creation_seed: int
    num_classes: int
    image_size: tuple[int, int]
    mode: str  # conditioning mode of the generating checkpoint
    multi_source: bool = False
    filter_provenance: dict | None = None

    @property
    def per_class_counts(self) -> tuple[int, ...]:
        counts = Counter(s.label for s in self.samples)
        return tuple(counts.get(c, 0) for c in range(self.num_classes))

    def __len__(self) -> int:
        return len(self.samples)

    def is_scored(self) -> bool:
        return all(s.score is not None for s in self.samples)

    def to_labeled_array(self) -> LabeledImageArray:
        return LabeledImageArray(
            images=np.stack([s.image for s in self.samples]),
            labels=np.array([s.label for s in self.samples], dtype=np.int64),
        )


def _generate_chunked(
    checkpoint: GanCheckpoint, latents: list, conditions: list
) -> list[np.ndarray]:
    images: list[np.ndarray] = []
    for start in range(0, len(latents), _GEN_BATCH):
        batch = generate_batch(
            checkpoint, latents[start : start + _GEN_BATCH], conditions[start : start + _GEN_BATCH]
        )
        images.extend(to_uint8_image(img) for img in batch)
    return images


def generate_balanced(
    checkpoint: GanCheckpoint, n_per_class: int, num_classes: int, seed: int
) -> SyntheticDataset:
    """Generate exactly n_per_class label-conditioned samples per class."""
    meta = checkpoint.meta
    if meta.mode != "label":
        raise SynthesisError("generate_balanced requires a label-mode checkpoint")
    if num_classes != meta.num_classes:
        raise SynthesisError(
            f"requested {num_classes} classes, checkpoint has {meta.num_classes}"
        )
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    latents, conditions, slots = [], [], []
    for c in range(num_classes):
        for i in range(n_per_class):
            latents.append(latent_from_seed(derive_seed(seed, "latent", c, i), meta.z_dim))
            conditions.append(GanCondition(mode="label", label=c))
            slots.append((c, i))
    images = _generate_chunked(checkpoint, latents, conditions)
    samples = tuple(
        SyntheticSample(
            sample_id=f"syn-{c:03d}-{i:05d}",
            image=img,
            label=c,
            latent_seed=lat.seed,
            condition_ref=str(c),
        )
        for (c, i), lat, img in zip(slots, latents, images)
    )
    return SyntheticDataset(
        samples=samples,
        generator_fingerprint=checkpoint.fingerprint,
        creation_seed=seed,
        num_classes=num_classes,
        image_size=(meta.image_size, meta.image_size),
        mode="label",
    )


def generate_from_poses(
    checkpoint: GanCheckpoint,
    pose_source: DatasetManifest,
    seed: int,
    n_per_class: int | None = None,
    split: str | None = "train",
    pose_source_fingerprint: str = "",
) -> SyntheticDataset:
    """Generate pose-conditioned samples driven by a source manifest.

    With ``n_per_class`` unset, every source record drives exactly one
    sample (pass-through); otherwise source poses are drawn per class with
    replacement until each class holds n_per_class samples, each paired
    with a fresh latent. Samples inherit their source record's label. The
    multi-source flag is set when the generator was trained on a dataset
    other than the pose source.
    """
    meta = checkpoint.meta
    if meta.mode != "pose":
        raise SynthesisError("generate_from_poses requires a pose-mode checkpoint")
    records = (
        pose_source.records if split is None else pose_source.split_records(split)
    )
    if not records:
        raise SynthesisError("pose source has no records")
    for rec in records:
        if not rec.has_keypoints():
            raise SynthesisError(f"source record {rec.sample_id!r} lacks keypoints")
    size = meta.image_size
    if pose_source.image_size != (size, size):
        raise SynthesisError(
            f"pose source geometry {pose_source.image_size} does not match "
            f"checkpoint geometry {(size, size)}"
        )

    def map_for(rec: SampleRecord):
        pose = HandPose.from_triples(rec.keypoints)
        return render_map(pose, size, size, meta.pose_channels)

    chosen: list[tuple[SampleRecord, int, int]] = []  # (record, class, index-in-class)
    if n_per_class is None:
        index_in_class: Counter = Counter()
        for rec in records:
            chosen.append((rec, rec.label, index_in_class[rec.label]))
            index_in_class[rec.label] += 1
    else:
        by_class: dict[int, list[SampleRecord]] = {}
        for rec in records:
            by_class.setdefault(rec.label, []).append(rec)
        for c in sorted(by_class):
            rng = np.random.default_rng(derive_seed(seed, "pose-choice", c))
            pool = by_class[c]
            picks = rng.integers(0, len(pool), size=n_per_class)
            for i, p in enumerate(picks):
                chosen.append((pool[p], c, i))

    latents, conditions = [], []
    for rec, c, i in chosen:
        latents.append(latent_from_seed(derive_seed(seed, "latent", c, i), meta.z_dim))
        conditions.append(GanCondition(mode="pose", map=map_for(rec)))
    images = _generate_chunked(checkpoint, latents, conditions)
    samples = tuple(
        SyntheticSample(
            sample_id=f"syn-{c:03d}-{i:05d}",
            image=img,
            label=c,
            latent_seed=lat.seed,
            condition_ref=rec.sample_id,
        )
        for (rec, c, i), lat, img in zip(chosen, latents, images)
    )
    multi_source = bool(
        meta.dataset_fingerprint
        and pose_source_fingerprint
        and meta.dataset_fingerprint != pose_source_fingerprint
    )
    return SyntheticDataset(
        samples=samples,
        generator_fingerprint=checkpoint.fingerprint,
        creation_seed=seed,
        num_classes=pose_source.num_classes,
        image_size=(size, size),
        mode="pose",
        multi_source=multi_source,
    )


def score_samples(
    scorer: ClassifierCheckpoint, dataset: SyntheticDataset
) -> SyntheticDataset:
    """Attach each sample's class-conditional probability under the scorer.

    The score is the scorer's softmax probability of the sample's own
    label; the scorer must have been trained on real data only.
    """
    if scorer.num_classes != dataset.num_classes:
        raise SynthesisError(
            f"scorer has {scorer.num_classes} classes, dataset has {dataset.num_classes}"
        )
    embedder = ClassifierEmbedder(scorer)
    probs = embedder.predict_proba(np.stack([s.image for s in dataset.samples]))
    labels = np.array([s.label for s in dataset.samples])
    scores = probs[np.arange(len(labels)), labels]
    samples = tuple(
        replace(s, score=float(v)) for s, v in zip(dataset.samples, scores)
    )
    return replace(dataset, samples=samples)


def filter_topk(dataset: SyntheticDataset, keep_fraction: float) -> SyntheticDataset:
    """Keep the ceil(fraction * N_c) highest-scoring samples per class.

    Filtering is per class, preserving the deliberately balanced class
    histogram. Ties break by (score desc, latent_seed asc) so repeated
    filtering of the same input keeps the same set.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    for s in dataset.samples:
        if s.score is None:
            raise SynthesisError(f"sample {s.sample_id!r} is unscored")
    by_class: dict[int, list[SyntheticSample]] = {}
    for s in dataset.samples:
        by_class.setdefault(s.label, []).append(s)
    keep_ids: set[str] = set()
    for label, group in by_class.items():
        n_keep = math.ceil(keep_fraction * len(group))
        ranked = sorted(group, key=lambda s: (-s.score, s.latent_seed))
        keep_ids.update(s.sample_id for s in ranked[:n_keep])
    samples = tuple(s for s in dataset.samples if s.sample_id in keep_ids)
    provenance = {
        "keep_fraction": keep_fraction,
        "kept": len(samples),
        "of": len(dataset.samples),
        "per_class": True,
    }
    return replace(dataset, samples=samples, filter_provenance=provenance)


def save_synthetic_dataset(dataset: SyntheticDataset, directory: str | Path) -> Path:
    """Persist images under images/<class>/<index>.png plus synthetic.json."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in dataset.samples:
        rel = f"images/{s.label:03d}/{s.sample_id}.png"
        save_image(s.image, directory / rel)
        entries.append(
            {
                "sample_id": s.sample_id,
                "file": rel,
                "label": s.label,
                "latent_seed": s.latent_seed,
                "condition_ref": s.condition_ref,
                "score": s.score,
            }
        )
    if dataset.is_scored():
        with (directory / "scores.csv").open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "label", "score"])
            for s in dataset.samples:
                writer.writerow([s.sample_id, s.label, f"{s.score:.8f}"])
    payload = {
        "generator_fingerprint": dataset.generator_fingerprint,
        "creation_seed": dataset.creation_seed,
        "num_classes": dataset.num_classes,
        "image_size": list(dataset.image_size),
        "mode": dataset.mode,
        "multi_source": dataset.multi_source,
        "filter_provenance": dataset.filter_provenance,
        "per_class_counts": list(dataset.per_class_counts),
        "scores_file": "scores.csv" if dataset.is_scored() else None,
        "samples": entries,
    }
    tmp = directory / "synthetic.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(directory / "synthetic.json")
    return directory


def load_synthetic_dataset(directory: str | Path) -> SyntheticDataset:
    directory = Path(directory)
    payload = json.loads((directory / "synthetic.json").read_text(encoding="utf-8"))
    size = tuple(payload["image_size"])
    samples = tuple(
        SyntheticSample(
            sample_id=e["sample_id"],
            image=load_image(directory / e["file"], size),
            label=e["label"],
            latent_seed=e["latent_seed"],
            condition_ref=e["condition_ref"],
            score=e["score"],
        )
        for e in payload["samples"]
    )
    return SyntheticDataset(
        samples=samples,
        generator_fingerprint=payload["generator_fingerprint"],
        creation_seed=payload["creation_seed"],
        num_classes=payload["num_classes"],
        image_size=size,
        mode=payload["mode"],
        multi_source=payload["multi_source"],
        filter_provenance=payload["filter_provenance"],
    )
