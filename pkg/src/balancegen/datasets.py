"""Labeled image dataset manifests: ingestion, splitting, sub-sampling.

A manifest is a line-delimited UTF-8 file. The first line is a header::

    #balancegen-manifest v1 num_classes=<N> height=<H> width=<W>

Subsequent ``#``-prefixed lines carry optional metadata (``#class-names``,
``#provenance``). Each record line has five tab-separated fields::

    sample_id  image_path  label  split  keypoints

where ``keypoints`` is either ``-`` or 63 comma-separated decimals
(x1,y1,c1,...,x21,y21,c21) in normalized crop coordinates. Image paths are
resolved relative to the manifest's directory. Manifests store paths, not
pixels; decoding happens lazily at batch time.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .seeding import derive_seed

SPLITS = ("train", "val", "test")
NUM_KEYPOINTS = 21

_HEADER_RE = re.compile(
    r"^#balancegen-manifest v1 num_classes=(\d+) height=(\d+) width=(\d+)\s*$"
)


class ManifestError(ValueError):
    """Raised when a manifest file or record violates the format contract."""


@dataclass(frozen=True)
class SampleRecord:
    """One labeled image, optionally with 21 hand keypoints."""

    sample_id: str
    image_path: str
    label: int
    split: str
    keypoints: tuple[tuple[float, float, float], ...] | None = None

    def has_keypoints(self) -> bool:
        return self.keypoints is not None


@dataclass(frozen=True)
class DatasetManifest:
    """Ordered collection of sample records plus dataset-level metadata."""

    records: tuple[SampleRecord, ...]
    num_classes: int
    image_size: tuple[int, int]  # (height, width)
    root: Path = field(default_factory=Path)
    class_names: tuple[str, ...] | None = None
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise ManifestError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.image_size[0] <= 0 or self.image_size[1] <= 0:
            raise ManifestError(f"image_size must be positive, got {self.image_size}")
        seen: set[str] = set()
        for rec in self.records:
            if not 0 <= rec.label < self.num_classes:
                raise ManifestError(
                    f"record {rec.sample_id!r}: label {rec.label} out of range "
                    f"[0, {self.num_classes})"
                )
            if rec.split not in SPLITS:
                raise ManifestError(
                    f"record {rec.sample_id!r}: unknown split {rec.split!r}"
                )
            if rec.sample_id in seen:
                raise ManifestError(f"duplicate sample_id {rec.sample_id!r}")
            seen.add(rec.sample_id)
            if rec.keypoints is not None:
                if len(rec.keypoints) != NUM_KEYPOINTS:
                    raise ManifestError(
                        f"record {rec.sample_id!r}: expected {NUM_KEYPOINTS} "
                        f"keypoints, got {len(rec.keypoints)}"
                    )
                for triple in rec.keypoints:
                    if not all(math.isfinite(v) for v in triple):
                        raise ManifestError(
                            f"record {rec.sample_id!r}: non-finite keypoint value"
                        )

    def __len__(self) -> int:
        return len(self.records)

    def split_records(self, split: str) -> tuple[SampleRecord, ...]:
        if split not in SPLITS:
            raise ManifestError(f"unknown split {split!r}")
        return tuple(r for r in self.records if r.split == split)

    def resolve_path(self, record: SampleRecord) -> Path:
        p = Path(record.image_path)
        return p if p.is_absolute() else self.root / p


@dataclass(frozen=True)
class ClassDistribution:
    """Per-class sample counts for one split, with the imbalance ratio."""

    counts: tuple[int, ...]
    imbalance_ratio: float

    @property
    def total(self) -> int:
        return sum(self.counts)


def _parse_keypoints(text: str, lineno: int) -> tuple[tuple[float, float, float], ...] | None:
    if text == "-":
        return None
    parts = text.split(",")
    if len(parts) != 3 * NUM_KEYPOINTS:
        raise ManifestError(
            f"line {lineno}: expected {3 * NUM_KEYPOINTS} keypoint values, got {len(parts)}"
        )
    try:
        vals = [float(p) for p in parts]
    except ValueError as exc:
        raise ManifestError(f"line {lineno}: bad keypoint value ({exc})") from exc
    if not all(math.isfinite(v) for v in vals):
        raise ManifestError(f"line {lineno}: non-finite keypoint value")
    return tuple((vals[3 * i], vals[3 * i + 1], vals[3 * i + 2]) for i in range(NUM_KEYPOINTS))


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file; records preserve file order."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty file, missing header")
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise ManifestError(f"{path}: line 1: bad header {lines[0]!r}")
    num_classes, height, width = (int(g) for g in m.groups())

    class_names: tuple[str, ...] | None = None
    provenance = ""
    records: list[SampleRecord] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        if line.startswith("#class-names\t"):
            class_names = tuple(line.split("\t", 1)[1].split(","))
            continue
        if line.startswith("#provenance\t"):
            provenance = line.split("\t", 1)[1]
            continue
        if line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise ManifestError(f"{path}: line {lineno}: expected 5 fields, got {len(fields)}")
        sample_id, image_path, label_s, split, kp_s = fields
        try:
            label = int(label_s)
        except ValueError as exc:
            raise ManifestError(f"{path}: line {lineno}: bad label {label_s!r}") from exc
        if not 0 <= label < num_classes:
            raise ManifestError(
                f"{path}: line {lineno}: label {label} out of range [0, {num_classes})"
            )
        if split not in SPLITS:
            raise ManifestError(f"{path}: line {lineno}: unknown split {split!r}")
        if sample_id in seen:
            raise ManifestError(
                f"{path}: line {lineno}: duplicate sample_id {sample_id!r} "
                f"(first seen on line {seen[sample_id]})"
            )
        seen[sample_id] = lineno
        try:
            keypoints = _parse_keypoints(kp_s, lineno)
        except ManifestError as exc:
            raise ManifestError(f"{path}: {exc}") from None
        records.append(SampleRecord(sample_id, image_path, label, split, keypoints))

    if class_names is not None and len(class_names) != num_classes:
        raise ManifestError(
            f"{path}: #class-names lists {len(class_names)} names for {num_classes} classes"
        )
    return DatasetManifest(
        records=tuple(records),
        num_classes=num_classes,
        image_size=(height, width),
        root=path.parent,
        class_names=class_names,
        provenance=provenance,
    )


def save_manifest(manifest: DatasetManifest, path: str | Path) -> Path:
    """Write a manifest in the line-delimited format (atomic replace)."""
    path = Path(path)
    lines = [
        f"#balancegen-manifest v1 num_classes={manifest.num_classes} "
        f"height={manifest.image_size[0]} width={manifest.image_size[1]}"
    ]
    if manifest.class_names is not None:
        lines.append("#class-names\t" + ",".join(manifest.class_names))
    if manifest.provenance:
        lines.append("#provenance\t" + manifest.provenance)
    for rec in manifest.records:
        if rec.keypoints is None:
            kp = "-"
        else:
            kp = ",".join(f"{v:.6f}" for triple in rec.keypoints for v in triple)
        lines.append(f"{rec.sample_id}\t{rec.image_path}\t{rec.label}\t{rec.split}\t{kp}")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
    tmp.replace(path)
    return path


def class_histogram(manifest: DatasetManifest, split: str = "train") -> ClassDistribution:
    """Count records per class within one split.

    The imbalance ratio is max count over min nonzero count.
    """
    recs = manifest.split_records(split)
    if not recs:
        raise ManifestError(f"split {split!r} has zero records")
    counts = [0] * manifest.num_classes
    for rec in recs:
        counts[rec.label] += 1
    nonzero = [c for c in counts if c > 0]
    ratio = max(nonzero) / min(nonzero)
    return ClassDistribution(counts=tuple(counts), imbalance_ratio=ratio)


def _per_class_indices(records: Sequence[SampleRecord], split: str | None = None) -> dict[int, list[int]]:
    by_class: dict[int, list[int]] = {}
    for idx, rec in enumerate(records):
        if split is not None and rec.split != split:
            continue
        by_class.setdefault(rec.label, []).append(idx)
    return by_class


def stratified_subsample(
    manifest: DatasetManifest, k_per_class: int, seed: int
) -> DatasetManifest:
    """Keep at most ``k_per_class`` train records per class; other splits pass through.

    Selections for increasing k are nested for a fixed seed: each class's
    records are permuted once (independent of k) and the first k are kept,
    so the k=5 selection is a subset of the k=10 selection. Classes with
    fewer than k records keep all of them.
    """
    if k_per_class < 1:
        raise ValueError(f"k_per_class must be >= 1, got {k_per_class}")
    keep: set[int] = set()
    for label, indices in _per_class_indices(manifest.records, "train").items():
        rng = np.random.default_rng(derive_seed(seed, "subsample", label))
        order = rng.permutation(len(indices))
        keep.update(indices[i] for i in order[: min(k_per_class, len(indices))])
    records = tuple(
        rec
        for idx, rec in enumerate(manifest.records)
        if rec.split != "train" or idx in keep
    )
    return replace(manifest, records=records)


def _allocate_split_counts(n: int, fractions: tuple[float, float, float]) -> dict[str, int]:
    """Allocate n records to (train, val, test) counts.

    Floors of n*fraction, with the remainder distributed cycling through
    train, test, val in that priority order. Classes with fewer records
    than splits place one record per split in the same priority order.
    """
    f_train, f_val, f_test = fractions
    priority = ["train", "test", "val"]
    if n < len(SPLITS):
        counts = {s: 0 for s in SPLITS}
        for i in range(n):
            counts[priority[i]] += 1
        return counts
    counts = {
        "train": int(math.floor(n * f_train)),
        "val": int(math.floor(n * f_val)),
        "test": int(math.floor(n * f_test)),
    }
    leftover = n - sum(counts.values())
    i = 0
    while leftover > 0:
        counts[priority[i % 3]] += 1
        leftover -= 1
        i += 1
    return counts


def split(
    manifest: DatasetManifest,
    fractions: tuple[float, float, float],
    seed: int,
) -> DatasetManifest:
    """Assign every record a split tag, stratified per class.

    ``fractions`` is (train, val, test); each must be positive and the
    three must sum to 1 within 1e-9. Assignment is deterministic under
    ``seed`` and independent of any later sub-sampling, so the test split
    is fixed once per (manifest, fractions, seed).
    """
    if any(f <= 0 for f in fractions):
        raise ValueError(f"fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must sum to 1, got {fractions}")
    assignment: dict[int, str] = {}
    for label, indices in _per_class_indices(manifest.records).items():
        rng = np.random.default_rng(derive_seed(seed, "split", label))
        order = [indices[i] for i in rng.permutation(len(indices))]
        counts = _allocate_split_counts(len(order), fractions)
        cursor = 0
        for s in ("train", "val", "test"):
            for idx in order[cursor : cursor + counts[s]]:
                assignment[idx] = s
            cursor += counts[s]
    records = tuple(
        replace(rec, split=assignment[idx]) for idx, rec in enumerate(manifest.records)
    )
    return replace(manifest, records=records)


def records_with_keypoints(records: Iterable[SampleRecord]) -> tuple[SampleRecord, ...]:
    """Filter to records carrying keypoints (pose-mode training set)."""
    return tuple(r for r in records if r.has_keypoints())
