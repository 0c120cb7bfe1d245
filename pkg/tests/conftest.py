"""Shared fixtures: tiny on-disk datasets and untrained GAN checkpoints."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch

from balancegen.datasets import DatasetManifest, SampleRecord, save_manifest
from balancegen.gan.checkpoint import GanCheckpoint, GanMeta, save_checkpoint
from balancegen.images import save_image


def write_image_dataset(
    root: Path,
    counts: dict[int, int],
    num_classes: int,
    size: int = 16,
    seed: int = 0,
    with_keypoints: bool = False,
    splits: dict[str, float] | None = None,
) -> DatasetManifest:
    """Write random-noise images plus a manifest; optionally random keypoints."""
    rng = np.random.default_rng(seed)
    records = []
    for label, count in counts.items():
        for i in range(count):
            rel = f"images/{label}/{i}.png"
            save_image(rng.integers(0, 256, size=(size, size, 3), dtype=np.uint8), root / rel)
            if with_keypoints:
                kp = tuple(
                    (float(x), float(y), 1.0)
                    for x, y in rng.random((21, 2))
                )
            else:
                kp = None
            records.append(
                SampleRecord(
                    sample_id=f"s{label}-{i}",
                    image_path=rel,
                    label=label,
                    split="train",
                    keypoints=kp,
                )
            )
    manifest = DatasetManifest(
        records=tuple(records),
        num_classes=num_classes,
        image_size=(size, size),
        root=root,
    )
    save_manifest(manifest, root / "manifest.tsv")
    return manifest


def make_gan_checkpoint(
    mode: str,
    num_classes: int = 2,
    image_size: int = 16,
    width: int = 8,
    z_dim: int = 8,
    seed: int = 0,
    pose_channels: str = "bones",
    dataset_fingerprint: str = "",
) -> GanCheckpoint:
    """Untrained (randomly initialized) checkpoint for contract tests."""
    from balancegen.pose import map_channels_for_mode

    meta = GanMeta(
        mode=mode,
        image_size=image_size,
        z_dim=z_dim,
        width=width,
        num_classes=num_classes if mode == "label" else None,
        map_channels=map_channels_for_mode(pose_channels) if mode == "pose" else None,
        pose_channels=pose_channels if mode == "pose" else None,
        embed_dim=16,
        dataset_fingerprint=dataset_fingerprint,
    )
    torch.manual_seed(seed)
    ckpt = GanCheckpoint(
        meta=meta, generator=meta.build_generator(), discriminator=meta.build_discriminator()
    )
    return ckpt.eval_()


@pytest.fixture
def tiny_manifest(tmp_path: Path) -> DatasetManifest:
    return write_image_dataset(
        tmp_path / "data", counts={0: 12, 1: 12}, num_classes=2, size=16, seed=1
    )


@pytest.fixture
def saved_label_checkpoint(tmp_path: Path) -> Path:
    ckpt = make_gan_checkpoint("label", num_classes=2)
    return save_checkpoint(ckpt, tmp_path / "gan-ckpt")
