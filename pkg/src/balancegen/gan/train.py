"""Conditional GAN training loop.

One trainer owns all mutable model state. Real images for the train split
are decoded once up front (desk-scale datasets fit in memory); pose
conditioning maps are rasterized on the fly per batch and never persisted.
Checkpoints are written at step 0, at configured intervals, and at the
end, each with full seed provenance. A non-finite loss aborts training
with the last-good checkpoint retained on disk.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from ..datasets import DatasetManifest, records_with_keypoints
from ..images import load_image, to_unit_tensor
from ..pose import HandPose, render_map, map_channels_for_mode
from ..seeding import derive_seed
from .checkpoint import GanCheckpoint, GanMeta, load_checkpoint, save_checkpoint
from .losses import d2dce_loss, hinge_losses
from .nets import spectral_norm_max


class GanTrainingError(RuntimeError):
    """Training aborted; ``last_checkpoint`` names the retained state."""

    def __init__(self, message: str, step: int, last_checkpoint: Path | None):
        super().__init__(message)
        self.step = step
        self.last_checkpoint = last_checkpoint


@dataclass(frozen=True)
class GanLossReport:
    """Per-logged-step loss snapshot."""

    step: int
    d_adversarial: float
    g_adversarial: float
    d2dce: float | None
    spectral_norm_max: float

    def __post_init__(self) -> None:
        vals = [self.d_adversarial, self.g_adversarial, self.spectral_norm_max]
        if self.d2dce is not None:
            vals.append(self.d2dce)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite loss report at step {self.step}")


@dataclass(frozen=True)
class GanTrainConfig:
    mode: str = "label"                 # "label" or "pose"
    pose_channels: str = "bones"        # conditioning raster for pose mode
    z_dim: int = 64
    width: int = 48
    embed_dim: int = 64
    spade_hidden: int = 32
    steps: int = 2000
    batch_size: int = 32
    d_steps: int = 1                    # discriminator updates per generator update
    lr_d: float = 2e-4
    lr_g: float = 5e-5
    betas: tuple[float, float] = (0.0, 0.999)
    lambda_cond: float = 1.0
    d2dce_temperature: float = 0.25
    d2dce_margin_pos: float = 0.98
    d2dce_margin_neg: float = 1.0
    ema: bool = False
    ema_decay: float = 0.999
    hflip: bool = True
    balanced_batches: bool = False
    checkpoint_every: int = 1000
    log_every: int = 25
    seed: int = 0


class _TrainSet:
    """Preloaded train images plus labels/poses for batch assembly."""

    def __init__(self, manifest: DatasetManifest, mode: str):
        records = manifest.split_records("train")
        if mode == "pose":
            records = records_with_keypoints(records)
        if not records:
            raise ValueError(f"no usable train records for {mode}-mode GAN training")
        size = manifest.image_size
        self.images = np.stack(
            [load_image(manifest.resolve_path(r), size) for r in records]
        )
        self.labels = np.array([r.label for r in records], dtype=np.int64)
        self.poses = (
            [HandPose.from_triples(r.keypoints) for r in records] if mode == "pose" else None
        )
        self.by_class: dict[int, np.ndarray] = {
            int(c): np.flatnonzero(self.labels == c) for c in np.unique(self.labels)
        }

    def __len__(self) -> int:
        return len(self.labels)


def _warm_up_spectral_norm(discriminator, meta: GanMeta, iterations: int = 30) -> None:
    """Converge the power-iteration u/v vectors before the first update.

    The iteration depends only on the weights, so zero inputs suffice; this
    keeps the normalized top singular value within tolerance of 1 from the
    very first logged step.
    """
    discriminator.train()
    size = meta.image_size
    images = torch.zeros(1, 3, size, size)
    maps = (
        torch.zeros(1, meta.map_channels, size, size) if meta.mode == "pose" else None
    )
    with torch.no_grad():
        for _ in range(iterations):
            discriminator(images, maps=maps)


def _sample_indices(
    data: _TrainSet, batch_size: int, rng: np.random.Generator, balanced: bool
) -> np.ndarray:
    if not balanced:
        return rng.integers(0, len(data), size=batch_size)
    classes = rng.choice(sorted(data.by_class), size=batch_size)
    return np.array([rng.choice(data.by_class[c]) for c in classes])


def _real_batch(
    data: _TrainSet,
    indices: np.ndarray,
    flips: np.ndarray,
    mode: str,
    pose_channels: str,
    image_size: int,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor | None]:
    imgs, maps = [], []
    for idx, flip in zip(indices, flips):
        arr = data.images[idx]
        if flip:
            arr = arr[:, ::-1]
        imgs.append(to_unit_tensor(arr))
        if mode == "pose":
            pose = data.poses[idx]
            if flip:
                pose = pose.flipped_horizontal()
            maps.append(render_map(pose, image_size, image_size, pose_channels).channels)
    images = torch.stack(imgs)
    labels = torch.from_numpy(data.labels[indices])
    map_batch = (
        torch.from_numpy(np.stack(maps).astype(np.float32)) if mode == "pose" else None
    )
    return images, labels, map_batch


def train_gan(
    config: GanTrainConfig,
    manifest: DatasetManifest,
    out_dir: str | Path,
    dataset_fingerprint: str = "",
) -> tuple[GanCheckpoint, list[GanLossReport]]:
    """Train a conditional GAN on the manifest's train split.

    Writes ``checkpoints/step_<N>/`` directories and appends to
    ``losses.csv`` under ``out_dir``; returns the final checkpoint and the
    logged loss stream. Deterministic given the config seed.
    """
    if config.mode not in ("label", "pose"):
        raise ValueError(f"unknown GAN mode {config.mode!r}")
    if config.d_steps < 1:
        raise ValueError("d_steps must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_root = out_dir / "checkpoints"

    h, w = manifest.image_size
    if h != w:
        raise ValueError(f"GAN training requires square images, got {manifest.image_size}")
    data = _TrainSet(manifest, config.mode)

    seeds = {
        "master": config.seed,
        "init": derive_seed(config.seed, "gan", "init"),
        "batches": derive_seed(config.seed, "gan", "batches"),
        "flips": derive_seed(config.seed, "gan", "flips"),
        "latents": derive_seed(config.seed, "gan", "latents"),
        "fake_labels": derive_seed(config.seed, "gan", "fake_labels"),
    }
    map_channels = map_channels_for_mode(config.pose_channels) if config.mode == "pose" else None
    meta = GanMeta(
        mode=config.mode,
        image_size=h,
        z_dim=config.z_dim,
        width=config.width,
        num_classes=manifest.num_classes if config.mode == "label" else None,
        map_channels=map_channels,
        pose_channels=config.pose_channels if config.mode == "pose" else None,
        embed_dim=config.embed_dim,
        spade_hidden=config.spade_hidden,
        lambda_cond=config.lambda_cond,
        d2dce_temperature=config.d2dce_temperature,
        d2dce_margin_pos=config.d2dce_margin_pos,
        d2dce_margin_neg=config.d2dce_margin_neg,
        dataset_fingerprint=dataset_fingerprint,
        seeds=seeds,
        ema=config.ema,
    )

    torch.manual_seed(seeds["init"])
    generator = meta.build_generator()
    discriminator = meta.build_discriminator()
    _warm_up_spectral_norm(discriminator, meta)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_g, betas=config.betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_d, betas=config.betas)
    ema_params = (
        [p.detach().clone() for p in generator.parameters()] if config.ema else None
    )

    rng_batches = np.random.default_rng(seeds["batches"])
    rng_flips = np.random.default_rng(seeds["flips"])
    rng_fake_labels = np.random.default_rng(seeds["fake_labels"])
    gen_z = torch.Generator().manual_seed(seeds["latents"])

    margins = (config.d2dce_margin_pos, config.d2dce_margin_neg)
    reports: list[GanLossReport] = []
    losses_path = out_dir / "losses.csv"
    new_file = not losses_path.exists()
    losses_file = losses_path.open("a", newline="")
    writer = csv.writer(losses_file)
    if new_file:
        writer.writerow(["step", "d_adv", "g_adv", "d2dce", "sn_max"])

    last_ckpt: Path | None = None

    def emit_checkpoint(step: int) -> Path:
        nonlocal last_ckpt
        state = GanCheckpoint(
            meta=replace(meta, step=step), generator=generator, discriminator=discriminator
        )
        if ema_params is not None:
            backup = [p.detach().clone() for p in generator.parameters()]
            with torch.no_grad():
                for p, e in zip(generator.parameters(), ema_params):
                    p.copy_(e)
            path = save_checkpoint(state, ckpt_root / f"step_{step:07d}")
            with torch.no_grad():
                for p, b in zip(generator.parameters(), backup):
                    p.copy_(b)
        else:
            path = save_checkpoint(state, ckpt_root / f"step_{step:07d}")
        last_ckpt = path
        return path

    def draw_fakes(batch: int, maps: torch.Tensor | None) -> tuple[torch.Tensor, torch.Tensor | None]:
        z = torch.randn(batch, config.z_dim, generator=gen_z)
        if config.mode == "label":
            labels = torch.from_numpy(
                rng_fake_labels.integers(0, manifest.num_classes, size=batch)
            )
            return generator(z, labels=labels), labels
        return generator(z, maps=maps), None

    emit_checkpoint(0)
    generator.train()
    discriminator.train()
    try:
        for step in range(1, config.steps + 1):
            d2dce_value = None
            for _ in range(config.d_steps):
                idx = _sample_indices(data, config.batch_size, rng_batches, config.balanced_batches)
                flips = (
                    rng_flips.random(config.batch_size) < 0.5
                    if config.hflip
                    else np.zeros(config.batch_size, dtype=bool)
                )
                real, real_labels, real_maps = _real_batch(
                    data, idx, flips, config.mode, config.pose_channels, h
                )
                with torch.no_grad():
                    fake, _ = draw_fakes(config.batch_size, real_maps)
                real_scores, real_emb = discriminator(real, maps=real_maps)
                fake_scores, _ = discriminator(fake, maps=real_maps)
                d_loss, _ = hinge_losses(real_scores, fake_scores)
                d_adv = float(d_loss.detach())
                if config.mode == "label":
                    cond = d2dce_loss(
                        real_emb,
                        real_labels,
                        discriminator.normalized_proxies(),
                        temperature=config.d2dce_temperature,
                        margins=margins,
                    )
                    d2dce_value = float(cond.detach())
                    if config.lambda_cond != 0.0:
                        d_loss = d_loss + config.lambda_cond * cond
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()

            fake, fake_labels = draw_fakes(config.batch_size, real_maps)
            fake_scores, fake_emb = discriminator(fake, maps=real_maps)
            g_loss = -fake_scores.mean()
            g_adv = float(g_loss.detach())
            if config.mode == "label" and config.lambda_cond != 0.0:
                g_loss = g_loss + config.lambda_cond * d2dce_loss(
                    fake_emb,
                    fake_labels,
                    discriminator.normalized_proxies(),
                    temperature=config.d2dce_temperature,
                    margins=margins,
                )
            opt_g.zero_grad()
            g_loss.backward()
            opt_g.step()
            if ema_params is not None:
                with torch.no_grad():
                    for p, e in zip(generator.parameters(), ema_params):
                        e.mul_(config.ema_decay).add_(p, alpha=1.0 - config.ema_decay)

            if not (np.isfinite(d_adv) and np.isfinite(g_adv)):
                raise GanTrainingError(
                    f"non-finite loss at step {step} (d_adv={d_adv}, g_adv={g_adv})",
                    step=step,
                    last_checkpoint=last_ckpt,
                )

            if step % config.log_every == 0 or step == config.steps:
                report = GanLossReport(
                    step=step,
                    d_adversarial=d_adv,
                    g_adversarial=g_adv,
                    d2dce=d2dce_value,
                    spectral_norm_max=spectral_norm_max(discriminator),
                )
                reports.append(report)
                writer.writerow(
                    [
                        step,
                        f"{report.d_adversarial:.6f}",
                        f"{report.g_adversarial:.6f}",
                        "" if report.d2dce is None else f"{report.d2dce:.6f}",
                        f"{report.spectral_norm_max:.6f}",
                    ]
                )
                losses_file.flush()
            if step % config.checkpoint_every == 0 and step != config.steps:
                emit_checkpoint(step)
        final_path = emit_checkpoint(config.steps)
    finally:
        losses_file.close()

    # reload from disk so the returned state always matches what was
    # persisted (notably when EMA weights were swapped in for the save)
    assert final_path == checkpoint_path(out_dir, config.steps)
    return load_checkpoint(final_path), reports


def checkpoint_steps(out_dir: str | Path) -> list[int]:
    """Steps of all checkpoints written under an output directory."""
    root = Path(out_dir) / "checkpoints"
    if not root.exists():
        return []
    return sorted(int(p.name.split("_")[1]) for p in root.glob("step_*") if p.is_dir())


def checkpoint_path(out_dir: str | Path, step: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"step_{step:07d}"
