"""GAN checkpoint persistence and inference entry points.

A checkpoint is a directory holding ``meta.json`` (conditioning mode,
geometry, loss weights, seed provenance, training step, dataset
fingerprint, schema version) plus the generator/discriminator parameter
blobs. Geometry and mode are immutable after creation; reloading
reproduces bit-identical forward outputs for identical inputs.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
import torch

from ..pose import ConditioningMap, map_channels_for_mode
from .nets import Discriminator, Generator

SCHEMA_VERSION = 1


class CheckpointError(ValueError):
    """Raised on mode/geometry contract violations or malformed checkpoints."""


@dataclass(frozen=True)
class GanMeta:
    """Everything needed to rebuild the networks and trace their origin."""

    mode: str                       # "label" or "pose"
    image_size: int
    z_dim: int
    width: int
    num_classes: int | None = None  # label mode
    map_channels: int | None = None  # pose mode
    pose_channels: str | None = None  # "joints" or "bones" (pose mode)
    embed_dim: int = 64
    spade_hidden: int = 32
    lambda_cond: float = 1.0
    d2dce_temperature: float = 0.25
    d2dce_margin_pos: float = 0.98
    d2dce_margin_neg: float = 1.0
    step: int = 0
    dataset_fingerprint: str = ""
    seeds: dict = field(default_factory=dict)
    ema: bool = False
    schema_version: int = SCHEMA_VERSION

    def build_generator(self) -> Generator:
        return Generator(
            mode=self.mode,
            image_size=self.image_size,
            z_dim=self.z_dim,
            width=self.width,
            num_classes=self.num_classes,
            map_channels=self.map_channels,
            spade_hidden=self.spade_hidden,
        )

    def build_discriminator(self) -> Discriminator:
        return Discriminator(
            mode=self.mode,
            image_size=self.image_size,
            width=self.width,
            num_classes=self.num_classes,
            map_channels=self.map_channels,
            embed_dim=self.embed_dim,
        )


@dataclass
class GanCheckpoint:
    """In-memory checkpoint: immutable meta plus loaded networks."""

    meta: GanMeta
    generator: Generator
    discriminator: Discriminator
    fingerprint: str = ""

    def eval_(self) -> "GanCheckpoint":
        self.generator.eval()
        self.discriminator.eval()
        return self


@dataclass(frozen=True)
class LatentCode:
    """A z vector together with the seed that produced it."""

    values: torch.Tensor
    seed: int

    def __post_init__(self) -> None:
        if self.values.dim() != 1:
            raise ValueError(f"latent must be a vector, got shape {tuple(self.values.shape)}")


def latent_from_seed(seed: int, z_dim: int) -> LatentCode:
    """Standard-normal latent reproducible from its seed."""
    g = torch.Generator().manual_seed(int(seed))
    return LatentCode(values=torch.randn(z_dim, generator=g), seed=int(seed))


@dataclass(frozen=True)
class GanCondition:
    """Exactly one of label / map, matching the conditioning mode."""

    mode: str
    label: int | None = None
    map: ConditioningMap | None = None

    def __post_init__(self) -> None:
        if self.mode == "label":
            if self.label is None or self.map is not None:
                raise CheckpointError("label condition must carry a label and no map")
        elif self.mode == "pose":
            if self.map is None or self.label is not None:
                raise CheckpointError("pose condition must carry a map and no label")
        else:
            raise CheckpointError(f"unknown condition mode {self.mode!r}")


def _state_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(checkpoint: GanCheckpoint, directory: str | Path) -> Path:
    """Persist to a directory; meta.json is written last so a complete
    meta marks a complete checkpoint."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, module in (
        ("generator.pt", checkpoint.generator),
        ("discriminator.pt", checkpoint.discriminator),
    ):
        tmp = directory / (name + ".tmp")
        torch.save(module.state_dict(), tmp)
        tmp.replace(directory / name)
    if not checkpoint.fingerprint:
        checkpoint.fingerprint = f"gan-{_state_digest(checkpoint.generator)}"
    meta = asdict(checkpoint.meta)
    meta["fingerprint"] = checkpoint.fingerprint
    tmp = directory / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(directory / "meta.json")
    return directory


def load_checkpoint(directory: str | Path) -> GanCheckpoint:
    """Rebuild networks from meta.json and load their parameters."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise CheckpointError(f"no meta.json under {directory}")
    raw = json.loads(meta_path.read_text(encoding="utf-8"))
    fingerprint = raw.pop("fingerprint", "")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint schema {raw.get('schema_version')!r}"
        )
    meta = GanMeta(**raw)
    generator = meta.build_generator()
    discriminator = meta.build_discriminator()
    generator.load_state_dict(torch.load(directory / "generator.pt", weights_only=True))
    discriminator.load_state_dict(
        torch.load(directory / "discriminator.pt", weights_only=True)
    )
    return GanCheckpoint(
        meta=meta, generator=generator, discriminator=discriminator, fingerprint=fingerprint
    ).eval_()


def _check_condition(meta: GanMeta, condition: GanCondition) -> None:
    if condition.mode != meta.mode:
        raise CheckpointError(
            f"condition mode {condition.mode!r} does not match checkpoint mode {meta.mode!r}"
        )
    if meta.mode == "label" and not 0 <= condition.label < meta.num_classes:
        raise CheckpointError(f"label {condition.label} out of range [0, {meta.num_classes})")
    if meta.mode == "pose":
        cmap = condition.map
        if cmap.num_channels != meta.map_channels:
            raise CheckpointError(
                f"map has {cmap.num_channels} channels, checkpoint expects {meta.map_channels}"
            )
        if (cmap.height, cmap.width) != (meta.image_size, meta.image_size):
            raise CheckpointError(
                f"map geometry {(cmap.height, cmap.width)} does not match "
                f"image size {meta.image_size}"
            )


def _maps_tensor(maps: list[ConditioningMap]) -> torch.Tensor:
    return torch.from_numpy(np.stack([m.channels for m in maps]).astype(np.float32))


def generate_batch(
    checkpoint: GanCheckpoint,
    latents: list[LatentCode],
    conditions: list[GanCondition],
) -> torch.Tensor:
    """Batched deterministic generation; returns (N, 3, H, W) in [-1, 1]."""
    if len(latents) != len(conditions):
        raise ValueError("latents and conditions must have equal length")
    meta = checkpoint.meta
    for cond in conditions:
        _check_condition(meta, cond)
    for lat in latents:
        if lat.values.shape[0] != meta.z_dim:
            raise CheckpointError(
                f"latent dimension {lat.values.shape[0]} does not match z_dim {meta.z_dim}"
            )
    z = torch.stack([lat.values for lat in latents])
    checkpoint.generator.eval()
    with torch.no_grad():
        if meta.mode == "label":
            labels = torch.tensor([c.label for c in conditions], dtype=torch.long)
            return checkpoint.generator(z, labels=labels)
        maps = _maps_tensor([c.map for c in conditions])
        return checkpoint.generator(z, maps=maps)


def generator_forward(
    checkpoint: GanCheckpoint, latent: LatentCode, condition: GanCondition
) -> torch.Tensor:
    """Single-sample generation; returns (3, H, W) in [-1, 1]."""
    return generate_batch(checkpoint, [latent], [condition])[0]


def discriminator_forward(
    checkpoint: GanCheckpoint, image: torch.Tensor, condition: GanCondition
) -> tuple[float, torch.Tensor | None]:
    """Score one image; label mode also returns the unit-norm embedding."""
    meta = checkpoint.meta
    _check_condition(meta, condition)
    if image.shape != (3, meta.image_size, meta.image_size):
        raise CheckpointError(
            f"image shape {tuple(image.shape)} does not match checkpoint geometry "
            f"(3, {meta.image_size}, {meta.image_size})"
        )
    checkpoint.discriminator.eval()
    with torch.no_grad():
        batch = image.unsqueeze(0)
        if meta.mode == "pose":
            scores, emb = checkpoint.discriminator(batch, maps=_maps_tensor([condition.map]))
        else:
            scores, emb = checkpoint.discriminator(batch)
    return float(scores[0]), (emb[0] if emb is not None else None)
