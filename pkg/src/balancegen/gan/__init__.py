"""Conditional GAN training under label or pose conditioning."""

from .checkpoint import (
    GanCheckpoint,
    GanCondition,
    GanMeta,
    LatentCode,
    discriminator_forward,
    generate_batch,
    generator_forward,
    latent_from_seed,
    load_checkpoint,
    save_checkpoint,
)
from .losses import d2dce_loss, hinge_losses
from .nets import ClassConditionalBatchNorm, Discriminator, Generator, SpadeNorm, spade_modulate
from .train import GanLossReport, GanTrainConfig, GanTrainingError, train_gan

__all__ = [
    "ClassConditionalBatchNorm",
    "Discriminator",
    "GanCheckpoint",
    "GanCondition",
    "GanLossReport",
    "GanMeta",
    "GanTrainConfig",
    "GanTrainingError",
    "Generator",
    "LatentCode",
    "SpadeNorm",
    "d2dce_loss",
    "discriminator_forward",
    "generate_batch",
    "generator_forward",
    "hinge_losses",
    "latent_from_seed",
    "load_checkpoint",
    "save_checkpoint",
    "spade_modulate",
    "train_gan",
]
