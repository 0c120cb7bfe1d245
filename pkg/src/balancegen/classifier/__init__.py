"""Classifier training strategies combining real and synthetic data."""

from .backbone import SmallResNet
from .schedules import (
    MixupLambdaSampler,
    TrainingSchedule,
    choose_mixup_source,
    mixup_batch,
    regularized_loss,
    sigma_schedule,
)
from .train import (
    ClassifierCheckpoint,
    ClassifierEmbedder,
    EvalReport,
    StrategyConfig,
    epochs_to_threshold,
    evaluate,
    load_classifier,
    per_class_delta,
    train_classifier,
)

__all__ = [
    "ClassifierCheckpoint",
    "ClassifierEmbedder",
    "EvalReport",
    "MixupLambdaSampler",
    "SmallResNet",
    "StrategyConfig",
    "TrainingSchedule",
    "choose_mixup_source",
    "epochs_to_threshold",
    "evaluate",
    "load_classifier",
    "mixup_batch",
    "per_class_delta",
    "regularized_loss",
    "sigma_schedule",
    "train_classifier",
]
