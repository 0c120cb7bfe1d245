"""Experiment configuration tree with lossless YAML round-tripping.

The master seed fixes every derived seed in the pipeline; stages hash the
config subsections they consume, so editing one section invalidates only
the stages that depend on it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_args, get_origin

import yaml

from ..classifier.schedules import MixupLambdaSampler, TrainingSchedule
from ..classifier.train import StrategyConfig
from ..gan.train import GanTrainConfig
from .toy import LONG_TAIL_COUNTS


@dataclass(frozen=True)
class ToySpec:
    counts: tuple[int, ...] = LONG_TAIL_COUNTS
    style: str = "light"
    image_size: int = 64


@dataclass(frozen=True)
class DatasetSection:
    manifest: str | None = None      # external manifest path
    toy: ToySpec | None = None       # or a procedural dataset
    split: tuple[float, float, float] = (0.6, 0.1, 0.3)
    subsample_k: int | None = None

    def __post_init__(self) -> None:
        if (self.manifest is None) == (self.toy is None):
            raise ValueError("dataset section needs exactly one of manifest / toy")


@dataclass(frozen=True)
class GanSection:
    mode: str = "label"
    pose_channels: str = "bones"
    z_dim: int = 64
    width: int = 48
    embed_dim: int = 64
    spade_hidden: int = 32
    steps: int = 2000
    batch_size: int = 32
    d_steps: int = 1
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
    # multi-source: train the GAN on this dataset instead of the main one
    source_manifest: str | None = None
    source_toy: ToySpec | None = None
    source_split: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def train_config(self, seed: int) -> GanTrainConfig:
        names = {f.name for f in dataclasses.fields(GanTrainConfig)}
        kwargs = {k: v for k, v in dataclasses.asdict(self).items() if k in names}
        kwargs["betas"] = tuple(kwargs["betas"])
        return GanTrainConfig(seed=seed, **kwargs)

    @property
    def has_source(self) -> bool:
        return self.source_manifest is not None or self.source_toy is not None


@dataclass(frozen=True)
class SynthesisSection:
    n_per_class: int = 1000  # >1000 per class granted no major improvement upstream
    mode: str = "balanced"   # "balanced" or "passthrough" (pose mode only)
    filter_fraction: float = 1.0
    metrics_samples: int = 512


@dataclass(frozen=True)
class ScheduleSpec:
    direction: str = "decreasing"
    alpha: float = 1.0
    beta: float = 0.05

    def to_schedule(self) -> TrainingSchedule:
        return TrainingSchedule(self.direction, self.alpha, self.beta)


@dataclass(frozen=True)
class ClassifierSection:
    methods: tuple[str, ...] = ("REAL", "PRETRAIN")
    seeds: tuple[int, ...] = (0, 1, 2)
    width: int = 32
    batch_size: int = 32
    max_epochs: int = 60
    patience: int = 8
    pretrain_max_epochs: int = 40
    pretrain_patience: int = 5
    lr: float = 1e-4
    betas: tuple[float, float] = (0.0, 0.999)
    eps: float = 1e-6
    hflip: bool = True
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    mixup_schedule: ScheduleSpec = field(
        default_factory=lambda: ScheduleSpec("increasing", 0.5, 0.05)
    )
    mixup_lambda: str = "uniform"
    mixup_beta_a: float = 1.0
    init_weights: str | None = None

    def strategy_config(self, method: str) -> StrategyConfig:
        return StrategyConfig(
            strategy=method,
            schedule=self.schedule.to_schedule(),
            mixup_schedule=self.mixup_schedule.to_schedule(),
            mixup_sampler=MixupLambdaSampler(self.mixup_lambda, self.mixup_beta_a),
            width=self.width,
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            pretrain_max_epochs=self.pretrain_max_epochs,
            pretrain_patience=self.pretrain_patience,
            lr=self.lr,
            betas=tuple(self.betas),
            eps=self.eps,
            hflip=self.hflip,
            init_weights=self.init_weights,
        )


@dataclass(frozen=True)
class MetricsSection:
    enabled: bool = True
    k: int = 5
    is_splits: int = 10


@dataclass(frozen=True)
class SweepSection:
    k_values: tuple[int, ...] = (5, 10, 20)


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs/experiment"
    master_seed: int = 0
    threads: int | None = None
    dataset: DatasetSection = field(default_factory=lambda: DatasetSection(toy=ToySpec()))
    gan: GanSection = field(default_factory=GanSection)
    synthesis: SynthesisSection = field(default_factory=SynthesisSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    sweep: SweepSection = field(default_factory=SweepSection)


def _to_plain(value: Any) -> Any:
    if dataclasses.is_dataclass(value):
        return {f.name: _to_plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (list, tuple)):
        return [_to_plain(v) for v in value]
    return value


def _from_plain(cls: Any, data: Any) -> Any:
    if data is None:
        return None
    origin = get_origin(cls)
    if origin is tuple:
        args = get_args(cls)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_from_plain(args[0], v) for v in data)
        return tuple(_from_plain(a, v) for a, v in zip(args, data))
    if cls in (int, float, str, bool):
        return cls(data)
    if origin is None and isinstance(cls, type) and dataclasses.is_dataclass(cls):
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in data:
                kwargs[f.name] = _from_plain(_resolve_type(f.type, cls), data[f.name])
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
        return cls(**kwargs)
    # optional / union annotations resolve through their non-None arm
    args = [a for a in get_args(cls) if a is not type(None)]
    if args:
        return _from_plain(args[0], data)
    return data


_TYPE_NAMESPACE = {
    "ToySpec": ToySpec,
    "DatasetSection": DatasetSection,
    "GanSection": GanSection,
    "SynthesisSection": SynthesisSection,
    "ScheduleSpec": ScheduleSpec,
    "ClassifierSection": ClassifierSection,
    "MetricsSection": MetricsSection,
    "SweepSection": SweepSection,
}


def _resolve_type(annotation: Any, owner: type) -> Any:
    if isinstance(annotation, str):
        import typing

        return eval(annotation, {**vars(typing), **_TYPE_NAMESPACE, "tuple": tuple})  # noqa: S307
    return annotation


def config_to_dict(config: ExperimentConfig) -> dict:
    return _to_plain(config)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _from_plain(ExperimentConfig, data)


def load_config(path: str | Path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    return config_from_dict(data)


def save_config(config: ExperimentConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        yaml.safe_dump(config_to_dict(config), sort_keys=True), encoding="utf-8"
    )
    return path
