"""Training strategies over real and synthetic data, plus evaluation.

Four strategies:

- REAL: cross-entropy on real data only (the baseline);
- PRETRAIN: full pass on synthetic data until a synthetic hold-out
  plateaus, then fine-tuning on real data;
- REGULARIZER: per-epoch loss = L(real) + sigma(epoch) * L(synthetic);
- MIXUP: per batch, either real/real or real/synthetic mixup, chosen by
  comparing a uniform draw against sigma(epoch).

All strategies share the optimizer settings (Adam, lr 1e-4, betas
(0.0, 0.999), eps 1e-6) and identical weight initialization under a given
seed, so strategy comparisons hold initialization constant. Training is
deterministic given (seed, single-worker loading); REGULARIZER with a
constant sigma of 0 reproduces the REAL parameter trajectory exactly.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from ..datasets import DatasetManifest
from ..images import load_image, to_unit_tensor
from ..seeding import derive_seed
from .backbone import SmallResNet
from .schedules import (
    MixupLambdaSampler,
    TrainingSchedule,
    choose_mixup_source,
    mixup_batch,
    sigma_schedule,
)

STRATEGIES = ("REAL", "PRETRAIN", "REGULARIZER", "MIXUP")
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class LabeledImageArray:
    """In-memory labeled image stack: (N, H, W, 3) uint8 plus labels."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.images.ndim != 4 or self.images.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"images {self.images.shape} and labels {self.labels.shape} disagree"
            )

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True)
class StrategyConfig:
    """How to combine real and synthetic data for one training run."""

    strategy: str = "REAL"
    schedule: TrainingSchedule = TrainingSchedule("decreasing", alpha=1.0, beta=0.05)
    mixup_schedule: TrainingSchedule = TrainingSchedule("increasing", alpha=0.5, beta=0.05)
    mixup_sampler: MixupLambdaSampler = MixupLambdaSampler("uniform")
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
    init_weights: str | None = None  # optional pretrained-weights hook

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.max_epochs < 1 or self.pretrain_max_epochs < 1:
            raise ValueError("epoch budgets must be >= 1")


@dataclass(frozen=True)
class EvalReport:
    """Accuracy summary: overall, per class, confusion, and the epoch curve."""

    overall_accuracy: float
    per_class_accuracy: tuple[float, ...]
    confusion: tuple[tuple[int, ...], ...]
    epoch_curve: tuple[dict, ...] = ()
    epochs_trained: int = 0
    pretrain_curve: tuple[dict, ...] = ()
    pretrain_epochs: int = 0

    def __post_init__(self) -> None:
        total = sum(sum(row) for row in self.confusion)
        trace = sum(self.confusion[i][i] for i in range(len(self.confusion)))
        if total > 0 and abs(self.overall_accuracy - trace / total) > 1e-9:
            raise ValueError("overall accuracy does not equal confusion trace / total")
        if len(self.per_class_accuracy) != len(self.confusion):
            raise ValueError("per-class vector length does not match confusion size")

    @property
    def num_classes(self) -> int:
        return len(self.per_class_accuracy)

    @property
    def supports(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.confusion)

    def macro_accuracy(self) -> float:
        """Mean per-class accuracy over classes present in the split."""
        vals = [a for a, s in zip(self.per_class_accuracy, self.supports) if s > 0]
        return float(np.mean(vals)) if vals else 0.0

    @classmethod
    def from_confusion(
        cls,
        confusion: np.ndarray,
        epoch_curve: tuple[dict, ...] = (),
        epochs_trained: int = 0,
        pretrain_curve: tuple[dict, ...] = (),
        pretrain_epochs: int = 0,
    ) -> "EvalReport":
        confusion = np.asarray(confusion, dtype=np.int64)
        supports = confusion.sum(axis=1)
        total = int(supports.sum())
        overall = float(np.trace(confusion) / total) if total else 0.0
        per_class = tuple(
            float(confusion[c, c] / supports[c]) if supports[c] else 0.0
            for c in range(confusion.shape[0])
        )
        return cls(
            overall_accuracy=overall,
            per_class_accuracy=per_class,
            confusion=tuple(tuple(int(v) for v in row) for row in confusion),
            epoch_curve=epoch_curve,
            epochs_trained=epochs_trained,
            pretrain_curve=pretrain_curve,
            pretrain_epochs=pretrain_epochs,
        )


def save_eval_report(report: EvalReport, directory: str | Path) -> Path:
    """Write eval.json plus curve.csv and per_class.csv."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    payload = asdict(report)
    payload["macro_accuracy"] = report.macro_accuracy()
    (directory / "eval.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8"
    )
    with (directory / "curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_acc", "val_acc", "sigma"])
        for i, entry in enumerate(report.epoch_curve):
            writer.writerow(
                [i, f"{entry['train_acc']:.6f}", f"{entry['val_acc']:.6f}", f"{entry['sigma']:.6f}"]
            )
    with (directory / "per_class.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "support", "accuracy"])
        for c, (acc, sup) in enumerate(zip(report.per_class_accuracy, report.supports)):
            writer.writerow([c, sup, f"{acc:.6f}"])
    return directory


def load_eval_report(directory: str | Path) -> EvalReport:
    payload = json.loads((Path(directory) / "eval.json").read_text(encoding="utf-8"))
    payload.pop("macro_accuracy", None)
    payload["per_class_accuracy"] = tuple(payload["per_class_accuracy"])
    payload["confusion"] = tuple(tuple(row) for row in payload["confusion"])
    payload["epoch_curve"] = tuple(payload["epoch_curve"])
    payload["pretrain_curve"] = tuple(payload.get("pretrain_curve", ()))
    return EvalReport(**payload)


@dataclass
class ClassifierCheckpoint:
    """Trained classifier plus the metadata needed to rebuild and trace it."""

    model: SmallResNet
    num_classes: int
    image_size: tuple[int, int]
    width: int
    strategy: str = ""
    seed: int = 0
    epochs_trained: int = 0
    fingerprint: str = ""

    def state_fingerprint(self) -> str:
        h = hashlib.sha256()
        for name, tensor in sorted(self.model.state_dict().items()):
            h.update(name.encode())
            h.update(tensor.detach().cpu().numpy().tobytes())
        return h.hexdigest()[:16]


def save_classifier(checkpoint: ClassifierCheckpoint, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tmp = directory / "model.pt.tmp"
    torch.save(checkpoint.model.state_dict(), tmp)
    tmp.replace(directory / "model.pt")
    meta = {
        "num_classes": checkpoint.num_classes,
        "image_size": list(checkpoint.image_size),
        "width": checkpoint.width,
        "strategy": checkpoint.strategy,
        "seed": checkpoint.seed,
        "epochs_trained": checkpoint.epochs_trained,
        "fingerprint": checkpoint.fingerprint or checkpoint.state_fingerprint(),
        "schema_version": SCHEMA_VERSION,
    }
    tmp = directory / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2, sort_keys=True), encoding="utf-8")
    tmp.replace(directory / "meta.json")
    return directory


def load_classifier(directory: str | Path) -> ClassifierCheckpoint:
    directory = Path(directory)
    meta = json.loads((directory / "meta.json").read_text(encoding="utf-8"))
    model = SmallResNet(num_classes=meta["num_classes"], width=meta["width"])
    model.load_state_dict(torch.load(directory / "model.pt", weights_only=True))
    model.eval()
    return ClassifierCheckpoint(
        model=model,
        num_classes=meta["num_classes"],
        image_size=tuple(meta["image_size"]),
        width=meta["width"],
        strategy=meta.get("strategy", ""),
        seed=meta.get("seed", 0),
        epochs_trained=meta.get("epochs_trained", 0),
        fingerprint=meta.get("fingerprint", ""),
    )


class ClassifierEmbedder:
    """Penultimate-layer feature embedder / class-probability scorer."""

    def __init__(self, checkpoint: ClassifierCheckpoint, batch_size: int = 128):
        self.checkpoint = checkpoint
        self.batch_size = batch_size
        self.image_size = tuple(checkpoint.image_size)
        fp = checkpoint.fingerprint or checkpoint.state_fingerprint()
        self.fingerprint = f"clf-w{checkpoint.width}-{fp}"

    def _batches(self, images: np.ndarray):
        model = self.checkpoint.model
        model.eval()
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                chunk = images[start : start + self.batch_size]
                yield model, torch.stack([to_unit_tensor(img) for img in chunk])

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        feats = [model.features(x).numpy() for model, x in self._batches(images)]
        return np.concatenate(feats).astype(np.float64)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        probs = [
            F.softmax(model(x), dim=1).numpy() for model, x in self._batches(images)
        ]
        return np.concatenate(probs).astype(np.float64)


def _load_split_arrays(manifest: DatasetManifest, split: str) -> LabeledImageArray:
    records = manifest.split_records(split)
    if not records:
        return LabeledImageArray(
            images=np.zeros((0, *manifest.image_size, 3), dtype=np.uint8),
            labels=np.zeros((0,), dtype=np.int64),
        )
    images = np.stack([load_image(manifest.resolve_path(r), manifest.image_size) for r in records])
    labels = np.array([r.label for r in records], dtype=np.int64)
    return LabeledImageArray(images=images, labels=labels)


def _batch_tensors(
    data: LabeledImageArray, indices: np.ndarray, flips: np.ndarray
) -> tuple[torch.Tensor, torch.Tensor]:
    imgs = []
    for idx, flip in zip(indices, flips):
        arr = data.images[idx]
        imgs.append(to_unit_tensor(arr[:, ::-1] if flip else arr))
    return torch.stack(imgs), torch.from_numpy(data.labels[indices])


@torch.no_grad()
def _accuracy(model: SmallResNet, data: LabeledImageArray, batch_size: int = 256) -> float:
    if len(data) == 0:
        return 0.0
    model.eval()
    correct = 0
    for start in range(0, len(data), batch_size):
        chunk = data.images[start : start + batch_size]
        x = torch.stack([to_unit_tensor(img) for img in chunk])
        pred = model(x).argmax(dim=1).numpy()
        correct += int((pred == data.labels[start : start + batch_size]).sum())
    model.train()
    return correct / len(data)


class _EpochDriver:
    """Shared epoch loop: shuffling, flips, early stopping, curve recording."""

    def __init__(
        self,
        model: SmallResNet,
        optimizer: torch.optim.Optimizer,
        cfg: StrategyConfig,
        train: LabeledImageArray,
        val: LabeledImageArray,
        rng_data: np.random.Generator,
        rng_flips: np.random.Generator,
    ):
        self.model = model
        self.optimizer = optimizer
        self.cfg = cfg
        self.train = train
        self.val = val
        self.rng_data = rng_data
        self.rng_flips = rng_flips
        self.curve: list[dict] = []

    def batches(self):
        n = len(self.train)
        order = self.rng_data.permutation(n)
        bs = self.cfg.batch_size
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            flips = (
                self.rng_flips.random(len(idx)) < 0.5
                if self.cfg.hflip
                else np.zeros(len(idx), dtype=bool)
            )
            yield _batch_tensors(self.train, idx, flips)

    def run(self, max_epochs: int, patience: int, step_fn) -> int:
        """Run epochs until the validation accuracy plateaus.

        ``step_fn(epoch, x, y)`` performs one optimizer step and returns the
        loss. Returns the number of epochs run; the model is left at the
        best-validation-accuracy weights.
        """
        best_acc, best_state, since_best = -1.0, None, 0
        epochs = 0
        monitor = self.val if len(self.val) else self.train
        for epoch in range(max_epochs):
            self.model.train()
            for x, y in self.batches():
                loss = step_fn(epoch, x, y)
                if not math.isfinite(float(loss.detach())):
                    raise RuntimeError(f"non-finite classifier loss at epoch {epoch}")
            epochs = epoch + 1
            train_acc = _accuracy(self.model, self.train)
            val_acc = _accuracy(self.model, self.val) if len(self.val) else train_acc
            self.curve.append(
                {"train_acc": train_acc, "val_acc": val_acc, "sigma": self._sigma(epoch)}
            )
            monitor_acc = val_acc if monitor is self.val else train_acc
            if monitor_acc > best_acc:
                best_acc, since_best = monitor_acc, 0
                best_state = copy.deepcopy(self.model.state_dict())
            else:
                since_best += 1
                if since_best >= patience:
                    break
        if best_state is not None:
            self.model.load_state_dict(best_state)
        return epochs

    def _sigma(self, epoch: int) -> float:
        if self.cfg.strategy == "REGULARIZER":
            return sigma_schedule(epoch, self.cfg.schedule)
        if self.cfg.strategy == "MIXUP":
            return sigma_schedule(epoch, self.cfg.mixup_schedule)
        return 0.0


def _soft_cross_entropy(logits: torch.Tensor, target_rows: torch.Tensor) -> torch.Tensor:
    return -(target_rows * F.log_softmax(logits, dim=1)).sum(dim=1).mean()


def train_classifier(
    strategy: StrategyConfig,
    real: DatasetManifest,
    synthetic: LabeledImageArray | None,
    seed: int,
) -> tuple[ClassifierCheckpoint, EvalReport]:
    """Train one classifier under the given strategy.

    ``synthetic`` must be None for REAL and present for every other
    strategy. The returned report carries the training epoch curve and a
    validation-split confusion; use :func:`evaluate` for held-out splits.
    """
    if strategy.strategy == "REAL":
        if synthetic is not None:
            raise ValueError("REAL strategy takes no synthetic set")
    elif synthetic is None or len(synthetic) == 0:
        raise ValueError(f"{strategy.strategy} strategy requires a synthetic set")
    if synthetic is not None and synthetic.labels.max(initial=0) >= real.num_classes:
        raise ValueError("synthetic labels exceed the real manifest's class count")

    train_arr = _load_split_arrays(real, "train")
    val_arr = _load_split_arrays(real, "val")
    if len(train_arr) == 0:
        raise ValueError("train split is empty")
    num_classes = real.num_classes

    torch.manual_seed(derive_seed(seed, "clf", "init"))
    model = SmallResNet(num_classes=num_classes, width=strategy.width)
    if strategy.init_weights:
        state = torch.load(strategy.init_weights, weights_only=True)
        model.load_state_dict(state)
    optimizer = torch.optim.Adam(
        model.parameters(), lr=strategy.lr, betas=strategy.betas, eps=strategy.eps
    )

    rng_data = np.random.default_rng(derive_seed(seed, "clf", "data"))
    rng_flips = np.random.default_rng(derive_seed(seed, "clf", "flips"))
    rng_synth = np.random.default_rng(derive_seed(seed, "clf", "synthetic"))
    rng_mix = np.random.default_rng(derive_seed(seed, "clf", "mixup"))

    pretrain_curve: tuple[dict, ...] = ()
    pretrain_epochs = 0

    def ce_step(epoch: int, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
        loss = F.cross_entropy(model(x), y)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        return loss

    if strategy.strategy == "PRETRAIN":
        # phase 1: synthetic-only, early-stopped on a synthetic hold-out
        n = len(synthetic)
        order = np.random.default_rng(derive_seed(seed, "clf", "synthval")).permutation(n)
        n_val = max(1, n // 10) if n > 1 else 0
        val_idx, train_idx = order[:n_val], order[n_val:]
        synth_train = LabeledImageArray(synthetic.images[train_idx], synthetic.labels[train_idx])
        synth_val = LabeledImageArray(synthetic.images[val_idx], synthetic.labels[val_idx])
        driver = _EpochDriver(
            model, optimizer, strategy, synth_train, synth_val, rng_data, rng_flips
        )
        pretrain_epochs = driver.run(
            strategy.pretrain_max_epochs, strategy.pretrain_patience, ce_step
        )
        pretrain_curve = tuple(driver.curve)

    driver = _EpochDriver(model, optimizer, strategy, train_arr, val_arr, rng_data, rng_flips)

    if strategy.strategy in ("REAL", "PRETRAIN"):
        step_fn = ce_step
    elif strategy.strategy == "REGULARIZER":

        def step_fn(epoch: int, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
            sigma = sigma_schedule(epoch, strategy.schedule)
            loss = F.cross_entropy(model(x), y)
            if sigma > 0.0:
                idx = rng_synth.integers(0, len(synthetic), size=x.shape[0])
                flips = (
                    rng_synth.random(len(idx)) < 0.5
                    if strategy.hflip
                    else np.zeros(len(idx), dtype=bool)
                )
                sx, sy = _batch_tensors(synthetic, idx, flips)
                loss = loss + sigma * F.cross_entropy(model(sx), sy)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            return loss

    else:  # MIXUP

        def step_fn(epoch: int, x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
            branch = choose_mixup_source(epoch, strategy.mixup_schedule, float(rng_mix.random()))
            if branch == "real-real":
                source: LabeledImageArray = train_arr
                idx = rng_mix.integers(0, len(source), size=x.shape[0])
            else:
                source = synthetic
                idx = rng_synth.integers(0, len(source), size=x.shape[0])
            flips = (
                rng_mix.random(len(idx)) < 0.5
                if strategy.hflip
                else np.zeros(len(idx), dtype=bool)
            )
            px, py = _batch_tensors(source, idx, flips)
            y_rows = F.one_hot(y, num_classes).to(torch.float32)
            py_rows = F.one_hot(py, num_classes).to(torch.float32)
            mx, my = mixup_batch((x, y_rows), (px, py_rows), strategy.mixup_sampler, rng_mix)
            loss = _soft_cross_entropy(model(mx), my)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            return loss

    epochs = driver.run(strategy.max_epochs, strategy.patience, step_fn)

    model.eval()
    confusion = _confusion(model, val_arr if len(val_arr) else train_arr, num_classes)
    report = EvalReport.from_confusion(
        confusion,
        epoch_curve=tuple(driver.curve),
        epochs_trained=epochs,
        pretrain_curve=pretrain_curve,
        pretrain_epochs=pretrain_epochs,
    )
    checkpoint = ClassifierCheckpoint(
        model=model,
        num_classes=num_classes,
        image_size=real.image_size,
        width=strategy.width,
        strategy=strategy.strategy,
        seed=seed,
        epochs_trained=epochs,
    )
    checkpoint.fingerprint = checkpoint.state_fingerprint()
    return checkpoint, report


@torch.no_grad()
def _confusion(model: SmallResNet, data: LabeledImageArray, num_classes: int) -> np.ndarray:
    model.eval()
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for start in range(0, len(data), 256):
        chunk = data.images[start : start + 256]
        x = torch.stack([to_unit_tensor(img) for img in chunk])
        pred = model(x).argmax(dim=1).numpy()
        for t, p in zip(data.labels[start : start + 256], pred):
            confusion[t, p] += 1
    return confusion


def evaluate(
    checkpoint: ClassifierCheckpoint, manifest: DatasetManifest, split: str
) -> EvalReport:
    """Deterministic accuracy/confusion evaluation on one split."""
    data = _load_split_arrays(manifest, split)
    if len(data) == 0:
        raise ValueError(f"split {split!r} is empty")
    if manifest.num_classes != checkpoint.num_classes:
        raise ValueError(
            f"manifest has {manifest.num_classes} classes, checkpoint has "
            f"{checkpoint.num_classes}"
        )
    confusion = _confusion(checkpoint.model, data, checkpoint.num_classes)
    return EvalReport.from_confusion(confusion)


def per_class_delta(report_treated: EvalReport, report_baseline: EvalReport) -> np.ndarray:
    """treated minus baseline per-class accuracy; entries lie in [-1, 1]."""
    if report_treated.num_classes != report_baseline.num_classes:
        raise ValueError("reports have different class counts")
    return np.array(report_treated.per_class_accuracy) - np.array(
        report_baseline.per_class_accuracy
    )


def epochs_to_threshold(epoch_curve, threshold: float) -> int | None:
    """Index of the first epoch whose train accuracy reaches the threshold.

    Accepts either a sequence of train accuracies or of curve dicts.
    Reports the first crossing, not a sustained one; None if never reached.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    for i, entry in enumerate(epoch_curve):
        acc = entry["train_acc"] if isinstance(entry, dict) else float(entry)
        if acc >= threshold:
            return i
    return None
