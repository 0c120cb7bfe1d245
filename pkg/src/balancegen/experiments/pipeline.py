"""Dependency-ordered pipeline stages with content-addressed resume.

Each stage hashes the config subsections and input fingerprints it
consumes into a stage fingerprint stored in ``<stage>/fingerprint.json``.
Re-running with an unchanged config skips completed stages; a changed
config conflicts with existing stage outputs and requires ``--force``
(GAN training dominates runtime and must never silently rerun). Every
artifact directory carries enough provenance (config copy, seeds,
fingerprints) to reproduce it from scratch; ``run.json`` at the output
root records the full picture.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import shutil
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .. import __version__
from ..classifier.train import (
    ClassifierEmbedder,
    load_classifier,
    save_classifier,
    save_eval_report,
    evaluate,
    train_classifier,
)
from ..datasets import (
    DatasetManifest,
    load_manifest,
    save_manifest,
    split as split_manifest,
    stratified_subsample,
)
from ..gan.checkpoint import load_checkpoint
from ..gan.train import checkpoint_path, train_gan
from ..images import load_image
from ..metrics import build_report, embed, save_real_stats
from ..seeding import derive_seed
from ..synthesis import (
    filter_topk,
    generate_balanced,
    generate_from_poses,
    load_synthetic_dataset,
    save_synthetic_dataset,
    score_samples,
)
from .config import ExperimentConfig, config_to_dict, save_config
from .report import emit_report
from .toy import make_toy_dataset

STAGE_ORDER = (
    "prepare",
    "prepare-source",
    "train-gan",
    "generate",
    "filter",
    "train-clf",
    "evaluate",
    "metrics",
    "report",
)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage


class StaleStageError(StageError):
    """Stage outputs exist under a different fingerprint; pass --force."""


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def payload_fingerprint(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class PipelineContext:
    config: ExperimentConfig
    out_root: Path
    force: bool = False
    fingerprints: dict[str, str] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    _manifests: dict[str, DatasetManifest] = field(default_factory=dict)

    def stage_dir(self, stage: str) -> Path:
        return self.out_root / stage

    def seed(self, *scope) -> int:
        return derive_seed(self.config.master_seed, *scope)

    def prepared_manifest(self, stage: str = "prepare") -> DatasetManifest:
        if stage not in self._manifests:
            self._manifests[stage] = load_manifest(self.stage_dir(stage) / "manifest.tsv")
        return self._manifests[stage]

    def manifest_digest(self, stage: str = "prepare") -> str:
        return file_digest(self.stage_dir(stage) / "manifest.tsv")


def _run_stage(ctx: PipelineContext, stage: str, fingerprint: str, builder) -> None:
    stage_dir = ctx.stage_dir(stage)
    fp_file = stage_dir / "fingerprint.json"
    if fp_file.exists():
        existing = json.loads(fp_file.read_text(encoding="utf-8"))
        if existing.get("fingerprint") == fingerprint:
            ctx.fingerprints[stage] = fingerprint
            ctx.timings[stage] = 0.0
            return
        if not ctx.force:
            raise StaleStageError(
                stage,
                f"existing outputs were built from a different config "
                f"({existing.get('fingerprint')} != {fingerprint}); rerun with --force",
            )
        shutil.rmtree(stage_dir)
    elif stage_dir.exists() and ctx.force:
        shutil.rmtree(stage_dir)
    stage_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        builder(stage_dir)
    except StageError:
        raise
    except Exception as exc:  # halt with the failing stage named
        raise StageError(stage, str(exc)) from exc
    elapsed = time.time() - started
    fp_file.write_text(
        json.dumps(
            {
                "stage": stage,
                "fingerprint": fingerprint,
                "elapsed_s": round(elapsed, 3),
                "version": __version__,
            },
            indent=2,
        ),
        encoding="utf-8",
    )
    ctx.fingerprints[stage] = fingerprint
    ctx.timings[stage] = elapsed


def _reroot(manifest: DatasetManifest, new_root: Path) -> DatasetManifest:
    records = tuple(
        dataclasses.replace(
            rec,
            image_path=os.path.relpath(manifest.resolve_path(rec), new_root),
        )
        for rec in manifest.records
    )
    return dataclasses.replace(manifest, records=records, root=new_root)


def _prepare_dataset(
    ctx: PipelineContext,
    stage_dir: Path,
    manifest_path: str | None,
    toy_spec,
    fractions: tuple[float, float, float],
    subsample_k: int | None,
    seed_scope: str,
) -> None:
    if toy_spec is not None:
        manifest = make_toy_dataset(
            stage_dir / "toy",
            counts=tuple(toy_spec.counts),
            seed=ctx.seed(seed_scope, "toy"),
            style=toy_spec.style,
            image_size=toy_spec.image_size,
        )
    else:
        manifest = load_manifest(manifest_path)
    manifest = split_manifest(manifest, tuple(fractions), seed=ctx.seed(seed_scope, "split"))
    if subsample_k is not None:
        manifest = stratified_subsample(manifest, subsample_k, seed=ctx.seed(seed_scope, "subsample"))
    save_manifest(_reroot(manifest, stage_dir), stage_dir / "manifest.tsv")


def stage_prepare(ctx: PipelineContext) -> None:
    ds = ctx.config.dataset
    payload = {
        "dataset": config_to_dict(ctx.config)["dataset"],
        "seed": ctx.config.master_seed,
    }
    if ds.manifest is not None:
        payload["manifest_digest"] = file_digest(ds.manifest)

    def build(stage_dir: Path) -> None:
        _prepare_dataset(
            ctx, stage_dir, ds.manifest, ds.toy, ds.split, ds.subsample_k, "dataset"
        )

    _run_stage(ctx, "prepare", payload_fingerprint(payload), build)


def stage_prepare_source(ctx: PipelineContext) -> None:
    gan = ctx.config.gan
    if not gan.has_source:
        return
    payload = {
        "source": {
            "manifest": gan.source_manifest,
            "toy": config_to_dict(ctx.config)["gan"]["source_toy"],
            "split": list(gan.source_split),
        },
        "seed": ctx.config.master_seed,
    }
    if gan.source_manifest is not None:
        payload["manifest_digest"] = file_digest(gan.source_manifest)

    def build(stage_dir: Path) -> None:
        _prepare_dataset(
            ctx, stage_dir, gan.source_manifest, gan.source_toy, gan.source_split, None, "source"
        )

    _run_stage(ctx, "prepare-source", payload_fingerprint(payload), build)


def _gan_train_manifest_stage(ctx: PipelineContext) -> str:
    return "prepare-source" if ctx.config.gan.has_source else "prepare"


def stage_train_gan(ctx: PipelineContext) -> None:
    gan_cfg_dict = config_to_dict(ctx.config)["gan"]
    data_stage = _gan_train_manifest_stage(ctx)
    payload = {
        "gan": gan_cfg_dict,
        "dataset": ctx.manifest_digest(data_stage),
        "seed": ctx.seed("gan"),
    }

    def build(stage_dir: Path) -> None:
        manifest = ctx.prepared_manifest(data_stage)
        cfg = ctx.config.gan.train_config(seed=ctx.seed("gan"))
        train_gan(cfg, manifest, stage_dir, dataset_fingerprint=ctx.manifest_digest(data_stage))

    _run_stage(ctx, "train-gan", payload_fingerprint(payload), build)


def _final_gan_checkpoint(ctx: PipelineContext):
    return load_checkpoint(checkpoint_path(ctx.stage_dir("train-gan"), ctx.config.gan.steps))


def stage_generate(ctx: PipelineContext) -> None:
    syn = ctx.config.synthesis
    payload = {
        "gan": ctx.fingerprints["train-gan"],
        "n_per_class": syn.n_per_class,
        "mode": syn.mode,
        "target": ctx.manifest_digest("prepare"),
        "seed": ctx.seed("generate"),
    }

    def build(stage_dir: Path) -> None:
        ckpt = _final_gan_checkpoint(ctx)
        target = ctx.prepared_manifest()
        seed = ctx.seed("generate")
        if ckpt.meta.mode == "label":
            dataset = generate_balanced(ckpt, syn.n_per_class, target.num_classes, seed)
        else:
            dataset = generate_from_poses(
                ckpt,
                target,
                seed=seed,
                n_per_class=None if syn.mode == "passthrough" else syn.n_per_class,
                split="train",
                pose_source_fingerprint=ctx.manifest_digest("prepare"),
            )
        save_synthetic_dataset(dataset, stage_dir / "synthetic")

    _run_stage(ctx, "generate", payload_fingerprint(payload), build)


def stage_filter(ctx: PipelineContext) -> None:
    fraction = ctx.config.synthesis.filter_fraction
    payload = {
        "generate": ctx.fingerprints["generate"],
        "fraction": fraction,
    }
    if fraction < 1.0:  # the scorer enters the picture only when filtering
        payload.update(
            {
                "dataset": ctx.manifest_digest("prepare"),
                "classifier": config_to_dict(ctx.config)["classifier"],
                "seed": ctx.seed("scorer"),
            }
        )

    def build(stage_dir: Path) -> None:
        if fraction >= 1.0:
            (stage_dir / "passthrough.json").write_text(
                json.dumps({"passthrough": True, "fraction": 1.0}), encoding="utf-8"
            )
            return
        # the scorer is a regular classifier trained on real data only
        strategy = ctx.config.classifier.strategy_config("REAL")
        scorer, _ = train_classifier(
            strategy, ctx.prepared_manifest(), None, seed=ctx.seed("scorer")
        )
        save_classifier(scorer, stage_dir / "scorer")
        dataset = load_synthetic_dataset(ctx.stage_dir("generate") / "synthetic")
        scored = score_samples(scorer, dataset)
        filtered = filter_topk(scored, fraction)
        save_synthetic_dataset(filtered, stage_dir / "synthetic")

    _run_stage(ctx, "filter", payload_fingerprint(payload), build)


def effective_synthetic_dir(ctx: PipelineContext) -> Path:
    filtered = ctx.stage_dir("filter") / "synthetic"
    if filtered.exists():
        return filtered
    return ctx.stage_dir("generate") / "synthetic"


def _run_name(method: str, seed_value: int) -> str:
    return f"{method}-s{seed_value}"


def stage_train_clf(ctx: PipelineContext) -> None:
    clf = ctx.config.classifier
    payload = {
        "classifier": config_to_dict(ctx.config)["classifier"],
        "dataset": ctx.manifest_digest("prepare"),
        "synthetic": ctx.fingerprints["filter"],
        "seed": ctx.config.master_seed,
    }

    def build(stage_dir: Path) -> None:
        manifest = ctx.prepared_manifest()
        needs_synth = any(m != "REAL" for m in clf.methods)
        synthetic = (
            load_synthetic_dataset(effective_synthetic_dir(ctx)).to_labeled_array()
            if needs_synth
            else None
        )
        for method in clf.methods:
            strategy = clf.strategy_config(method)
            for seed_value in clf.seeds:
                run_seed = ctx.seed("clf", method, seed_value)
                started = time.time()
                ckpt, train_report = train_classifier(
                    strategy,
                    manifest,
                    synthetic if method != "REAL" else None,
                    seed=run_seed,
                )
                runtime = time.time() - started
                run_dir = stage_dir / _run_name(method, seed_value)
                save_classifier(ckpt, run_dir / "model")
                save_eval_report(train_report, run_dir / "train-report")
                (run_dir / "run.json").write_text(
                    json.dumps(
                        {
                            "method": method,
                            "seed": seed_value,
                            "derived_seed": run_seed,
                            "runtime_s": round(runtime, 3),
                            "epochs_trained": train_report.epochs_trained,
                            "pretrain_epochs": train_report.pretrain_epochs,
                        },
                        indent=2,
                    ),
                    encoding="utf-8",
                )

    _run_stage(ctx, "train-clf", payload_fingerprint(payload), build)


def stage_evaluate(ctx: PipelineContext) -> None:
    payload = {
        "train_clf": ctx.fingerprints["train-clf"],
        "dataset": ctx.manifest_digest("prepare"),
    }

    def build(stage_dir: Path) -> None:
        manifest = ctx.prepared_manifest()
        clf = ctx.config.classifier
        for method in clf.methods:
            for seed_value in clf.seeds:
                name = _run_name(method, seed_value)
                ckpt = load_classifier(ctx.stage_dir("train-clf") / name / "model")
                report = evaluate(ckpt, manifest, "test")
                save_eval_report(report, stage_dir / name)

    _run_stage(ctx, "evaluate", payload_fingerprint(payload), build)


def _split_images(manifest: DatasetManifest, split_name: str) -> np.ndarray:
    records = manifest.split_records(split_name)
    return np.stack([load_image(manifest.resolve_path(r), manifest.image_size) for r in records])


def _metrics_embedder(ctx: PipelineContext) -> ClassifierEmbedder:
    scorer_dir = ctx.stage_dir("filter") / "scorer"
    if scorer_dir.exists():
        return ClassifierEmbedder(load_classifier(scorer_dir))
    clf = ctx.config.classifier
    if "REAL" not in clf.methods:
        raise ValueError("metrics need a real-data classifier: add REAL to methods")
    name = _run_name("REAL", clf.seeds[0])
    return ClassifierEmbedder(load_classifier(ctx.stage_dir("train-clf") / name / "model"))


def _sample_synthetic_images(ctx: PipelineContext, n: int, seed: int) -> np.ndarray:
    dataset = load_synthetic_dataset(ctx.stage_dir("generate") / "synthetic")
    images = np.stack([s.image for s in dataset.samples])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images))
    return images[order[: min(n, len(images))]]


def _step0_images(ctx: PipelineContext, n: int, seed: int) -> np.ndarray:
    ckpt = load_checkpoint(checkpoint_path(ctx.stage_dir("train-gan"), 0))
    target = ctx.prepared_manifest()
    per_class = -(-n // target.num_classes)  # ceil
    if ckpt.meta.mode == "label":
        ds = generate_balanced(ckpt, per_class, target.num_classes, seed)
    else:
        ds = generate_from_poses(ckpt, target, seed=seed, n_per_class=per_class, split="train")
    images = np.stack([s.image for s in ds.samples])
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(images))
    return images[order[:n]]


def stage_metrics(ctx: PipelineContext) -> None:
    if not ctx.config.metrics.enabled:
        return
    met = ctx.config.metrics
    payload = {
        "metrics": config_to_dict(ctx.config)["metrics"],
        "n_samples": ctx.config.synthesis.metrics_samples,
        "generate": ctx.fingerprints["generate"],
        "gan": ctx.fingerprints["train-gan"],
        "embedder_source": ctx.fingerprints["filter"] + ctx.fingerprints["train-clf"],
        "dataset": ctx.manifest_digest("prepare"),
    }

    def build(stage_dir: Path) -> None:
        manifest = ctx.prepared_manifest()
        embedder = _metrics_embedder(ctx)
        n = ctx.config.synthesis.metrics_samples
        real_images = _split_images(manifest, "val")
        k = min(met.k, len(real_images) - 1)
        real_feats = embed(real_images, embedder)
        # cache the real-side statistics beside the validation manifest
        cache = ctx.stage_dir("prepare") / f"real_stats_{embedder.fingerprint}_k{k}.npz"
        if not cache.exists():
            save_real_stats(cache, real_feats, k=k)
        reports = {}
        for tag, images in (
            ("final", _sample_synthetic_images(ctx, n, ctx.seed("metrics", "final"))),
            ("step0", _step0_images(ctx, n, ctx.seed("metrics", "step0"))),
        ):
            gen_feats = embed(images, embedder)
            probs = embedder.predict_proba(images)
            splits = min(met.is_splits, len(images))
            reports[tag] = build_report(real_feats, gen_feats, probs, k=k, is_splits=splits)
        payload_out = {tag: r.to_dict() for tag, r in reports.items()}
        payload_out["fid_drop_fraction"] = (
            1.0 - reports["final"].fid / reports["step0"].fid
            if reports["step0"].fid > 0
            else 0.0
        )
        (stage_dir / "metrics.json").write_text(
            json.dumps(payload_out, indent=2, sort_keys=True), encoding="utf-8"
        )

    _run_stage(ctx, "metrics", payload_fingerprint(payload), build)


def stage_report(ctx: PipelineContext) -> None:
    payload = {
        "evaluate": ctx.fingerprints["evaluate"],
        "metrics": ctx.fingerprints.get("metrics", "disabled"),
    }

    def build(stage_dir: Path) -> None:
        emit_report(ctx.out_root, stage_dir, ctx.config)

    _run_stage(ctx, "report", payload_fingerprint(payload), build)


_STAGE_FUNCS = {
    "prepare": stage_prepare,
    "prepare-source": stage_prepare_source,
    "train-gan": stage_train_gan,
    "generate": stage_generate,
    "filter": stage_filter,
    "train-clf": stage_train_clf,
    "evaluate": stage_evaluate,
    "metrics": stage_metrics,
    "report": stage_report,
}


def run_pipeline(
    config: ExperimentConfig, through: str = "report", force: bool = False
) -> Path:
    """Execute stages in dependency order up to ``through``.

    Stages whose outputs exist with matching fingerprints are skipped.
    Returns the artifacts directory. Raises :class:`StageError` naming the
    failing stage on any failure.
    """
    if through not in STAGE_ORDER:
        raise ValueError(f"unknown stage {through!r}; choose from {STAGE_ORDER}")
    if config.threads:
        torch.set_num_threads(config.threads)
    out_root = Path(config.out_dir)
    out_root.mkdir(parents=True, exist_ok=True)
    ctx = PipelineContext(config=config, out_root=out_root, force=force)
    save_config(config, out_root / "config.yaml")
    for stage in STAGE_ORDER:
        _STAGE_FUNCS[stage](ctx)
        if stage == through:
            break
    run_info = {
        "version": __version__,
        "master_seed": config.master_seed,
        "derived_seeds": {
            "toy": ctx.seed("dataset", "toy"),
            "split": ctx.seed("dataset", "split"),
            "gan": ctx.seed("gan"),
            "generate": ctx.seed("generate"),
            "scorer": ctx.seed("scorer"),
        },
        "stages": ctx.fingerprints,
        "timings_s": {k: round(v, 3) for k, v in ctx.timings.items()},
        "config": config_to_dict(config),
    }
    (out_root / "run.json").write_text(
        json.dumps(run_info, indent=2, sort_keys=True), encoding="utf-8"
    )
    return out_root
