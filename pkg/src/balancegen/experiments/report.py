"""Result tables and plots assembled from on-disk evaluation artifacts.

Every row in results.csv is read back from an EvalReport directory, never
recomputed, so the table is exactly reconstructible from the artifacts it
references.
"""

from __future__ import annotations

import csv
import json
import statistics
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from ..classifier.train import load_eval_report
from ..datasets import class_histogram, load_manifest


def _runs(run_root: Path) -> list[dict]:
    eval_root = run_root / "evaluate"
    clf_root = run_root / "train-clf"
    if not eval_root.exists():
        raise ValueError(f"no evaluation reports under {eval_root}")
    rows = []
    for eval_dir in sorted(p for p in eval_root.iterdir() if p.is_dir()):
        name = eval_dir.name
        method, _, seed_part = name.rpartition("-s")
        report = load_eval_report(eval_dir)
        run_meta = {}
        meta_path = clf_root / name / "run.json"
        if meta_path.exists():
            run_meta = json.loads(meta_path.read_text(encoding="utf-8"))
        rows.append(
            {
                "method": method,
                "seed": int(seed_part),
                "report": report,
                "runtime_s": run_meta.get("runtime_s", float("nan")),
                "eval_dir": str(eval_dir),
            }
        )
    if not rows:
        raise ValueError(f"no evaluation reports under {eval_root}")
    return rows


def _source_label(config, method: str) -> str:
    if config is None:
        return "real" if method == "REAL" else "gan"
    if method == "REAL":
        return "real"
    mode = config.gan.mode
    origin = "multi-source" if config.gan.has_source else "self"
    return f"{mode}-gan:{origin}"


def _samples_per_class(config) -> str:
    if config is None or config.dataset.subsample_k is None:
        return "all"
    return str(config.dataset.subsample_k)


def emit_report(run_root: str | Path, dest: str | Path | None = None, config=None) -> Path:
    """Write results.csv, summary.csv, per-class delta table/chart, and
    the per-strategy convergence plot for one pipeline run."""
    run_root = Path(run_root)
    dest = Path(dest) if dest is not None else run_root / "report"
    dest.mkdir(parents=True, exist_ok=True)
    rows = _runs(run_root)

    with (dest / "results.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["source", "method", "samples_per_class", "seed", "accuracy", "macro_accuracy", "runtime_s", "eval_dir"]
        )
        for row in rows:
            writer.writerow(
                [
                    _source_label(config, row["method"]),
                    row["method"],
                    _samples_per_class(config),
                    row["seed"],
                    repr(row["report"].overall_accuracy),
                    repr(row["report"].macro_accuracy()),
                    row["runtime_s"],
                    row["eval_dir"],
                ]
            )

    methods = sorted({r["method"] for r in rows})
    with (dest / "summary.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "n_seeds", "accuracy_mean", "accuracy_std", "macro_mean", "macro_std"])
        for method in methods:
            accs = [r["report"].overall_accuracy for r in rows if r["method"] == method]
            macros = [r["report"].macro_accuracy() for r in rows if r["method"] == method]
            std = statistics.stdev(accs) if len(accs) > 1 else 0.0
            macro_std = statistics.stdev(macros) if len(macros) > 1 else 0.0
            writer.writerow(
                [
                    method,
                    len(accs),
                    f"{statistics.mean(accs):.6f}",
                    f"{std:.6f}",
                    f"{statistics.mean(macros):.6f}",
                    f"{macro_std:.6f}",
                ]
            )

    _emit_delta(run_root, dest, rows)
    _emit_convergence(run_root, dest, rows)
    return dest


def _mean_per_class(rows: list[dict], method: str) -> np.ndarray | None:
    reports = [r["report"] for r in rows if r["method"] == method]
    if not reports:
        return None
    return np.mean([r.per_class_accuracy for r in reports], axis=0)


def _emit_delta(run_root: Path, dest: Path, rows: list[dict]) -> None:
    baseline = _mean_per_class(rows, "REAL")
    treated_method = next(
        (m for m in ("PRETRAIN", "REGULARIZER", "MIXUP") if _mean_per_class(rows, m) is not None),
        None,
    )
    if baseline is None or treated_method is None:
        return  # the delta needs both a baseline and a treated model
    treated = _mean_per_class(rows, treated_method)
    delta = treated - baseline

    supports = None
    manifest_path = run_root / "prepare" / "manifest.tsv"
    if manifest_path.exists():
        manifest = load_manifest(manifest_path)
        supports = class_histogram(manifest, "train").counts
    else:
        supports = tuple([0] * len(delta))

    order = np.argsort(supports)[::-1]  # most frequent class first
    with (dest / "per_class_delta.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "train_support", "delta"])
        for c in order:
            writer.writerow([int(c), supports[c], f"{delta[c]:.6f}"])

    fig, ax = plt.subplots(figsize=(8, 4))
    xs = np.arange(len(delta))
    colors = ["tab:blue" if d >= 0 else "tab:red" for d in delta[order]]
    ax.bar(xs, delta[order], color=colors)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(supports[c]) for c in order])
    for tick, c in zip(ax.get_xticklabels(), order):
        if supports[c] < 10:
            tick.set_color("green")
        elif supports[c] > 100:
            tick.set_color("red")
    ax.set_xlabel("training samples per class")
    ax.set_ylabel(f"{treated_method} - REAL accuracy")
    ax.set_title("Per-class accuracy difference")
    fig.tight_layout()
    fig.savefig(dest / "per_class_delta.png", dpi=120)
    plt.close(fig)


def _emit_convergence(run_root: Path, dest: Path, rows: list[dict]) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    plotted = False
    first_seed = min(r["seed"] for r in rows)
    for row in rows:
        if row["seed"] != first_seed:
            continue
        train_dir = run_root / "train-clf" / f"{row['method']}-s{row['seed']}" / "train-report"
        if not train_dir.exists():
            continue
        report = load_eval_report(train_dir)
        accs = [e["train_acc"] for e in report.epoch_curve]
        if accs:
            ax.plot(range(len(accs)), accs, label=row["method"])
            plotted = True
    if plotted:
        ax.set_xlabel("epoch")
        ax.set_ylabel("train accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend()
        ax.set_title("Convergence by strategy")
        fig.tight_layout()
        fig.savefig(dest / "convergence.png", dpi=120)
    plt.close(fig)
