"""Limited-data sweep: retrain everything at several train-set sizes.

Each k gets its own pipeline cell under ``<out_dir>/sweep/k<k>`` with the
train split stratified-subsampled to k records per class; the GAN is
retrained on the reduced data and the test split stays identical across
cells (split assignment depends only on the master seed and the source
dataset). Cell failures are recorded and do not stop the sweep.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path

from .config import ExperimentConfig
from .pipeline import StageError, run_pipeline


def run_limited_data_sweep(
    config: ExperimentConfig,
    k_values: tuple[int, ...] | None = None,
    force: bool = False,
) -> list[dict]:
    """Run one pipeline per k and assemble a combined result table.

    Returns the combined rows (one per method/seed/k); writes
    ``sweep/results.csv`` plus ``sweep/failures.json`` under the config's
    output directory.
    """
    ks = tuple(k_values) if k_values is not None else tuple(config.sweep.k_values)
    if not ks:
        raise ValueError("k_values must be nonempty")
    sweep_root = Path(config.out_dir) / "sweep"
    sweep_root.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    failures: list[dict] = []
    for k in ks:
        cell_dir = sweep_root / f"k{k}"
        cell_cfg = dataclasses.replace(
            config,
            out_dir=str(cell_dir),
            dataset=dataclasses.replace(config.dataset, subsample_k=int(k)),
        )
        try:
            run_pipeline(cell_cfg, force=force)
        except StageError as exc:
            failures.append({"k": int(k), "stage": exc.stage, "error": str(exc)})
            continue
        with (cell_dir / "report" / "results.csv").open() as fh:
            for row in csv.DictReader(fh):
                row["k"] = int(k)
                rows.append(row)

    if rows:
        fieldnames = ["k"] + [c for c in rows[0] if c != "k"]
        with (sweep_root / "results.csv").open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames)
            writer.writeheader()
            writer.writerows(rows)
    (sweep_root / "failures.json").write_text(
        json.dumps(failures, indent=2), encoding="utf-8"
    )
    return rows
