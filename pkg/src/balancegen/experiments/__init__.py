"""Config-driven pipeline, sweeps, reports, and the command-line front end."""

from .config import ExperimentConfig, load_config, save_config
from .pipeline import StageError, run_pipeline
from .report import emit_report
from .sweep import run_limited_data_sweep
from .toy import LONG_TAIL_COUNTS, make_toy_dataset

__all__ = [
    "ExperimentConfig",
    "LONG_TAIL_COUNTS",
    "StageError",
    "emit_report",
    "load_config",
    "make_toy_dataset",
    "run_limited_data_sweep",
    "run_pipeline",
    "save_config",
]
