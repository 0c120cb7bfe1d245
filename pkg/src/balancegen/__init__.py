"""Conditional-GAN data balancing for small, imbalanced image datasets.

Subpackages and modules:

- ``datasets``: manifest ingestion, splitting, stratified sub-sampling
- ``pose``: hand keypoint normalization and conditioning-map rasterization
- ``gan``: conditional generator/discriminator training (label or pose mode)
- ``synthesis``: balanced generation, scoring, and top-K filtering
- ``classifier``: four real+synthetic training strategies and evaluation
- ``metrics``: FID, Inception Score, Density, and Coverage
- ``experiments``: config-driven pipeline, sweeps, reports, and the CLI
"""

__version__ = "0.1.0"
