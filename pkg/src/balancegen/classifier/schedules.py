"""Synthetic-data weight schedules and mixup machinery.

The per-epoch synthetic weight sigma follows one of two exponential
schedules of the epoch index e with starting value alpha and rate beta::

    increasing: sigma = alpha + (1 - alpha) * (1 - exp(-beta * e))
    decreasing: sigma = alpha * exp(-beta * e)

plus a constant mode that ignores beta. The regularized objective adds
sigma-weighted synthetic loss to the real loss; the mixup strategy instead
uses sigma as the probability of pairing two real samples rather than a
real/synthetic pair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

DIRECTIONS = ("increasing", "decreasing", "constant")


@dataclass(frozen=True)
class TrainingSchedule:
    """(direction, alpha, beta) triple producing the per-epoch weight."""

    direction: str
    alpha: float
    beta: float = 0.0

    def __post_init__(self) -> None:
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}, got {self.direction!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


def sigma_schedule(epoch: float, schedule: TrainingSchedule) -> float:
    """Synthetic-data weight at the given epoch; always in [0, 1]."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    a, b = schedule.alpha, schedule.beta
    if schedule.direction == "constant":
        return a
    if schedule.direction == "increasing":
        return a + (1.0 - a) * (1.0 - math.exp(-b * epoch))
    return a * math.exp(-b * epoch)


def regularized_loss(
    loss_real: float | torch.Tensor,
    loss_gen: float | torch.Tensor,
    sigma: float,
) -> float | torch.Tensor:
    """loss_real + sigma * loss_gen."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError(f"sigma must be in [0, 1], got {sigma}")
    for name, value in (("loss_real", loss_real), ("loss_gen", loss_gen)):
        v = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(v):
            raise ValueError(f"{name} is non-finite: {v}")
    return loss_real + sigma * loss_gen


@dataclass(frozen=True)
class MixupLambdaSampler:
    """Per-pair mixing weight distribution: uniform on [0,1] or Beta(a, a)."""

    kind: str = "uniform"
    a: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "beta"):
            raise ValueError(f"kind must be 'uniform' or 'beta', got {self.kind!r}")
        if self.kind == "beta" and self.a <= 0:
            raise ValueError(f"beta sampler needs a > 0, got {self.a}")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.random(n)
        return rng.beta(self.a, self.a, size=n)


def mixup_batch(
    batch_a: tuple[torch.Tensor, torch.Tensor],
    batch_b: tuple[torch.Tensor, torch.Tensor],
    lambda_sampler: MixupLambdaSampler,
    seed: int | np.random.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Convex-combine two batches into virtual samples.

    ``batch_a`` carries weight (1 - lambda) and ``batch_b`` weight lambda,
    with one lambda drawn per pair: x = lam*x_b + (1-lam)*x_a and likewise
    for the (one-hot or soft) label rows, which therefore still sum to 1.
    """
    x_a, y_a = batch_a
    x_b, y_b = batch_b
    if x_a.shape != x_b.shape or y_a.shape != y_b.shape:
        raise ValueError(
            f"batch shapes differ: {tuple(x_a.shape)}/{tuple(y_a.shape)} vs "
            f"{tuple(x_b.shape)}/{tuple(y_b.shape)}"
        )
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lam = torch.from_numpy(lambda_sampler.sample(rng, x_a.shape[0])).to(x_a.dtype)
    lam_x = lam.reshape(-1, *([1] * (x_a.dim() - 1)))
    lam_y = lam.reshape(-1, *([1] * (y_a.dim() - 1)))
    x = lam_x * x_b + (1.0 - lam_x) * x_a
    y = lam_y * y_b + (1.0 - lam_y) * y_a
    return x, y


def choose_mixup_source(
    epoch: float, schedule: TrainingSchedule, uniform_draw: float
) -> str:
    """Pick the mixup pairing for one batch: 'real-real' when the draw
    falls below sigma(epoch), else 'real-synthetic'."""
    if not 0.0 <= uniform_draw < 1.0:
        raise ValueError(f"uniform_draw must be in [0, 1), got {uniform_draw}")
    return "real-real" if uniform_draw < sigma_schedule(epoch, schedule) else "real-synthetic"
