"""Generative-quality metrics over pluggable feature embeddings.

Implements Fréchet distance between Gaussian feature fits (FID), Inception
Score over class posteriors, and the kNN-ball Density/Coverage pair. All
functions are pure over immutable numpy inputs.

Feature values are only comparable within a single embedder fingerprint;
desk-scale runs ship no canonical Inception network, so the default
embedder is the scorer classifier's penultimate layer.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Protocol

import numpy as np
from scipy.spatial.distance import cdist

_IS_EPS = 1e-12


class EmbedderError(ValueError):
    """Raised on geometry or fingerprint contract violations."""


class FeatureEmbedder(Protocol):
    """Anything that maps uint8 RGB image stacks to feature rows."""

    fingerprint: str
    image_size: tuple[int, int]

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        """(N, H, W, 3) uint8 -> (N, D) float features."""
        ...


@dataclass(frozen=True)
class FeatureMatrix:
    """N feature vectors of dimension D plus the embedder that made them."""

    rows: np.ndarray
    fingerprint: str

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] < 1:
            raise ValueError(f"feature matrix must be (N>=1, D), got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise ValueError("feature matrix contains non-finite entries")
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class MetricReport:
    """One evaluation's generative metrics, with enough context to compare."""

    fid: float
    is_mean: float
    is_stderr: float
    density: float
    coverage: float
    k: int
    embedder: str
    n_real: int
    n_gen: int
    sqrt_clip: float = 0.0  # magnitude of the largest eigenvalue clipped in the FID sqrt

    def comparable_with(self, other: "MetricReport") -> bool:
        """Reports from different embedders are not comparable."""
        return self.embedder == other.embedder

    def to_dict(self) -> dict:
        return asdict(self)


def embed(images: np.ndarray, embedder: FeatureEmbedder) -> FeatureMatrix:
    """Embed an image stack, enforcing the embedder's expected geometry."""
    images = np.asarray(images)
    if images.ndim != 4 or images.shape[-1] != 3:
        raise EmbedderError(f"expected (N, H, W, 3) image stack, got shape {images.shape}")
    if tuple(images.shape[1:3]) != tuple(embedder.image_size):
        raise EmbedderError(
            f"image geometry {images.shape[1:3]} does not match embedder "
            f"geometry {embedder.image_size}"
        )
    rows = embedder.embed_images(images)
    return FeatureMatrix(rows=rows, fingerprint=embedder.fingerprint)


def gaussian_stats(features: FeatureMatrix | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample mean and covariance of feature rows."""
    rows = features.rows if isinstance(features, FeatureMatrix) else np.asarray(features)
    mu = rows.mean(axis=0)
    sigma = np.cov(rows, rowvar=False)
    sigma = np.atleast_2d(sigma)
    return mu, sigma


def _trace_sqrt_product(sigma_a: np.ndarray, sigma_b: np.ndarray) -> tuple[float, float]:
    """trace((sigma_a sigma_b)^(1/2)) via eigendecomposition.

    Works on sqrt(sigma_a) @ sigma_b @ sqrt(sigma_a), which shares its
    nonzero spectrum with sigma_a @ sigma_b but is symmetric PSD, so an
    eigendecomposition with negative-eigenvalue clipping is exact up to
    float noise. Returns (trace, clip) where clip is the magnitude of the
    most negative eigenvalue that was clipped to 0.
    """
    vals_a, vecs_a = np.linalg.eigh((sigma_a + sigma_a.T) / 2.0)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    m = root_a @ sigma_b @ root_a
    vals = np.linalg.eigvalsh((m + m.T) / 2.0)
    clip = float(max(0.0, -vals.min())) if vals.size else 0.0
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum()), clip


def fid_from_stats(
    mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray
) -> tuple[float, float]:
    """Fréchet distance between two Gaussian fits; returns (fid, sqrt_clip)."""
    diff = mu_a - mu_b
    tr_sqrt, clip = _trace_sqrt_product(sigma_a, sigma_b)
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * tr_sqrt)
    return max(value, 0.0), clip


def fid(real: FeatureMatrix, gen: FeatureMatrix) -> float:
    """Fréchet distance between Gaussian fits of real and generated features."""
    if real.dim != gen.dim:
        raise ValueError(f"feature dimensions differ: {real.dim} vs {gen.dim}")
    if min(real.n, gen.n) < real.dim + 1:
        warnings.warn(
            f"fewer samples ({min(real.n, gen.n)}) than D+1 ({real.dim + 1}); "
            "covariance estimates are rank-deficient",
            stacklevel=2,
        )
    mu_r, sig_r = gaussian_stats(real)
    mu_g, sig_g = gaussian_stats(gen)
    value, _ = fid_from_stats(mu_r, sig_r, mu_g, sig_g)
    if not np.isfinite(value):
        raise ValueError("FID is non-finite")
    return value


def inception_score(
    class_probabilities: np.ndarray, splits: int = 10
) -> tuple[float, float]:
    """exp(mean KL(p(y|x) || p(y))) per split; returns (mean, stderr).

    Rows must be valid distributions (sum to 1 within 1e-4). Zero
    probabilities are floored at 1e-12 inside the logs only.
    """
    probs = np.asarray(class_probabilities, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] < 1:
        raise ValueError(f"expected (N, C) probability rows, got shape {probs.shape}")
    if (probs < 0).any():
        raise ValueError("probabilities must be nonnegative")
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-4
    if bad.any():
        raise ValueError(f"row {int(np.argmax(bad))} sums to {sums[bad][0]:.6f}, not 1")
    if not 1 <= splits <= probs.shape[0]:
        raise ValueError(f"splits must be in [1, N], got {splits}")
    scores = []
    for chunk in np.array_split(probs, splits):
        marginal = chunk.mean(axis=0)
        kl = (chunk * (np.log(chunk + _IS_EPS) - np.log(marginal + _IS_EPS))).sum(axis=1)
        scores.append(float(np.exp(kl.mean())))
    mean = float(np.mean(scores))
    stderr = float(np.std(scores, ddof=1) / np.sqrt(len(scores))) if len(scores) > 1 else 0.0
    return mean, stderr


def knn_radii(real: np.ndarray, k: int) -> np.ndarray:
    """Distance from each real point to its k-th nearest other real point."""
    real = np.asarray(real, dtype=np.float64)
    if k >= real.shape[0]:
        raise ValueError(f"k ({k}) must be smaller than the number of real rows ({real.shape[0]})")
    dists = cdist(real, real)
    # row-sorted column k skips the zero self-distance at column 0
    return np.sort(dists, axis=1)[:, k]


def density_coverage(
    real: FeatureMatrix, gen: FeatureMatrix, k: int = 5
) -> tuple[float, float]:
    """kNN-ball fidelity (density) and diversity (coverage).

    Radii are k-th neighbor distances among real samples only. Membership
    uses a strict inequality, matching the reference implementation:
    density = (1/(k M)) sum_j sum_i 1[d(gen_j, real_i) < r_i] and
    coverage = fraction of real points whose ball contains any gen point.
    """
    if real.dim != gen.dim:
        raise ValueError(f"feature dimensions differ: {real.dim} vs {gen.dim}")
    radii = knn_radii(real.rows, k)
    d_rg = cdist(real.rows, gen.rows)
    inside = d_rg < radii[:, None]  # (N_real, M_gen)
    density = float(inside.sum() / (k * gen.n))
    coverage = float(inside.any(axis=1).mean())
    return density, coverage


def build_report(
    real: FeatureMatrix,
    gen: FeatureMatrix,
    class_probabilities: np.ndarray,
    k: int = 5,
    is_splits: int = 10,
) -> MetricReport:
    """Assemble the full metric report for one real/generated pair."""
    if real.fingerprint != gen.fingerprint:
        raise EmbedderError(
            f"feature matrices come from different embedders: "
            f"{real.fingerprint!r} vs {gen.fingerprint!r}"
        )
    mu_r, sig_r = gaussian_stats(real)
    mu_g, sig_g = gaussian_stats(gen)
    fid_value, clip = fid_from_stats(mu_r, sig_r, mu_g, sig_g)
    is_mean, is_stderr = inception_score(class_probabilities, splits=is_splits)
    density, coverage = density_coverage(real, gen, k=k)
    return MetricReport(
        fid=fid_value,
        is_mean=is_mean,
        is_stderr=is_stderr,
        density=density,
        coverage=coverage,
        k=k,
        embedder=real.fingerprint,
        n_real=real.n,
        n_gen=gen.n,
        sqrt_clip=clip,
    )


def save_real_stats(
    path: str | Path,
    features: FeatureMatrix,
    k: int,
) -> Path:
    """Cache real-side FID statistics and kNN radii beside a manifest."""
    mu, sigma = gaussian_stats(features)
    radii = knn_radii(features.rows, k)
    path = Path(path)
    np.savez(
        path,
        mu=mu,
        sigma=sigma,
        radii=radii,
        k=np.int64(k),
        n=np.int64(features.n),
        fingerprint=np.str_(features.fingerprint),
    )
    return path


def load_real_stats(path: str | Path) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        return {
            "mu": data["mu"],
            "sigma": data["sigma"],
            "radii": data["radii"],
            "k": int(data["k"]),
            "n": int(data["n"]),
            "fingerprint": str(data["fingerprint"]),
        }
