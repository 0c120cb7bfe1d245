"""FID / IS / Density / Coverage against closed forms and brute-force oracles."""

from __future__ import annotations

import numpy as np
import pytest

from balancegen.metrics import (
    EmbedderError,
    FeatureMatrix,
    MetricReport,
    build_report,
    density_coverage,
    embed,
    fid,
    inception_score,
    knn_radii,
    load_real_stats,
    save_real_stats,
)


def fm(rows: np.ndarray, fingerprint: str = "test") -> FeatureMatrix:
    return FeatureMatrix(rows=rows, fingerprint=fingerprint)


class _StubEmbedder:
    """Mean-pools pixels per channel; enough to exercise the embed contract."""

    fingerprint = "stub-v1"
    image_size = (8, 8)

    def embed_images(self, images: np.ndarray) -> np.ndarray:
        return images.reshape(images.shape[0], -1, 3).mean(axis=1).astype(np.float64)


class TestEmbed:
    def test_identical_images_identical_rows(self):
        rng = np.random.default_rng(0)
        img = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
        feats = embed(np.stack([img, img]), _StubEmbedder())
        np.testing.assert_array_equal(feats.rows[0], feats.rows[1])

    def test_row_count(self):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(5, 8, 8, 3), dtype=np.uint8)
        assert embed(images, _StubEmbedder()).n == 5

    def test_geometry_mismatch(self):
        with pytest.raises(EmbedderError, match="geometry"):
            embed(np.zeros((2, 16, 16, 3), dtype=np.uint8), _StubEmbedder())

    def test_fingerprint_mismatch_flagged(self):
        a = fm(np.random.default_rng(0).normal(size=(10, 4)), "emb-a")
        b = fm(np.random.default_rng(1).normal(size=(10, 4)), "emb-b")
        with pytest.raises(EmbedderError, match="different embedders"):
            build_report(a, b, np.full((10, 2), 0.5))
        report_a = MetricReport(1, 1, 0, 1, 1, 5, "emb-a", 10, 10)
        report_b = MetricReport(1, 1, 0, 1, 1, 5, "emb-b", 10, 10)
        assert not report_a.comparable_with(report_b)


class TestFid:
    def test_identical_features_zero(self):
        rows = np.random.default_rng(2).normal(size=(200, 8))
        assert fid(fm(rows), fm(rows.copy())) <= 1e-6

    def test_unit_mean_shift_gaussians(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(10_000, 8))
        b = rng.normal(size=(10_000, 8))
        b[:, 0] += 1.0
        value = fid(fm(a), fm(b))
        assert 0.9 <= value <= 1.1  # closed-form distance is ||mu||^2 = 1

    def test_symmetry(self):
        rng = np.random.default_rng(4)
        a = fm(rng.normal(size=(300, 6)))
        b = fm(rng.normal(loc=0.3, size=(280, 6)))
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(100, 4))
        b = rng.normal(size=(120, 4))
        base = fid(fm(a), fm(b))
        perm = fid(fm(a[rng.permutation(100)]), fm(b[rng.permutation(120)]))
        assert base == pytest.approx(perm, abs=1e-8)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="dimensions"):
            fid(fm(np.zeros((10, 3))), fm(np.zeros((10, 4))))

    def test_small_sample_warns(self):
        rng = np.random.default_rng(6)
        with pytest.warns(UserWarning, match="rank-deficient"):
            fid(fm(rng.normal(size=(4, 8))), fm(rng.normal(size=(4, 8))))


class TestInceptionScore:
    def test_identical_rows_score_one(self):
        probs = np.tile([0.2, 0.3, 0.5], (40, 1))
        mean, stderr = inception_score(probs, splits=4)
        assert mean == pytest.approx(1.0, abs=1e-6)
        assert stderr == pytest.approx(0.0, abs=1e-9)

    def test_one_hot_uniform_coverage(self):
        # each KL is log(4); exp of the mean is exactly 4
        probs = np.eye(4)[np.arange(400) % 4]
        mean, _ = inception_score(probs, splits=1)
        assert mean == pytest.approx(4.0, abs=1e-6)

    def test_never_exceeds_class_count(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            c = int(rng.integers(2, 8))
            raw = rng.random((50, c))
            probs = raw / raw.sum(axis=1, keepdims=True)
            mean, _ = inception_score(probs, splits=5)
            assert mean <= c + 1e-9

    def test_row_permutation_invariance_single_split(self):
        rng = np.random.default_rng(8)
        raw = rng.random((60, 5))
        probs = raw / raw.sum(axis=1, keepdims=True)
        a, _ = inception_score(probs, splits=1)
        b, _ = inception_score(probs[rng.permutation(60)], splits=1)
        assert a == pytest.approx(b, abs=1e-9)

    def test_invalid_rows(self):
        with pytest.raises(ValueError, match="sums to"):
            inception_score(np.full((3, 4), 0.3), splits=1)


def density_coverage_oracle(real, gen, k):
    """O(N^2) loop implementation straight from the definitions."""
    n, m = len(real), len(gen)
    radii = []
    for i in range(n):
        d = sorted(np.sqrt(((real[i] - real[j]) ** 2).sum()) for j in range(n))
        radii.append(d[k])  # d[0] is the zero self-distance
    dens_count = 0
    covered = 0
    for i in range(n):
        hit = False
        for j in range(m):
            dij = np.sqrt(((real[i] - gen[j]) ** 2).sum())
            if dij < radii[i]:
                dens_count += 1
                hit = True
        covered += int(hit)
    return dens_count / (k * m), covered / n


class TestDensityCoverage:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(9)
        for trial in range(15):
            n, m = int(rng.integers(8, 40)), int(rng.integers(8, 40))
            k = int(rng.choice([1, 3, 5]))
            real = rng.normal(size=(n, 3))
            gen = rng.normal(size=(m, 3))
            got = density_coverage(fm(real), fm(gen), k=k)
            want = density_coverage_oracle(real, gen, k)
            assert got[0] == pytest.approx(want[0], abs=1e-12)
            assert got[1] == pytest.approx(want[1], abs=1e-12)

    def test_gen_equals_real_full_coverage(self):
        rng = np.random.default_rng(10)
        real = rng.normal(size=(50, 4))
        _, coverage = density_coverage(fm(real), fm(real.copy()), k=3)
        assert coverage == 1.0

    def test_distant_gen_zero(self):
        rng = np.random.default_rng(11)
        real = rng.normal(size=(30, 3))
        gen = rng.normal(size=(20, 3)) + 1000.0
        assert density_coverage(fm(real), fm(gen), k=3) == (0.0, 0.0)

    def test_isometry_invariance(self):
        rng = np.random.default_rng(12)
        real = rng.normal(size=(40, 3))
        gen = rng.normal(size=(35, 3))
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        shift = rng.normal(size=3)
        base = density_coverage(fm(real), fm(gen), k=4)
        moved = density_coverage(fm(real @ q + shift), fm(gen @ q + shift), k=4)
        assert base[0] == pytest.approx(moved[0], abs=1e-9)
        assert base[1] == pytest.approx(moved[1], abs=1e-9)

    def test_k_too_large(self):
        rng = np.random.default_rng(13)
        real = fm(rng.normal(size=(5, 2)))
        with pytest.raises(ValueError, match="smaller"):
            density_coverage(real, real, k=5)


class TestRealStatsCache:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(14)
        feats = fm(rng.normal(size=(30, 4)), "emb-x")
        path = save_real_stats(tmp_path / "stats.npz", feats, k=3)
        loaded = load_real_stats(path)
        assert loaded["fingerprint"] == "emb-x"
        assert loaded["k"] == 3
        np.testing.assert_allclose(loaded["radii"], knn_radii(feats.rows, 3))


class TestBuildReport:
    def test_fields_and_bounds(self):
        rng = np.random.default_rng(15)
        real = fm(rng.normal(size=(60, 5)), "emb")
        gen = fm(rng.normal(size=(50, 5)), "emb")
        raw = rng.random((50, 4))
        probs = raw / raw.sum(axis=1, keepdims=True)
        report = build_report(real, gen, probs, k=3, is_splits=5)
        assert report.fid >= 0
        assert report.is_mean >= 1.0 - 1e-9
        assert 0.0 <= report.coverage <= 1.0
        assert report.density >= 0
        assert report.k == 3
        assert report.n_real == 60 and report.n_gen == 50
