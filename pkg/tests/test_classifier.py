"""Strategy training mechanics, evaluation math, and report plumbing."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from balancegen.classifier.schedules import TrainingSchedule
from balancegen.classifier.train import (
    ClassifierEmbedder,
    EvalReport,
    LabeledImageArray,
    StrategyConfig,
    epochs_to_threshold,
    evaluate,
    load_classifier,
    load_eval_report,
    per_class_delta,
    save_classifier,
    save_eval_report,
    train_classifier,
)
from balancegen.datasets import split

from conftest import write_image_dataset


def fast_cfg(strategy: str, **kw) -> StrategyConfig:
    base = dict(
        strategy=strategy,
        width=8,
        batch_size=8,
        max_epochs=2,
        patience=2,
        pretrain_max_epochs=2,
        pretrain_patience=2,
    )
    base.update(kw)
    return StrategyConfig(**base)


@pytest.fixture(scope="module")
def real_manifest(tmp_path_factory):
    root = tmp_path_factory.mktemp("clf-data")
    m = write_image_dataset(
        root, counts={0: 16, 1: 16}, num_classes=2, size=16, seed=5
    )
    return split(m, (0.6, 0.2, 0.2), seed=0)


@pytest.fixture(scope="module")
def synthetic_arrays():
    rng = np.random.default_rng(6)
    return LabeledImageArray(
        images=rng.integers(0, 256, size=(24, 16, 16, 3), dtype=np.uint8),
        labels=np.tile(np.array([0, 1]), 12),
    )


class TestEvalReportMath:
    def test_perfect_predictions(self):
        report = EvalReport.from_confusion(np.diag([7, 5]))
        assert report.overall_accuracy == 1.0
        assert report.per_class_accuracy == (1.0, 1.0)

    def test_collapsed_predictor_on_balanced_set(self):
        confusion = np.array([[10, 0], [10, 0]])
        report = EvalReport.from_confusion(confusion)
        assert report.overall_accuracy == 0.5
        assert report.per_class_accuracy[1] == 0.0

    def test_trace_consistency_enforced(self):
        with pytest.raises(ValueError, match="trace"):
            EvalReport(
                overall_accuracy=0.9,
                per_class_accuracy=(1.0, 1.0),
                confusion=((5, 0), (0, 5)),
            )

    def test_macro_ignores_unsupported_classes(self):
        report = EvalReport.from_confusion(np.array([[4, 0, 0], [0, 2, 2], [0, 0, 0]]))
        assert report.macro_accuracy() == pytest.approx((1.0 + 0.5) / 2)

    def test_roundtrip(self, tmp_path):
        report = EvalReport.from_confusion(
            np.array([[3, 1], [0, 4]]),
            epoch_curve=({"train_acc": 0.5, "val_acc": 0.4, "sigma": 0.0},),
            epochs_trained=1,
        )
        save_eval_report(report, tmp_path)
        loaded = load_eval_report(tmp_path)
        assert loaded.confusion == report.confusion
        assert loaded.overall_accuracy == report.overall_accuracy
        assert loaded.epoch_curve == report.epoch_curve


class TestPerClassDelta:
    def test_identical_reports_zero(self):
        r = EvalReport.from_confusion(np.diag([3, 3]))
        np.testing.assert_array_equal(per_class_delta(r, r), np.zeros(2))

    def test_hand_values(self):
        treated = EvalReport.from_confusion(np.array([[5, 0], [4, 1]]))
        baseline = EvalReport.from_confusion(np.array([[0, 5], [3, 2]]))
        np.testing.assert_allclose(
            per_class_delta(treated, baseline), [1.0, 1 / 5 - 2 / 5]
        )

    def test_length_mismatch(self):
        a = EvalReport.from_confusion(np.diag([1, 1]))
        b = EvalReport.from_confusion(np.diag([1, 1, 1]))
        with pytest.raises(ValueError, match="class counts"):
            per_class_delta(a, b)

    def test_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = EvalReport.from_confusion(rng.integers(0, 10, size=(4, 4)))
            b = EvalReport.from_confusion(rng.integers(0, 10, size=(4, 4)))
            d = per_class_delta(a, b)
            assert ((-1 <= d) & (d <= 1)).all()


class TestEpochsToThreshold:
    def test_first_crossing(self):
        assert epochs_to_threshold([0.5, 0.8, 0.95], 0.9) == 2

    def test_never_reached(self):
        assert epochs_to_threshold([0.5, 0.8, 0.95], 0.99) is None

    def test_non_monotone_first_not_sustained(self):
        assert epochs_to_threshold([0.91, 0.85, 0.92], 0.9) == 0

    def test_accepts_curve_dicts(self):
        curve = [{"train_acc": 0.3, "val_acc": 0, "sigma": 0}, {"train_acc": 0.95, "val_acc": 0, "sigma": 0}]
        assert epochs_to_threshold(curve, 0.9) == 1

    def test_invalid_threshold(self):
        with pytest.raises(ValueError):
            epochs_to_threshold([0.5], 0.0)


class TestTrainClassifier:
    def test_real_strategy_rejects_synthetic(self, real_manifest, synthetic_arrays):
        with pytest.raises(ValueError, match="no synthetic"):
            train_classifier(fast_cfg("REAL"), real_manifest, synthetic_arrays, seed=0)

    def test_other_strategies_require_synthetic(self, real_manifest):
        for strategy in ("PRETRAIN", "REGULARIZER", "MIXUP"):
            with pytest.raises(ValueError, match="requires a synthetic"):
                train_classifier(fast_cfg(strategy), real_manifest, None, seed=0)

    def test_real_training_curve_and_report(self, real_manifest):
        ckpt, report = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=1)
        assert report.epochs_trained == len(report.epoch_curve) == 2
        assert 0.0 <= report.overall_accuracy <= 1.0
        assert ckpt.strategy == "REAL"

    def test_determinism(self, real_manifest):
        a, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=3)
        b, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=3)
        assert a.fingerprint == b.fingerprint

    def test_regularizer_sigma_zero_matches_real_exactly(
        self, real_manifest, synthetic_arrays
    ):
        real_ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=4)
        reg_cfg = fast_cfg(
            "REGULARIZER", schedule=TrainingSchedule("constant", alpha=0.0)
        )
        reg_ckpt, _ = train_classifier(reg_cfg, real_manifest, synthetic_arrays, seed=4)
        assert real_ckpt.fingerprint == reg_ckpt.fingerprint

    def test_regularizer_sigma_positive_diverges_from_real(
        self, real_manifest, synthetic_arrays
    ):
        real_ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=4)
        reg_cfg = fast_cfg(
            "REGULARIZER", schedule=TrainingSchedule("constant", alpha=1.0)
        )
        reg_ckpt, _ = train_classifier(reg_cfg, real_manifest, synthetic_arrays, seed=4)
        assert real_ckpt.fingerprint != reg_ckpt.fingerprint

    def test_pretrain_records_both_phases(self, real_manifest, synthetic_arrays):
        ckpt, report = train_classifier(
            fast_cfg("PRETRAIN"), real_manifest, synthetic_arrays, seed=5
        )
        assert report.pretrain_epochs >= 1
        assert len(report.pretrain_curve) == report.pretrain_epochs
        assert report.epochs_trained >= 1

    def test_mixup_runs(self, real_manifest, synthetic_arrays):
        ckpt, report = train_classifier(
            fast_cfg("MIXUP"), real_manifest, synthetic_arrays, seed=6
        )
        assert report.epochs_trained >= 1

    def test_synthetic_label_range_checked(self, real_manifest):
        bad = LabeledImageArray(
            images=np.zeros((4, 16, 16, 3), dtype=np.uint8),
            labels=np.array([0, 1, 2, 3]),
        )
        with pytest.raises(ValueError, match="exceed"):
            train_classifier(fast_cfg("PRETRAIN"), real_manifest, bad, seed=0)


class TestEvaluateAndCheckpoints:
    def test_evaluate_consistency(self, real_manifest):
        ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=7)
        report = evaluate(ckpt, real_manifest, "test")
        total = sum(report.supports)
        trace = sum(report.confusion[i][i] for i in range(report.num_classes))
        assert report.overall_accuracy == pytest.approx(trace / total)
        assert len(report.per_class_accuracy) == real_manifest.num_classes

    def test_evaluate_empty_split(self, real_manifest, tmp_path):
        ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=8)
        m = write_image_dataset(tmp_path / "d", counts={0: 2, 1: 2}, num_classes=2, size=16)
        # manifest with train records only
        with pytest.raises(ValueError, match="empty"):
            evaluate(ckpt, m, "val")

    def test_checkpoint_roundtrip_preserves_predictions(self, real_manifest, tmp_path):
        ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=9)
        before = evaluate(ckpt, real_manifest, "test")
        save_classifier(ckpt, tmp_path / "ck")
        loaded = load_classifier(tmp_path / "ck")
        after = evaluate(loaded, real_manifest, "test")
        assert before.confusion == after.confusion
        assert loaded.fingerprint == ckpt.fingerprint


class TestClassifierEmbedder:
    def test_embeddings_deterministic_and_shaped(self, real_manifest):
        ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=10)
        emb = ClassifierEmbedder(ckpt)
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(5, 16, 16, 3), dtype=np.uint8)
        a = emb.embed_images(images)
        b = emb.embed_images(images)
        np.testing.assert_array_equal(a, b)
        assert a.shape == (5, ckpt.model.feature_dim)

    def test_probabilities_are_distributions(self, real_manifest):
        ckpt, _ = train_classifier(fast_cfg("REAL"), real_manifest, None, seed=11)
        emb = ClassifierEmbedder(ckpt)
        rng = np.random.default_rng(2)
        probs = emb.predict_proba(
            rng.integers(0, 256, size=(7, 16, 16, 3), dtype=np.uint8)
        )
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(7), atol=1e-6)
