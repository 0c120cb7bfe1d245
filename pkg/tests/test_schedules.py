"""Sigma schedules, regularized loss, and mixup machinery."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from balancegen.classifier.schedules import (
    MixupLambdaSampler,
    TrainingSchedule,
    choose_mixup_source,
    mixup_batch,
    regularized_loss,
    sigma_schedule,
)


class _FixedLambda:
    """Sampler stub returning a constant mixing weight."""

    def __init__(self, value: float):
        self.value = value

    def sample(self, rng, n):
        return np.full(n, self.value)


class TestSigmaSchedule:
    def test_increasing_at_zero_is_alpha(self):
        s = TrainingSchedule("increasing", alpha=0.37, beta=0.2)
        assert sigma_schedule(0, s) == pytest.approx(0.37, abs=1e-12)

    def test_decreasing_at_zero_is_alpha(self):
        s = TrainingSchedule("decreasing", alpha=0.37, beta=0.2)
        assert sigma_schedule(0, s) == pytest.approx(0.37, abs=1e-12)

    def test_decreasing_hand_value(self):
        # 0.5 * exp(-0.1 * 10) = 0.5 * e^-1
        s = TrainingSchedule("decreasing", alpha=0.5, beta=0.1)
        assert sigma_schedule(10, s) == pytest.approx(0.5 * math.exp(-1.0), abs=1e-9)

    def test_increasing_hand_value(self):
        # 0.2 + 0.8 * (1 - e^-1)
        s = TrainingSchedule("increasing", alpha=0.2, beta=0.05)
        want = 0.2 + 0.8 * (1.0 - math.exp(-1.0))
        assert sigma_schedule(20, s) == pytest.approx(want, abs=1e-9)

    def test_constant_ignores_beta(self):
        s = TrainingSchedule("constant", alpha=0.6, beta=123.0)
        assert sigma_schedule(50, s) == 0.6

    def test_monotone_and_bounded(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            alpha, beta = rng.random(), rng.random() * 2
            eps = np.sort(rng.random(8) * 100)
            inc = [sigma_schedule(e, TrainingSchedule("increasing", alpha, beta)) for e in eps]
            dec = [sigma_schedule(e, TrainingSchedule("decreasing", alpha, beta)) for e in eps]
            assert all(b >= a - 1e-12 for a, b in zip(inc, inc[1:]))
            assert all(b <= a + 1e-12 for a, b in zip(dec, dec[1:]))
            assert all(alpha - 1e-12 <= v <= 1.0 + 1e-12 for v in inc)
            assert all(-1e-12 <= v <= alpha + 1e-12 for v in dec)

    def test_invalid_schedule(self):
        with pytest.raises(ValueError):
            TrainingSchedule("sideways", 0.5, 0.1)
        with pytest.raises(ValueError):
            TrainingSchedule("increasing", 1.5, 0.1)
        with pytest.raises(ValueError):
            TrainingSchedule("increasing", 0.5, -0.1)


class TestRegularizedLoss:
    def test_zero_sigma(self):
        assert regularized_loss(1.7, 42.0, 0.0) == 1.7

    def test_unit_sigma(self):
        assert regularized_loss(2.0, 3.0, 1.0) == 5.0

    def test_hand_value(self):
        assert regularized_loss(1.2, 0.8, 0.25) == pytest.approx(1.4, abs=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            regularized_loss(float("nan"), 1.0, 0.5)

    def test_tensor_inputs_keep_grad(self):
        a = torch.tensor(1.0, requires_grad=True)
        b = torch.tensor(2.0, requires_grad=True)
        out = regularized_loss(a, b, 0.5)
        out.backward()
        assert a.grad == 1.0
        assert b.grad == 0.5


class TestMixupBatch:
    def batch(self, seed, n=6, c=10):
        rng = np.random.default_rng(seed)
        x = torch.from_numpy(rng.normal(size=(n, 3, 4, 4)).astype(np.float32))
        labels = rng.integers(0, c, size=n)
        y = torch.from_numpy(np.eye(c, dtype=np.float32)[labels])
        return x, y

    def test_lambda_zero_returns_batch_a(self):
        a, b = self.batch(0), self.batch(1)
        x, y = mixup_batch(a, b, _FixedLambda(0.0), seed=0)
        torch.testing.assert_close(x, a[0])
        torch.testing.assert_close(y, a[1])

    def test_lambda_one_returns_batch_b(self):
        a, b = self.batch(2), self.batch(3)
        x, y = mixup_batch(a, b, _FixedLambda(1.0), seed=0)
        torch.testing.assert_close(x, b[0])
        torch.testing.assert_close(y, b[1])

    def test_midpoint_labels(self):
        c = 10
        xa = torch.zeros(1, 3, 4, 4)
        xb = torch.ones(1, 3, 4, 4)
        ya = torch.eye(c)[[2]]
        yb = torch.eye(c)[[7]]
        _, y = mixup_batch((xa, ya), (xb, yb), _FixedLambda(0.5), seed=0)
        assert y[0, 2] == pytest.approx(0.5)
        assert y[0, 7] == pytest.approx(0.5)

    def test_rows_sum_to_one_and_bounded(self):
        rng = np.random.default_rng(4)
        sampler = MixupLambdaSampler("uniform")
        for trial in range(1000):
            a, b = self.batch(trial * 2 + 100), self.batch(trial * 2 + 101)
            x, y = mixup_batch(a, b, sampler, seed=int(rng.integers(1 << 31)))
            assert torch.allclose(y.sum(dim=1), torch.ones(len(y)), atol=1e-6)
            low = torch.minimum(a[0], b[0]) - 1e-6
            high = torch.maximum(a[0], b[0]) + 1e-6
            assert ((x >= low) & (x <= high)).all()

    def test_shape_mismatch(self):
        a, b = self.batch(5), self.batch(6, n=4)
        with pytest.raises(ValueError, match="shapes differ"):
            mixup_batch(a, b, MixupLambdaSampler(), seed=0)

    def test_beta_sampler_valid(self):
        s = MixupLambdaSampler("beta", a=0.4)
        vals = s.sample(np.random.default_rng(0), 1000)
        assert ((vals >= 0) & (vals <= 1)).all()


class TestChooseMixupSource:
    def test_sigma_one_always_real_real(self):
        s = TrainingSchedule("constant", alpha=1.0)
        assert all(
            choose_mixup_source(0, s, u) == "real-real" for u in (0.0, 0.5, 0.999999)
        )

    def test_sigma_zero_always_real_synthetic(self):
        s = TrainingSchedule("constant", alpha=0.0)
        assert all(
            choose_mixup_source(0, s, u) == "real-synthetic" for u in (0.0, 0.5, 0.999999)
        )

    def test_monte_carlo_frequency(self):
        s = TrainingSchedule("constant", alpha=0.3)
        rng = np.random.default_rng(7)
        draws = rng.random(10_000)
        frac = np.mean([choose_mixup_source(0, s, float(u)) == "real-real" for u in draws])
        assert abs(frac - 0.3) <= 0.02
