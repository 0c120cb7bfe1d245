"""Hinge and data-to-data cross-entropy loss contracts."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from balancegen.gan.losses import d2dce_loss, hinge_losses


class TestHingeLosses:
    def test_margins_exactly_met(self):
        l_d, l_g = hinge_losses(torch.tensor([1.0]), torch.tensor([-1.0]))
        assert float(l_d) == 0.0
        assert float(l_g) == 1.0

    def test_scores_at_origin(self):
        l_d, l_g = hinge_losses(torch.tensor([0.0]), torch.tensor([0.0]))
        assert float(l_d) == 2.0
        assert float(l_g) == 0.0

    def test_hand_arithmetic_pairs(self):
        # real (2, 0.5): mean(max(0,-1), max(0,0.5)) = 0.25
        # fake (-3, 0): mean(max(0,-2), max(0,1)) = 0.5 -> L_D = 0.75
        # L_G = -mean(-3, 0) = 1.5
        l_d, l_g = hinge_losses(torch.tensor([2.0, 0.5]), torch.tensor([-3.0, 0.0]))
        assert float(l_d) == pytest.approx(0.75, abs=1e-7)
        assert float(l_g) == pytest.approx(1.5, abs=1e-7)

    def test_empty_batch(self):
        with pytest.raises(ValueError, match="nonempty"):
            hinge_losses(torch.tensor([]), torch.tensor([1.0]))


def d2dce_oracle(emb, labels, proxies, temperature, m_p, m_n):
    """Term-by-term loop evaluation of the published contrastive objective."""
    n = len(labels)
    total = 0.0
    for i in range(n):
        s_p = float(np.dot(emb[i], proxies[labels[i]]))
        positive = max(m_p - s_p, 0.0) / temperature
        denom = 1.0  # exp(0) slot for the margin-clipped positive
        for j in range(n):
            if j != i and labels[j] != labels[i]:
                s = float(np.dot(emb[i], emb[j]))
                denom += math.exp(max(s + m_n, 0.0) / temperature)
        total += positive + math.log(denom)
    return total / n


def unit_rows(rng, n, d):
    rows = rng.normal(size=(n, d))
    return rows / np.linalg.norm(rows, axis=1, keepdims=True)


class TestD2DCELoss:
    def test_singleton_above_margin_is_zero(self):
        emb = torch.tensor([[1.0, 0.0]])
        proxies = torch.tensor([[1.0, 0.0]])  # similarity 1 > m_p
        loss = d2dce_loss(emb, torch.tensor([0]), proxies)
        assert float(loss) == pytest.approx(0.0, abs=1e-7)

    def test_singleton_below_margin_is_positive_term(self):
        emb = torch.tensor([[0.0, 1.0]])
        proxies = torch.tensor([[1.0, 0.0]])  # similarity 0 < m_p = 0.98
        loss = d2dce_loss(emb, torch.tensor([0]), proxies, temperature=0.25)
        assert float(loss) == pytest.approx(0.98 / 0.25, abs=1e-5)

    def test_single_label_batch_reduces_to_positive_terms(self):
        rng = np.random.default_rng(0)
        emb = torch.from_numpy(unit_rows(rng, 6, 8)).float()
        proxies = torch.from_numpy(unit_rows(rng, 3, 8)).float()
        labels = torch.ones(6, dtype=torch.long)
        loss = d2dce_loss(emb, labels, proxies, temperature=0.5)
        want = F.relu(0.98 - emb @ proxies[1]).mean() / 0.5
        assert float(loss) == pytest.approx(float(want), abs=1e-6)

    def test_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(1)
        for trial in range(30):
            n = int(rng.integers(1, 17))
            c = int(rng.integers(2, 6))
            d = int(rng.integers(4, 12))
            emb = unit_rows(rng, n, d)
            proxies = unit_rows(rng, c, d)
            labels = rng.integers(0, c, size=n)
            t = float(rng.uniform(0.1, 1.0))
            m_p = float(rng.uniform(0.5, 1.0))
            m_n = float(rng.uniform(0.0, 1.0))
            got = d2dce_loss(
                torch.from_numpy(emb),
                torch.from_numpy(labels),
                torch.from_numpy(proxies),
                temperature=t,
                margins=(m_p, m_n),
            )
            want = d2dce_oracle(emb, labels, proxies, t, m_p, m_n)
            assert float(got) == pytest.approx(want, abs=1e-5)

    def test_four_samples_two_classes_fixed(self):
        rng = np.random.default_rng(2)
        emb = unit_rows(rng, 4, 6)
        proxies = unit_rows(rng, 2, 6)
        labels = np.array([0, 0, 1, 1])
        got = d2dce_loss(
            torch.from_numpy(emb), torch.from_numpy(labels), torch.from_numpy(proxies)
        )
        want = d2dce_oracle(emb, labels, proxies, 0.25, 0.98, 1.0)
        assert float(got) == pytest.approx(want, abs=1e-5)

    def test_nonnegative(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 10))
            emb = unit_rows(rng, n, 5)
            proxies = unit_rows(rng, 4, 5)
            labels = rng.integers(0, 4, size=n)
            loss = d2dce_loss(
                torch.from_numpy(emb), torch.from_numpy(labels), torch.from_numpy(proxies)
            )
            assert float(loss) >= 0.0

    def test_unnormalized_rejected(self):
        emb = torch.tensor([[2.0, 0.0]])
        proxies = torch.tensor([[1.0, 0.0]])
        with pytest.raises(ValueError, match="unit-norm"):
            d2dce_loss(emb, torch.tensor([0]), proxies)
        with pytest.raises(ValueError, match="unit-norm"):
            d2dce_loss(proxies, torch.tensor([0]), emb)

    def test_gradients_flow(self):
        rng = np.random.default_rng(4)
        emb = torch.from_numpy(unit_rows(rng, 4, 5)).requires_grad_(True)
        proxies = torch.from_numpy(unit_rows(rng, 2, 5)).requires_grad_(True)
        labels = torch.tensor([0, 1, 0, 1])
        d2dce_loss(emb, labels, proxies, temperature=0.3).backward()
        assert emb.grad is not None and torch.isfinite(emb.grad).all()
        assert proxies.grad is not None and torch.isfinite(proxies.grad).all()
