"""Adversarial and conditional losses.

The adversarial objective is the hinge loss. The conditional objective in
label mode is a data-to-data cross-entropy: each sample's embedding is
attracted to its class proxy and repelled from same-batch samples of other
classes, all on the unit hypersphere. The positive similarity saturates at
the margin m_p (easy positives stop contributing) and each negative
similarity is floored at -m_n (easy negatives stop contributing)::

    L_i = max(m_p - s_i,proxy, 0) / t
        + log(1 + sum_{j: y_j != y_i} exp(max(s_ij + m_n, 0) / t))

averaged over the batch. With no different-label negatives in the batch,
the loss reduces to the positive term alone, which is 0 exactly when the
proxy similarity exceeds the margin clip.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F


def hinge_losses(
    real_scores: torch.Tensor, fake_scores: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Hinge adversarial losses: (discriminator loss, generator loss).

    L_D = mean(max(0, 1 - real)) + mean(max(0, 1 + fake));
    L_G = -mean(fake).
    """
    if real_scores.numel() == 0 or fake_scores.numel() == 0:
        raise ValueError("score batches must be nonempty")
    l_d = F.relu(1.0 - real_scores).mean() + F.relu(1.0 + fake_scores).mean()
    l_g = -fake_scores.mean()
    return l_d, l_g


def d2dce_loss(
    embeddings: torch.Tensor,
    labels: torch.Tensor,
    class_proxies: torch.Tensor,
    temperature: float = 0.25,
    margins: tuple[float, float] = (0.98, 1.0),
) -> torch.Tensor:
    """Data-to-data cross-entropy over unit embeddings and class proxies.

    ``margins`` is (m_p, m_n). Embeddings and proxies must be unit-norm
    (deviation above 1e-3 is an error). The result is always >= 0.
    """
    if embeddings.dim() != 2 or embeddings.shape[0] < 1:
        raise ValueError(f"embeddings must be (N>=1, D), got {tuple(embeddings.shape)}")
    m_p, m_n = margins
    emb_norms = embeddings.norm(dim=1)
    if (emb_norms - 1.0).abs().max() > 1e-3:
        raise ValueError("embeddings are not unit-norm")
    proxy_norms = class_proxies.norm(dim=1)
    if (proxy_norms - 1.0).abs().max() > 1e-3:
        raise ValueError("class proxies are not unit-norm")

    n = embeddings.shape[0]
    pos_sim = (embeddings * class_proxies[labels]).sum(dim=1)
    positive = F.relu(m_p - pos_sim) / temperature

    sim = embeddings @ embeddings.T
    clipped = F.relu(sim + m_n) / temperature
    neg_mask = labels.unsqueeze(0) != labels.unsqueeze(1)
    # log(1 + sum over negatives of exp(clipped)), stabilized by the row max
    stabilizer = torch.where(neg_mask, clipped, clipped.new_zeros(())).max(dim=1).values
    stabilizer = torch.clamp(stabilizer, min=0.0).detach()
    exp_terms = torch.where(
        neg_mask, torch.exp(clipped - stabilizer.unsqueeze(1)), clipped.new_zeros(())
    )
    negative = stabilizer + torch.log(torch.exp(-stabilizer) + exp_terms.sum(dim=1))
    return (positive + negative).sum() / n
