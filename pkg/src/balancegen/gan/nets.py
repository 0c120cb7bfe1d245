"""Generator and discriminator backbones shared by both conditioning modes.

Both modes use the same residual convolutional backbone: the generator
starts from an 8x8 base and doubles resolution per block; the
discriminator halves resolution per block down to 8x8. Conditioning enters
the generator through per-block normalization: class-conditional batch
normalization in label mode, spatially-adaptive normalization in pose
mode. The discriminator sees pose maps by channel concatenation at the
input and, in label mode, exposes a unit-norm embedding head for the
data-to-data cross-entropy loss. Every discriminator conv/linear weight is
wrapped in spectral normalization.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

_BASE_RES = 8


def _sn(module: nn.Module) -> nn.Module:
    return nn.utils.spectral_norm(module)


def _num_scale_blocks(image_size: int) -> int:
    n = math.log2(image_size / _BASE_RES)
    if n != int(n) or n < 1:
        raise ValueError(f"image size must be {_BASE_RES} * 2^k with k >= 1, got {image_size}")
    return int(n)


def standardize(features: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Parameter-free per-channel standardization over each sample's spatial extent."""
    mu = features.mean(dim=(2, 3), keepdim=True)
    var = features.var(dim=(2, 3), keepdim=True, unbiased=False)
    return (features - mu) / torch.sqrt(var + eps)


class ClassConditionalBatchNorm(nn.Module):
    """BatchNorm whose affine gain/bias are looked up per class label.

    Gain is parameterized as (1 + delta) with zero-initialized delta, so a
    fresh module is an unconditional batch norm.
    """

    def __init__(self, num_features: int, num_classes: int):
        super().__init__()
        self.bn = nn.BatchNorm2d(num_features, affine=False)
        self.gain = nn.Embedding(num_classes, num_features)
        self.bias = nn.Embedding(num_classes, num_features)
        nn.init.zeros_(self.gain.weight)
        nn.init.zeros_(self.bias.weight)

    def forward(self, x: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
        h = self.bn(x)
        g = (1.0 + self.gain(labels)).unsqueeze(-1).unsqueeze(-1)
        b = self.bias(labels).unsqueeze(-1).unsqueeze(-1)
        return g * h + b


class SpadeNorm(nn.Module):
    """Spatially-adaptive normalization driven by a conditioning map.

    out = (1 + gamma(map)) * standardize(features) + beta(map), where gamma
    and beta are convolutional projections of the map resampled (nearest
    neighbor, to keep thin strokes crisp) to the feature resolution. The
    projection convs are zero-initialized, so a fresh module is an exact
    identity over the standardized features.
    """

    def __init__(self, num_features: int, map_channels: int, hidden: int = 32):
        super().__init__()
        self.shared = nn.Conv2d(map_channels, hidden, kernel_size=3, padding=1)
        self.gamma = nn.Conv2d(hidden, num_features, kernel_size=3, padding=1)
        self.beta = nn.Conv2d(hidden, num_features, kernel_size=3, padding=1)
        nn.init.zeros_(self.gamma.weight)
        nn.init.zeros_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def forward(self, features: torch.Tensor, cond_map: torch.Tensor) -> torch.Tensor:
        if cond_map.shape[-2:] != features.shape[-2:]:
            cond_map = F.interpolate(cond_map, size=features.shape[-2:], mode="nearest")
        h = F.relu(self.shared(cond_map))
        return (1.0 + self.gamma(h)) * standardize(features) + self.beta(h)


def spade_modulate(
    features: torch.Tensor, cond_map: torch.Tensor, module: SpadeNorm
) -> torch.Tensor:
    """Apply a SpadeNorm module to features under a conditioning map."""
    return module(features, cond_map)


class _GenBlock(nn.Module):
    """Residual upsampling block with conditional normalization."""

    def __init__(
        self,
        in_ch: int,
        out_ch: int,
        mode: str,
        num_classes: int | None,
        map_channels: int | None,
        spade_hidden: int,
    ):
        super().__init__()
        self.mode = mode
        if mode == "label":
            self.norm1 = ClassConditionalBatchNorm(in_ch, num_classes)
            self.norm2 = ClassConditionalBatchNorm(out_ch, num_classes)
        else:
            self.norm1 = SpadeNorm(in_ch, map_channels, hidden=spade_hidden)
            self.norm2 = SpadeNorm(out_ch, map_channels, hidden=spade_hidden)
        self.conv1 = nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1)
        self.skip = nn.Conv2d(in_ch, out_ch, kernel_size=1)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x, cond)
        h = F.interpolate(F.relu(h), scale_factor=2, mode="nearest")
        h = self.conv1(h)
        h = F.relu(self.norm2(h, cond))
        h = self.conv2(h)
        sc = self.skip(F.interpolate(x, scale_factor=2, mode="nearest"))
        return h + sc


class Generator(nn.Module):
    """Conditional image generator; outputs tanh-bounded 3xHxW images."""

    def __init__(
        self,
        mode: str,
        image_size: int,
        z_dim: int,
        width: int,
        num_classes: int | None = None,
        map_channels: int | None = None,
        spade_hidden: int = 32,
    ):
        super().__init__()
        if mode not in ("label", "pose"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "label" and not num_classes:
            raise ValueError("label mode requires num_classes")
        if mode == "pose" and not map_channels:
            raise ValueError("pose mode requires map_channels")
        self.mode = mode
        self.image_size = image_size
        self.z_dim = z_dim
        n_blocks = _num_scale_blocks(image_size)
        mults = [max(4 >> i, 1) for i in range(n_blocks + 1)]
        self.base_ch = width * mults[0]
        self.fc = nn.Linear(z_dim, self.base_ch * _BASE_RES * _BASE_RES)
        self.blocks = nn.ModuleList(
            _GenBlock(
                width * mults[i],
                width * mults[i + 1],
                mode,
                num_classes,
                map_channels,
                spade_hidden,
            )
            for i in range(n_blocks)
        )
        self.out_norm = nn.BatchNorm2d(width * mults[-1])
        self.out_conv = nn.Conv2d(width * mults[-1], 3, kernel_size=3, padding=1)

    def forward(
        self,
        z: torch.Tensor,
        labels: torch.Tensor | None = None,
        maps: torch.Tensor | None = None,
    ) -> torch.Tensor:
        if z.dim() != 2 or z.shape[1] != self.z_dim:
            raise ValueError(f"latent batch must be (N, {self.z_dim}), got {tuple(z.shape)}")
        if self.mode == "label":
            if labels is None:
                raise ValueError("label mode requires labels")
            cond = labels
        else:
            if maps is None:
                raise ValueError("pose mode requires conditioning maps")
            cond = maps
        h = self.fc(z).view(z.shape[0], self.base_ch, _BASE_RES, _BASE_RES)
        for block in self.blocks:
            h = block(h, cond)
        h = F.relu(self.out_norm(h))
        return torch.tanh(self.out_conv(h))


class _DiscBlock(nn.Module):
    """Residual downsampling block, spectrally normalized."""

    def __init__(self, in_ch: int, out_ch: int, first: bool = False):
        super().__init__()
        self.first = first
        self.conv1 = _sn(nn.Conv2d(in_ch, out_ch, kernel_size=3, padding=1))
        self.conv2 = _sn(nn.Conv2d(out_ch, out_ch, kernel_size=3, padding=1))
        self.skip = _sn(nn.Conv2d(in_ch, out_ch, kernel_size=1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x if self.first else F.relu(x)
        h = F.relu(self.conv1(h))
        h = F.avg_pool2d(self.conv2(h), 2)
        if self.first:
            sc = self.skip(F.avg_pool2d(x, 2))
        else:
            sc = F.avg_pool2d(self.skip(x), 2)
        return h + sc


class Discriminator(nn.Module):
    """Adversarial critic; label mode adds a unit-norm embedding head and proxies."""

    def __init__(
        self,
        mode: str,
        image_size: int,
        width: int,
        num_classes: int | None = None,
        map_channels: int | None = None,
        embed_dim: int = 64,
    ):
        super().__init__()
        if mode not in ("label", "pose"):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "label" and not num_classes:
            raise ValueError("label mode requires num_classes")
        if mode == "pose" and not map_channels:
            raise ValueError("pose mode requires map_channels")
        self.mode = mode
        self.image_size = image_size
        self.in_channels = 3 + (map_channels if mode == "pose" else 0)
        n_blocks = _num_scale_blocks(image_size)
        mults = [min(1 << i, 4) for i in range(n_blocks + 1)]  # 1,2,4,4,...
        blocks = [_DiscBlock(self.in_channels, width * mults[0], first=True)]
        blocks += [
            _DiscBlock(width * mults[i], width * mults[i + 1]) for i in range(n_blocks)
        ]
        self.blocks = nn.ModuleList(blocks)
        self.feat_dim = width * mults[-1]
        self.adv = _sn(nn.Linear(self.feat_dim, 1))
        if mode == "label":
            self.embed_head = _sn(nn.Linear(self.feat_dim, embed_dim))
            self.proxies = nn.Embedding(num_classes, embed_dim)
        else:
            self.embed_head = None
            self.proxies = None

    def forward(
        self, images: torch.Tensor, maps: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor | None]:
        if images.shape[-2:] != (self.image_size, self.image_size):
            raise ValueError(
                f"image geometry {tuple(images.shape[-2:])} does not match "
                f"discriminator geometry {self.image_size}"
            )
        if self.mode == "pose":
            if maps is None:
                raise ValueError("pose mode requires conditioning maps")
            h = torch.cat([images, maps], dim=1)
        else:
            h = images
        for block in self.blocks:
            h = block(h)
        h = F.relu(h).sum(dim=(2, 3))
        scores = self.adv(h).squeeze(1)
        if self.mode == "label":
            emb = F.normalize(self.embed_head(h), dim=1)
            return scores, emb
        return scores, None

    def normalized_proxies(self) -> torch.Tensor:
        return F.normalize(self.proxies.weight, dim=1)


def spectral_norm_max(discriminator: Discriminator) -> float:
    """Exact largest singular value among the normalized discriminator weights.

    Spectral normalization divides by a power-iteration estimate, so the
    effective weight's true top singular value hovers near (and can
    slightly exceed) 1; this reports the max over all wrapped layers.
    """
    worst = 0.0
    for module in discriminator.modules():
        if hasattr(module, "weight_orig"):
            w = module.weight_orig.detach()
            u = module.weight_u.detach()
            v = module.weight_v.detach()
            mat = w.reshape(w.shape[0], -1)
            sigma_est = float(u @ (mat @ v))
            top = float(torch.linalg.matrix_norm(mat / sigma_est, ord=2))
            worst = max(worst, top)
    return worst
