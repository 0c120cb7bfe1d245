"""Image decoding and tensor conversion shared by training and synthesis.

Pixel convention throughout the package: on disk, 8-bit RGB lossless files;
in memory, either uint8 (H, W, 3) arrays or float32 (3, H, W) tensors
normalized to [-1, 1].
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from PIL import Image


def load_image(path: str | Path, expected_size: tuple[int, int] | None = None) -> np.ndarray:
    """Decode an image to uint8 (H, W, 3), validating declared geometry."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.uint8)
    if expected_size is not None and arr.shape[:2] != tuple(expected_size):
        raise ValueError(
            f"{path}: image is {arr.shape[:2]}, manifest declares {tuple(expected_size)}"
        )
    return arr


def save_image(array: np.ndarray, path: str | Path) -> Path:
    """Write a uint8 (H, W, 3) array as PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode="RGB").save(path, format="PNG")
    return path


def to_unit_tensor(array: np.ndarray) -> torch.Tensor:
    """uint8 (H, W, 3) -> float32 (3, H, W) in [-1, 1]."""
    t = torch.from_numpy(np.ascontiguousarray(array)).to(torch.float32)
    return t.permute(2, 0, 1) / 127.5 - 1.0


def to_uint8_image(tensor: torch.Tensor) -> np.ndarray:
    """float (3, H, W) in [-1, 1] -> uint8 (H, W, 3), round-half-away quantization."""
    arr = tensor.detach().to(torch.float32).clamp(-1.0, 1.0).permute(1, 2, 0).numpy()
    return np.floor((arr + 1.0) * 127.5 + 0.5).clip(0, 255).astype(np.uint8)
