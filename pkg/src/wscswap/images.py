"""PNG I/O. Pixels in [-1, 1] map affinely onto [0, 255] with round-half-even."""
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ShapeError


def to_uint8(pixels: torch.Tensor) -> np.ndarray:
    arr = pixels.detach().cpu().double().numpy()
    if arr.ndim != 3:
        raise ShapeError("expected a C x H x W image")
    arr = np.round((np.clip(arr, -1, 1) + 1.0) * 127.5)
    return arr.astype(np.uint8).transpose(1, 2, 0)


def from_uint8(arr: np.ndarray) -> torch.Tensor:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return torch.from_numpy((arr.transpose(2, 0, 1) / 127.5 - 1.0).astype(np.float32))


def save_png(pixels: torch.Tensor, path) -> None:
    arr = to_uint8(pixels)
    mode = "L" if arr.shape[2] == 1 else "RGB"
    Image.fromarray(arr[:, :, 0] if mode == "L" else arr, mode=mode).save(Path(path))


def load_png(path) -> torch.Tensor:
    try:
        img = Image.open(Path(path)).convert("RGB")
    except (OSError, ValueError) as exc:
        raise ShapeError(f"cannot read image {path}: {exc}") from exc
    return from_uint8(np.asarray(img))
