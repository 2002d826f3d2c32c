"""PNG and PFM image helpers."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .encoder import read_pfm, write_pfm  # noqa: F401


def read_png(path) -> np.ndarray:
    """RGB image as float32 in [0, 1]."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.round(255.0 * np.clip(np.asarray(img, np.float64), 0, 1)).astype(np.uint8)


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    Image.fromarray(to_uint8(img)).save(path, format="PNG")
