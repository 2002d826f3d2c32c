"""Full-resolution depth refinement conditioned on the image and a monocular prior."""

from __future__ import annotations

import numpy as np

from .encoder import PriorDepth
from .geometry import CameraView
from .numerics import NumericsError, conv2d, ensure_finite, upsample_bilinear
from .weights import WeightStore

N_INPUTS = 5  # depth, rgb, prior


def upsample_depth(quarter: np.ndarray, factor: int = 4) -> np.ndarray:
    """Bilinear upsampling with half-pixel alignment."""
    return upsample_bilinear(np.asarray(quarter), factor)


def register_refine(store: WeightStore, channels=(8, 16, 32), prefix: str = "refine") -> None:
    c0, c1, c2 = channels
    store.add_conv(f"{prefix}.enc0", 3, N_INPUTS, c0)
    store.add_conv(f"{prefix}.enc0b", 3, c0, c0)
    store.add_conv(f"{prefix}.down1", 3, c0, c1)
    store.add_conv(f"{prefix}.down2", 3, c1, c2)
    store.add_conv(f"{prefix}.up1", 3, c2 + c1, c1)
    store.add_conv(f"{prefix}.up0", 3, c1 + c0, c0)
    store.add_conv(f"{prefix}.head", 3, c0, 1, zero=True)


def _up2(x):
    return np.repeat(np.repeat(x, 2, axis=0), 2, axis=1)


def unet_residual(x: np.ndarray, weights: WeightStore, prefix: str = "refine") -> np.ndarray:
    """Two-level encoder/decoder with skip connections. ``[H, W, 5] -> [H, W]``."""
    if x.shape[0] % 4 or x.shape[1] % 4:
        raise NumericsError(f"refine input {x.shape[:2]} must be divisible by 4")
    e0 = conv2d(x, weights, f"{prefix}.enc0", activation="relu")
    e0 = conv2d(e0, weights, f"{prefix}.enc0b", activation="relu")
    e1 = conv2d(e0, weights, f"{prefix}.down1", stride=2, activation="relu")
    e2 = conv2d(e1, weights, f"{prefix}.down2", stride=2, activation="relu")
    d1 = conv2d(np.concatenate([_up2(e2), e1], axis=-1), weights, f"{prefix}.up1", activation="relu")
    d0 = conv2d(np.concatenate([_up2(d1), e0], axis=-1), weights, f"{prefix}.up0", activation="relu")
    return conv2d(d0, weights, f"{prefix}.head")[..., 0]


def refine_depth(fine_quarter: np.ndarray, image: np.ndarray, prior: PriorDepth, cam: CameraView,
                 weights: WeightStore, residual_scale: float = 0.1, prefix: str = "refine") -> np.ndarray:
    """Refined metric depth ``[H, W]``, clamped to the camera's ``[near, far]``.

    The conditioning stack is the upsampled depth normalised by the frustum
    range, the image, and the per-view min/max normalised prior. The network
    output is read as a fraction of the frustum range, scaled by
    ``residual_scale``.
    """
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    if prior.relative.shape != (h, w):
        raise NumericsError(f"prior {prior.relative.shape} does not match image {image.shape[:2]}")
    if fine_quarter.shape[0] * 4 != h or fine_quarter.shape[1] * 4 != w:
        raise NumericsError(f"depth {fine_quarter.shape} is not a quarter of image {image.shape[:2]}")
    near, far = cam.near, cam.far
    span = max(far - near, 1e-12)
    up = upsample_depth(fine_quarter.astype(np.float32))
    depth_norm = ((up - near) / span).astype(np.float32)
    stack = np.concatenate([depth_norm[..., None], image, prior.normalized()[..., None].astype(np.float32)], axis=-1)
    r = unet_residual(stack, weights, prefix)
    out = np.clip(up + r * np.float32(span * residual_scale), np.float32(near), np.float32(far))
    return ensure_finite(out, "refined depth")
