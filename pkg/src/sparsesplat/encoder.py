"""Per-view feature extraction, windowed cross-view attention and depth-prior ingestion."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import CameraView, camera_embedding
from .numerics import NumericsError, conv2d, ensure_finite, se_gate, window_attention
from .weights import WeightStore, load_tensor

CAMERA_EMBED_DIM = 18


def register_encoder(store: WeightStore, channels: int, gate_hidden: int = 16, prefix: str = "encoder") -> None:
    mid = max(channels // 2, 1)
    store.add_conv(f"{prefix}.conv0", 3, 3, mid)
    store.add_conv(f"{prefix}.conv1", 3, mid, channels)
    store.add_conv(f"{prefix}.conv2", 3, channels, channels)
    store.add_mlp(f"{prefix}.se", [CAMERA_EMBED_DIM, gate_hidden, channels])


def register_attention(store: WeightStore, channels: int, attn_dim: int, prefix: str = "xattn") -> None:
    for stage in ("self", "cross"):
        store.add_linear(f"{prefix}.{stage}.q", channels, attn_dim)
        store.add_linear(f"{prefix}.{stage}.k", channels, attn_dim)
        # zero value projection: the block starts as an exact residual identity
        store.add_linear(f"{prefix}.{stage}.v", channels, channels, zero=True)


def extract_features(image: np.ndarray, cam: CameraView, weights: WeightStore, prefix: str = "encoder",
                     return_pregate: bool = False):
    """Quarter-resolution features ``[H/4, W/4, C]`` for one view.

    Two stride-2 convolutions followed by a stride-1 convolution, then a
    channel gate driven by the camera embedding.
    """
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 3:
        raise NumericsError(f"expected an [H, W, C] image, got shape {image.shape}")
    h, w = image.shape[:2]
    if h % 4 or w % 4:
        raise NumericsError(f"image size {h}x{w} is not divisible by 4")
    x = conv2d(image, weights, f"{prefix}.conv0", stride=2, activation="relu")
    x = conv2d(x, weights, f"{prefix}.conv1", stride=2, activation="relu")
    x = conv2d(x, weights, f"{prefix}.conv2")
    gated = se_gate(x, camera_embedding(cam), weights, f"{prefix}.se")
    ensure_finite(gated, "features")
    return (gated, x) if return_pregate else gated


def cross_view_attention(features: list[np.ndarray], weights: WeightStore, window: int,
                         prefix: str = "xattn") -> list[np.ndarray]:
    """One windowed self-attention pass per view, then one cross-attention pass.

    In the cross pass every view attends to each other view inside the same
    window; the per-pair outputs are averaged so the result is equivariant to
    view order. Both passes are residual.
    """
    shapes = {f.shape for f in features}
    if len(shapes) != 1:
        raise NumericsError(f"all views must share a feature shape, got {shapes}")
    out = [f + window_attention(f, f, weights, f"{prefix}.self", window) for f in features]
    if len(out) < 2:
        return out
    mixed = []
    for i, fi in enumerate(out):
        acc = np.zeros_like(fi)
        for j, fj in enumerate(out):
            if j != i:
                acc += window_attention(fi, fj, weights, f"{prefix}.cross", window)
        mixed.append(fi + acc / (len(out) - 1))
    return mixed


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


class PFMError(ValueError):
    pass


def write_pfm(path, data: np.ndarray, little_endian: bool = True) -> None:
    """Write a grayscale ``[H, W]`` or colour ``[H, W, 3]`` float map."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = "Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = "PF"
    else:
        raise PFMError(f"PFM holds [H, W] or [H, W, 3] arrays, got {data.shape}")
    h, w = data.shape[:2]
    scale = -1.0 if little_endian else 1.0
    dt = np.dtype("<f4" if little_endian else ">f4")
    with open(path, "wb") as fh:
        fh.write(f"{header}\n{w} {h}\n{scale}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(data[::-1], dtype=dt).tobytes())


def read_pfm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    # three whitespace-terminated header tokens groups: id, dims, scale
    m = re.match(rb"(P[Ff])\s+(\d+)\s+(\d+)\s+([-+0-9.eE]+)\s", raw)
    if m is None:
        raise PFMError(f"{path}: malformed PFM header")
    channels = 3 if m.group(1) == b"PF" else 1
    w, h = int(m.group(2)), int(m.group(3))
    try:
        scale = float(m.group(4))
    except ValueError as exc:
        raise PFMError(f"{path}: bad PFM scale") from exc
    if scale == 0:
        raise PFMError(f"{path}: PFM scale must be nonzero")
    dt = np.dtype("<f4" if scale < 0 else ">f4")
    payload = raw[m.end():]
    n = w * h * channels
    if len(payload) < n * 4:
        raise PFMError(f"{path}: PFM payload truncated ({len(payload)} bytes, need {n * 4})")
    arr = np.frombuffer(payload, dtype=dt, count=n).astype(np.float32)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape)[::-1].copy()


# ---------------------------------------------------------------------------
# Monocular priors
# ---------------------------------------------------------------------------


@dataclass
class PriorDepth:
    relative: np.ndarray  # [H, W], min-shifted to >= 0
    feature: np.ndarray | None = None  # [H/4, W/4, C]

    def normalized(self) -> np.ndarray:
        """Relative depth rescaled to [0, 1] by its own min/max."""
        lo, hi = float(self.relative.min()), float(self.relative.max())
        if hi - lo <= 0:
            return np.zeros_like(self.relative)
        return (self.relative - lo) / (hi - lo)


def companion_feature_path(prior_path) -> Path:
    p = Path(prior_path)
    return p.with_name(p.stem + ".feat.tswt")


def load_prior(path, height: int, width: int, cam: CameraView | None = None,
               weights: WeightStore | None = None, prefix: str = "depth_encoder") -> PriorDepth:
    """Load a relative-depth PFM and attach depth features.

    Features come from ``<stem>.feat.tswt`` next to the PFM when present;
    otherwise, if ``cam`` and ``weights`` are given, they are computed by
    running the feature extractor (``prefix``) on the normalised prior
    replicated to three channels.
    """
    rel = read_pfm(path)
    if rel.ndim != 2:
        raise PFMError(f"{path}: prior must be a grayscale PFM")
    if rel.shape != (height, width):
        raise PFMError(f"{path}: prior is {rel.shape[0]}x{rel.shape[1]}, expected {height}x{width}")
    ensure_finite(rel, f"prior {path}")
    prior = PriorDepth(rel - rel.min())
    feat_path = companion_feature_path(path)
    if feat_path.exists():
        prior.feature = load_tensor(feat_path).astype(np.float32)
    elif cam is not None and weights is not None:
        prior.feature = prior_features(prior, cam, weights, prefix)
    return prior


def prior_features(prior: PriorDepth, cam: CameraView, weights: WeightStore, prefix: str = "depth_encoder"):
    img = np.repeat(prior.normalized()[..., None], 3, axis=2)
    return extract_features(img, cam, weights, prefix)
