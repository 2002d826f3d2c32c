"""Cross-view depth matching: plane-sweep correlation and the deformable refinement block.

All grids here live at the feature resolution (quarter of the image). Cameras
are passed at full image resolution and rescaled to the grid they describe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import CAMERA_EMBED_DIM
from .geometry import CameraView, _in_bounds, camera_embedding, epipolar_locations, sweep_sample
from .numerics import NumericsError, bilinear_sample, linear, mlp, se_gate, softmax_last, window_attention
from .weights import WeightStore


@dataclass
class DepthDistribution:
    """Per-pixel matching logits over depth candidates."""

    logits: np.ndarray  # [h, w, D]
    candidates: np.ndarray  # [D]

    def probabilities(self) -> np.ndarray:
        return softmax_last(self.logits)

    def with_logits(self, logits) -> "DepthDistribution":
        return DepthDistribution(logits, self.candidates)


@dataclass
class DeformableField:
    offsets: np.ndarray  # [h, w, D, P, 2], grid pixels in the target view
    weights: np.ndarray  # [h, w, D, P], softmax over P


def grid_camera(cam: CameraView, grid: np.ndarray) -> CameraView:
    """``cam`` rescaled to the resolution of ``grid`` (``[h, w, ...]``)."""
    h, w = grid.shape[:2]
    if w == cam.width and h == cam.height:
        return cam
    factor = w / cam.width
    if abs(h / cam.height - factor) > 1e-12:
        raise NumericsError(f"grid {h}x{w} is not a uniform rescale of a {cam.height}x{cam.width} camera")
    return cam.scaled(factor)


def _correlate(f_i: np.ndarray, sampled: np.ndarray) -> np.ndarray:
    c = f_i.shape[-1]
    return np.einsum("hwc,hwdc->hwd", f_i, sampled) / np.sqrt(c).astype(f_i.dtype)


def coarse_match(f_i: np.ndarray, targets, cam_i: CameraView, candidates) -> DepthDistribution:
    """Scaled dot-product correlation against every target view, averaged.

    ``targets`` is a sequence of ``(features_j, cam_j)``. Samples that fall
    outside a target view contribute a logit of 0 for that target.
    """
    if len(targets) == 0:
        raise NumericsError("coarse_match needs at least one target view")
    gi = grid_camera(cam_i, f_i)
    total = np.zeros(f_i.shape[:2] + (len(candidates),), dtype=f_i.dtype)
    for f_j, cam_j in targets:
        sampled, _ = sweep_sample(f_j, gi, grid_camera(cam_j, f_j), candidates)
        total += _correlate(f_i, sampled)
    return DepthDistribution(total / len(targets), np.asarray(candidates, np.float64))


def register_ddmt(store: WeightStore, D: int, P: int, C: int, *, depth_attn_dim: int = 16,
                  theta_hidden: int = 32, gate_hidden: int = 16, prefix: str = "ddmt0") -> None:
    store.add_linear(f"{prefix}.self.q", D, depth_attn_dim)
    store.add_linear(f"{prefix}.self.k", D, depth_attn_dim)
    store.add_linear(f"{prefix}.self.v", D, D, zero=True)
    store.add_mlp(f"{prefix}.f_theta", [D, theta_hidden, C])
    store.add_mlp(f"{prefix}.f_phi", [CAMERA_EMBED_DIM, gate_hidden, C])
    store.add_linear(f"{prefix}.f_p", C, D * P * 2, zero=True)
    store.add_linear(f"{prefix}.f_w", C, D * P)


def depth_self_attention(dist: DepthDistribution, weights: WeightStore, window: int,
                         prefix: str = "ddmt0") -> DepthDistribution:
    """Windowed self-attention over pixels, each token being its logit vector."""
    lg = dist.logits
    out = lg + window_attention(lg, lg, weights, f"{prefix}.self", window)
    return dist.with_logits(out)


def depth_aware_feature(d_coarse: DepthDistribution, depth_feature: np.ndarray, cam_i: CameraView,
                        weights: WeightStore, prefix: str = "ddmt0") -> np.ndarray:
    """MLP of the logit vector plus camera-gated monocular depth features."""
    if d_coarse.logits.shape[:2] != depth_feature.shape[:2]:
        raise NumericsError(f"logits {d_coarse.logits.shape} and depth features {depth_feature.shape} disagree")
    from_logits = mlp(d_coarse.logits.astype(depth_feature.dtype), weights, f"{prefix}.f_theta", 2)
    from_prior = se_gate(depth_feature, camera_embedding(cam_i), weights, f"{prefix}.f_phi")
    return from_logits + from_prior


def predict_deformable_field(fda: np.ndarray, weights: WeightStore, D: int, P: int,
                             prefix: str = "ddmt0") -> DeformableField:
    h, w = fda.shape[:2]
    offsets = linear(fda, weights, f"{prefix}.f_p").reshape(h, w, D, P, 2)
    attn = softmax_last(linear(fda, weights, f"{prefix}.f_w").reshape(h, w, D, P))
    return DeformableField(offsets, attn)


def deformable_sample(f_j: np.ndarray, cam_i: CameraView, cam_j: CameraView, candidates,
                      offsets: np.ndarray):
    """Sample ``f_j`` at epipolar locations shifted by per-point offsets.

    Returns ``(samples[h, w, D, P, C], mask[h, w, D, P])``. The source grid
    size is taken from ``offsets``.
    """
    gi = grid_camera(cam_i, offsets)
    gj = grid_camera(cam_j, f_j)
    x, y, ok = epipolar_locations(gi, gj, candidates)
    xs = x[..., None] + offsets[..., 0]
    ys = y[..., None] + offsets[..., 1]
    h, w = f_j.shape[:2]
    mask = ok[..., None] & _in_bounds(xs, ys, w, h)
    vals, _ = bilinear_sample(f_j, xs, ys)
    vals = np.where(mask[..., None], vals, 0).astype(f_j.dtype, copy=False)
    return vals, mask.astype(f_j.dtype)


def depth_residual(f_i: np.ndarray, field: DeformableField, sampled: np.ndarray) -> np.ndarray:
    """Correlation of source features with the attention-weighted deformable samples."""
    if sampled.shape[:4] != field.weights.shape:
        raise NumericsError(f"samples {sampled.shape} and weights {field.weights.shape} disagree")
    # fixed summation order over points keeps the reduction deterministic
    agg = np.zeros(sampled.shape[:3] + sampled.shape[4:], dtype=sampled.dtype)
    for q in range(sampled.shape[3]):
        agg += field.weights[..., q, None].astype(sampled.dtype) * sampled[..., q, :]
    return _correlate(f_i, agg)


def fine_depth(d_coarse: DepthDistribution, residual) -> DepthDistribution:
    """Add the matching residual (averaged first when one per target view is given)."""
    if isinstance(residual, (list, tuple)):
        if not residual:
            raise NumericsError("no residuals to average")
        residual = sum(residual[1:], residual[0].copy()) / len(residual)
    if residual.shape != d_coarse.logits.shape:
        raise NumericsError(f"residual {residual.shape} does not match logits {d_coarse.logits.shape}")
    return d_coarse.with_logits(d_coarse.logits + residual)


def expected_depth(dist: DepthDistribution, mode: str = "expectation") -> np.ndarray:
    """Scalar metric depth per pixel.

    ``expectation`` (default) is the softmax-weighted mean of the candidates,
    so it always lies within ``[candidates[0], candidates[-1]]``; ``argmax``
    picks the top-scoring candidate.
    """
    cand = dist.candidates.astype(dist.logits.dtype)
    if mode == "argmax":
        return cand[np.argmax(dist.logits, axis=-1)]
    if mode != "expectation":
        raise ValueError(f"unknown depth mode {mode!r}")
    depth = dist.probabilities() @ cand
    return np.clip(depth, cand[0], cand[-1])


def ddmt_block(dist: DepthDistribution, f_i: np.ndarray, targets, cam_i: CameraView, depth_feature: np.ndarray,
               weights: WeightStore, P: int, window: int, prefix: str = "ddmt0"):
    """One pass of the depth-aware deformable matching block for source view ``i``.

    Returns ``(d_fine, field)``.
    """
    D = dist.logits.shape[-1]
    d_sa = depth_self_attention(dist, weights, window, prefix)
    fda = depth_aware_feature(d_sa, depth_feature, cam_i, weights, prefix)
    field = predict_deformable_field(fda, weights, D, P, prefix)
    gi = grid_camera(cam_i, f_i)
    residuals = []
    for f_j, cam_j in targets:
        sampled, _ = deformable_sample(f_j, gi, cam_j, dist.candidates, field.offsets)
        residuals.append(depth_residual(f_i, field, sampled))
    return fine_depth(d_sa, residuals), field


def match_views(features, depth_features, cams, candidates_per_view, weights: WeightStore, *, P: int,
                window: int, repeats: int = 1):
    """Coarse match then ``repeats`` refinement blocks for every view against all others."""
    out = []
    for i, f_i in enumerate(features):
        targets = [(features[j], cams[j]) for j in range(len(features)) if j != i]
        dist = coarse_match(f_i, targets, cams[i], candidates_per_view[i])
        for r in range(repeats):
            dist, _ = ddmt_block(dist, f_i, targets, cams[i], depth_features[i], weights, P, window,
                                 prefix=f"ddmt{r}")
        out.append(dist)
    return out
