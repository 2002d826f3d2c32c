"""End-to-end feed-forward inference: images and cameras in, Gaussians and renders out."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import RunConfig
from ..encoder import PriorDepth, cross_view_attention, extract_features, prior_features, register_attention, \
    register_encoder
from ..gaussians import GaussianSet, predict_gaussians, register_heads
from ..geometry import depth_candidates
from ..matching import DepthDistribution, coarse_match, ddmt_block, expected_depth, register_ddmt
from ..rasterizer import RenderOutput, rasterize
from ..refine import refine_depth, register_refine
from ..weights import WeightFormatError, WeightStore
from .scene import SceneBundle


class PipelineError(ValueError):
    pass


def init_weights(config: RunConfig, seed: int | None = None) -> WeightStore:
    """Seeded initial values for every layer the pipeline reads."""
    store = WeightStore(seed=config.seed if seed is None else seed)
    C = config.channels
    register_encoder(store, C, config.gate_hidden, prefix="encoder")
    register_encoder(store, C, config.gate_hidden, prefix="depth_encoder")
    register_attention(store, C, config.attn_dim, prefix="xattn")
    for r in range(config.ddmt_repeats):
        register_ddmt(store, config.depth_candidates, config.points, C, depth_attn_dim=config.depth_attn_dim,
                      theta_hidden=config.theta_hidden, gate_hidden=config.gate_hidden, prefix=f"ddmt{r}")
    register_refine(store, config.refine_channels, prefix="refine")
    register_heads(store, C, config.head_hidden, config.sh_degree, prefix="gaussian")
    return store


def check_weights(weights: WeightStore, config: RunConfig) -> None:
    """Raise if ``weights`` lacks an entry the pipeline needs or has the wrong shape."""
    expected = init_weights(config)
    for name in expected.names():
        if name not in weights:
            raise WeightFormatError(f"weights are missing entry {name!r}")
        weights.expect(name, expected[name].shape)


@dataclass
class InferResult:
    gaussians: GaussianSet
    renders: dict[int, RenderOutput] = field(default_factory=dict)  # by scene view index
    depths: list[np.ndarray] = field(default_factory=list)  # refined, one per context view
    distributions: list[DepthDistribution] = field(default_factory=list)  # final, one per context view


def _load_priors(scene: SceneBundle, weights: WeightStore) -> list[PriorDepth]:
    priors = []
    for i in scene.context:
        cam = scene.views[i].camera
        prior = scene.prior(i, weights)
        if prior is None:
            # no monocular cue: flat relative depth with zero depth features
            prior = PriorDepth(np.zeros((cam.height, cam.width), np.float32),
                               np.zeros((cam.height // 4, cam.width // 4, weights["encoder.conv2.bias"].shape[0]),
                                        np.float32))
        elif prior.feature is None:
            prior.feature = prior_features(prior, cam, weights)
        priors.append(prior)
    return priors


def run_infer(scene: SceneBundle, config: RunConfig, weights: WeightStore | None = None,
              render_targets: bool = True) -> InferResult:
    """Predict pixel-aligned Gaussians from the context views and render every target."""
    if len(scene.context) < 2:
        raise PipelineError(f"inference needs at least 2 context views, got {len(scene.context)}")
    if weights is None:
        weights = init_weights(config)
    check_weights(weights, config)

    cams = scene.cameras(scene.context)
    images = scene.images(scene.context)
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise PipelineError(f"context images must share one size, got {sorted(shapes)}")

    feats = [extract_features(img, cam, weights, "encoder") for img, cam in zip(images, cams)]
    feats = cross_view_attention(feats, weights, config.window, "xattn")
    priors = _load_priors(scene, weights)

    dists, depths = [], []
    for i, (f_i, cam_i) in enumerate(zip(feats, cams)):
        targets = [(feats[j], cams[j]) for j in range(len(feats)) if j != i]
        cand = depth_candidates(cam_i.near, cam_i.far, config.depth_candidates)
        dist = coarse_match(f_i, targets, cam_i, cand)
        for r in range(config.ddmt_repeats):
            dist, _ = ddmt_block(dist, f_i, targets, cam_i, priors[i].feature, weights, config.points,
                                 config.window, prefix=f"ddmt{r}")
        quarter = expected_depth(dist, config.depth_mode)
        depths.append(refine_depth(quarter, images[i], priors[i], cam_i, weights, config.residual_scale))
        dists.append(dist)

    gaussians = predict_gaussians(depths, feats, images, cams, dists, weights, config.sh_degree)
    result = InferResult(gaussians, depths=depths, distributions=dists)
    if render_targets:
        for t in scene.targets:
            cam = scene.views[t].camera
            result.renders[t] = rasterize(gaussians, cam, cam.width, cam.height, config.background,
                                          threads=config.threads)
    return result
