"""Per-scene optimisation of a Gaussian set against supervision images (MSE, Adam)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..config import FitConfig, RunConfig
from ..gaussians import OPACITY_EPS, GaussianSet
from ..geometry import CameraView, unproject
from ..numerics import NumericsError, sigmoid
from ..rasterizer import rasterize, rasterize_backward
from ..sh import num_coeffs
from .metrics import psnr

class DivergenceError(NumericsError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class FitResult:
    gaussians: GaussianSet  # best parameters seen
    losses: list[float]  # raw loss at each step, before that step's update
    best_trace: list[float]  # running minimum of ``losses``
    best_iteration: int
    psnr: float  # mean over supervision views, at the best parameters
    renders: list[np.ndarray] = field(default_factory=list)


def random_gaussians(cam: CameraView, n: int, sh_degree: int = 1, seed: int = 0,
                     depth_range: tuple[float, float] | None = None) -> GaussianSet:
    """``n`` isotropic Gaussians scattered through the view frustum of ``cam``.

    Pixel positions are uniform over the image; depths are uniform in inverse
    depth over ``depth_range`` (default: the camera's near/far). Each
    Gaussian's projected size is set so that ``n`` of them roughly tile the
    image.
    """
    rng = np.random.default_rng(seed)
    near, far = depth_range if depth_range is not None else (cam.near, cam.far)
    u = rng.uniform(0, cam.width, n)
    v = rng.uniform(0, cam.height, n)
    inv = rng.uniform(1 / far, 1 / near, n)
    depth = 1 / inv
    means = unproject(u - 0.5, v - 0.5, depth, cam)
    px = np.sqrt(cam.width * cam.height / n) * 0.5
    s = depth * px / (0.5 * (cam.fx + cam.fy))
    scales = np.repeat(s[:, None], 3, axis=1)
    rot = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    sh = np.zeros((n, num_coeffs(sh_degree), 3))
    sh[:, 0, :] = rng.normal(0, 0.3, (n, 3))
    return GaussianSet(means, np.full(n, 0.5), scales, rot, sh, sh_degree)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lrs: dict[str, float], betas=(0.9, 0.999), eps=1e-15):
        self.lrs = lrs
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k in params:
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            params[k] -= self.lrs[k] * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _to_params(g: GaussianSet) -> dict[str, np.ndarray]:
    op = np.clip(g.opacities.astype(np.float64), OPACITY_EPS, 1 - OPACITY_EPS)
    return {
        "means": g.means.astype(np.float64).copy(),
        "log_scales": np.log(g.scales.astype(np.float64)),
        "rotations": g.rotations.astype(np.float64).copy(),
        "logit_opacities": np.log(op) - np.log1p(-op),
        "sh": g.sh.astype(np.float64).copy(),
    }


def _from_params(p: dict[str, np.ndarray], sh_degree: int) -> GaussianSet:
    q = p["rotations"]
    op = np.clip(sigmoid(p["logit_opacities"]), OPACITY_EPS, 1 - OPACITY_EPS)
    return GaussianSet(p["means"].copy(), op, np.exp(p["log_scales"]), q.copy(), p["sh"].copy(), sh_degree)


def _loss_and_grads(g: GaussianSet, views, background, threads, with_grads=True):
    loss = 0.0
    renders = []
    grads = None
    n = len(views)
    for img, cam in views:
        h, w = img.shape[:2]
        out = rasterize(g, cam, w, h, background, threads=threads).color.astype(np.float64)
        renders.append(out)
        diff = out - img
        loss += float(np.mean(diff * diff)) / n
        if not with_grads:
            continue
        gc = 2.0 * diff / (diff.size * n)
        vg = rasterize_backward(g, cam, w, h, gc, background, threads=threads)
        if grads is None:
            grads = {k: v.astype(np.float64) for k, v in vg.blocks().items()}
        else:
            for k, v in vg.blocks().items():
                grads[k] += v
    return loss, renders, grads


def fit_gaussians(init: GaussianSet, views, fit: FitConfig, threads: int = 1, scene_scale: float = 1.0,
                  callback=None) -> FitResult:
    """Optimise ``init`` so its renders match ``views`` (pairs of image, camera).

    Loss is the mean over views of the per-view pixel MSE. Gradients flow to
    centres, log-scales, raw quaternions, logit opacities and SH coefficients.
    The returned set holds the parameters with the lowest loss seen.
    """
    if not views:
        raise ValueError("fitting needs at least one supervision view")
    views = [(np.asarray(img, np.float64), cam) for img, cam in views]
    params = _to_params(init)
    lrs = {
        "means": fit.lr * fit.lr_means * scene_scale,
        "log_scales": fit.lr * fit.lr_scales,
        "rotations": fit.lr * fit.lr_rotations,
        "logit_opacities": fit.lr * fit.lr_opacities,
        "sh": fit.lr * fit.lr_sh,
    }
    opt = Adam(params, lrs, fit.betas, fit.eps)
    losses, best_trace = [], []
    best_loss, best_it, best_set = np.inf, 0, init
    for it in range(fit.iterations + 1):
        g = init if it == 0 else _from_params(params, init.sh_degree)
        last = it == fit.iterations
        try:
            loss, _, grads = _loss_and_grads(g, views, fit.background, threads, with_grads=not last)
        except NumericsError as exc:
            raise DivergenceError(it, str(exc)) from exc
        if not np.isfinite(loss):
            raise DivergenceError(it, f"loss is {loss}")
        losses.append(loss)
        if loss < best_loss:
            best_loss, best_it, best_set = loss, it, g
        best_trace.append(best_loss)
        if callback is not None:
            callback(it, loss, best_loss)
        if last or loss == 0.0:
            break
        sg = {
            "means": grads["means"],
            "log_scales": grads["scales"] * np.exp(params["log_scales"]),
            "rotations": grads["rotations"],
            "logit_opacities": grads["opacities"] * _sigmoid_slope(params["logit_opacities"]),
            "sh": grads["sh"],
        }
        for k, v in sg.items():
            if not np.all(np.isfinite(v)):
                raise DivergenceError(it, f"non-finite gradient in {k}")
        opt.step(params, sg)

    if best_set is not init:
        q = best_set.rotations / np.linalg.norm(best_set.rotations, axis=1, keepdims=True)
        best_set = GaussianSet(best_set.means, best_set.opacities, best_set.scales, q, best_set.sh, init.sh_degree)
    _, renders, _ = _loss_and_grads(best_set, views, fit.background, 1, with_grads=False)
    score = float(np.mean([psnr(r, img) for r, (img, _) in zip(renders, views)]))
    return FitResult(best_set, losses, best_trace, best_it, score, renders)


def _sigmoid_slope(x):
    s = sigmoid(x)
    clipped = (s <= OPACITY_EPS) | (s >= 1 - OPACITY_EPS)
    return np.where(clipped, 0.0, s * (1 - s))


def fit_scene(scene, config: RunConfig, weights=None, init: GaussianSet | None = None, callback=None) -> FitResult:
    """Fit Gaussians to the context views of ``scene``.

    Initialisation is, in order of preference: ``init``; the feed-forward
    prediction when ``config.fit.init == "infer"``; otherwise random
    Gaussians inside the first view's frustum.
    """
    fit = config.fit
    idx = scene.context if scene.context else list(range(len(scene.views)))
    views = [(scene.views[i].image, scene.views[i].camera) for i in idx]
    if init is None:
        if fit.init == "infer":
            from .pipeline import run_infer
            init = run_infer(scene, config, weights, render_targets=False).gaussians
        elif fit.init == "random":
            init = random_gaussians(views[0][1], fit.n_gaussians, config.sh_degree, config.seed)
        else:
            raise ValueError(f"unknown fit init {fit.init!r}")
    depth = np.linalg.norm(init.means.astype(np.float64) - views[0][1].position, axis=1)
    scale = float(np.median(depth)) if len(depth) else 1.0
    return fit_gaussians(init, views, fit, config.threads, scale, callback)
