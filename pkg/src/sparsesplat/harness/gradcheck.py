"""Finite-difference verification of the analytic gradients."""

from __future__ import annotations

import numpy as np

from ..gaussians import GaussianSet
from ..geometry import CameraView
from ..numerics import (GradCheckReport, conv2d, conv2d_backward, grad_check, linear, linear_backward, se_gate,
                        se_gate_backward)
from ..rasterizer import gate_margin, rasterize, rasterize_backward
from ..weights import WeightStore

RASTER_TOL = 1e-3
NUMERICS_TOL = 1e-5
MIN_GATE_MARGIN = 1e-4


def random_scene(rng: np.random.Generator, n: int, size: int = 64, sh_degree: int = 1,
                 opacity=(0.2, 0.95)) -> tuple[GaussianSet, CameraView]:
    """``n`` random anisotropic Gaussians in front of an identity-pose camera."""
    f = 60.0 * size / 64
    cam = CameraView.from_params(f, f, size / 2, size / 2, size, size, near=0.5, far=20.0)
    z = rng.uniform(2, 6, n)
    uv = rng.uniform(-5, size + 5, (n, 2))
    means = np.stack([(uv[:, 0] - size / 2) * z / f, (uv[:, 1] - size / 2) * z / f, z], axis=1)
    scales = rng.uniform(0.02, 0.25, (n, 3)) * 64 / size
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    sh = rng.normal(0, 0.4, (n, (sh_degree + 1) ** 2, 3))
    return GaussianSet(means, rng.uniform(*opacity, n), scales, q, sh, sh_degree), cam


def smooth_scene(seed: int, n: int = 6, size: int = 32, eps: float = 1e-6):
    """A random scene whose render is smooth within ``eps`` of its parameters.

    Finite differences are meaningless across the opacity floor, the alpha cap
    or a 3-sigma box edge, so seeds are drawn until every (splat, pixel) pair
    keeps at least ``MIN_GATE_MARGIN`` away from those gates.
    """
    for k in range(1000):
        g, cam = random_scene(np.random.default_rng([seed, k]), n, size)
        g = g.astype(np.float64)
        if gate_margin(g, cam, size, size) > max(MIN_GATE_MARGIN, 100 * eps):
            return g, cam
    raise RuntimeError("no smooth scene found")


def rasterizer_reports(seed: int = 0, n: int = 6, size: int = 32, eps: float = 1e-6,
                       background=(0.2, 0.3, 0.4)) -> dict[str, GradCheckReport]:
    g, cam = smooth_scene(seed, n, size, eps)
    G = np.random.default_rng([seed, 7]).normal(size=(size, size, 3))
    grads = rasterize_backward(g, cam, size, size, G, background, dtype=np.float64)
    reports = {}
    for name, analytic in grads.blocks().items():
        shape = getattr(g, name).shape

        def f(x, name=name, shape=shape):
            h = g.copy()
            setattr(h, name, x.reshape(shape))
            return float(np.sum(rasterize(h, cam, size, size, background, dtype=np.float64).color * G))

        reports[f"rasterizer.{name}"] = grad_check(f, getattr(g, name).copy(), analytic, eps=eps, tol=RASTER_TOL)
    return reports


def numerics_reports(seed: int = 0) -> dict[str, GradCheckReport]:
    rng = np.random.default_rng(seed)
    store = WeightStore(seed=seed)
    store.add_linear("lin", 5, 4)
    store.add_conv("conv", 3, 3, 4)
    store.add_mlp("se", [6, 5, 4])
    reports = {}

    x = rng.normal(size=(3, 5))
    G = rng.normal(size=(3, 4))
    for act in ("none", "gelu", "sigmoid"):
        dx, dw, db = linear_backward(x, store, "lin", G, act)
        reports[f"linear.{act}.input"] = grad_check(
            lambda v, a=act: float(np.sum(linear(v, store, "lin", a) * G)), x, dx, tol=NUMERICS_TOL)
        w64 = store["lin.weight"].astype(np.float64)

        def f_w(v, a=act):
            s = store.copy()
            s["lin.weight"] = v
            return float(np.sum(linear(x, s, "lin", a) * G))

        reports[f"linear.{act}.weight"] = grad_check(f_w, w64, dw, tol=NUMERICS_TOL)

    img = rng.normal(size=(8, 8, 3))
    for stride in (1, 2):
        out = conv2d(img, store, "conv", stride=stride, activation="gelu")
        Gc = rng.normal(size=out.shape)
        dx, dw, db = conv2d_backward(img, store, "conv", Gc, stride=stride, activation="gelu")
        reports[f"conv2d.stride{stride}.input"] = grad_check(
            lambda v, s=stride, Gc=Gc: float(np.sum(conv2d(v, store, "conv", stride=s, activation="gelu") * Gc)),
            img, dx, tol=NUMERICS_TOL)

        def f_k(v, s=stride, Gc=Gc):
            st = store.copy()
            st["conv.weight"] = v
            return float(np.sum(conv2d(img, st, "conv", stride=s, activation="gelu") * Gc))

        reports[f"conv2d.stride{stride}.kernel"] = grad_check(f_k, store["conv.weight"].astype(np.float64), dw,
                                                              tol=NUMERICS_TOL)

    feat = rng.normal(size=(4, 4, 4))
    ctx = rng.normal(size=6)
    Gs = rng.normal(size=feat.shape)
    d_feat, d_ctx, pgrads = se_gate_backward(feat, ctx, store, "se", Gs)
    reports["se_gate.feature"] = grad_check(lambda v: float(np.sum(se_gate(v, ctx, store, "se") * Gs)), feat,
                                            d_feat, tol=NUMERICS_TOL)
    reports["se_gate.context"] = grad_check(lambda v: float(np.sum(se_gate(feat, v, store, "se") * Gs)), ctx,
                                            d_ctx, tol=NUMERICS_TOL)

    def f_se(v):
        st = store.copy()
        st["se.fc0.weight"] = v
        return float(np.sum(se_gate(feat, ctx, st, "se") * Gs))

    reports["se_gate.fc0.weight"] = grad_check(f_se, store["se.fc0.weight"].astype(np.float64),
                                               pgrads["se.fc0.weight"], tol=NUMERICS_TOL)
    return reports


def run(module: str = "all", seed: int = 0) -> dict[str, GradCheckReport]:
    reports = {}
    if module in ("numerics", "all"):
        reports.update(numerics_reports(seed))
    if module in ("rasterizer", "all"):
        reports.update(rasterizer_reports(seed))
    return reports
