"""Self-contained synthetic scenes: textured planes and boxes made of Gaussians.

Ground truth is a :class:`GaussianSet`; views are rendered with the
brute-force rasterizer so no dataset download is needed. Each view also gets
a relative depth prior ``depth ** 0.7`` (monotone, scale-free) as PFM.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..encoder import write_pfm
from ..gaussians import GaussianSet, write_ply
from ..geometry import CameraView, depth_candidates, look_at, rotation_from_quaternion
from ..imageio import write_png
from ..rasterizer import rasterize_reference
from ..sh import num_coeffs, rgb_to_dc
from .scene import SceneBundle, View, save_scene

PRESETS = ("plane", "box")
PRIOR_EXPONENT = 0.7


def smooth_texture(u, v, seed: int, n_waves: int = 5, max_freq: float = 4.0) -> np.ndarray:
    """Band-limited RGB texture in [0.1, 0.9] at surface coordinates ``(u, v)`` in [0, 1]."""
    rng = np.random.default_rng(seed)
    u, v = np.asarray(u, np.float64), np.asarray(v, np.float64)
    out = np.zeros(u.shape + (3,))
    for c in range(3):
        for _ in range(n_waves):
            freq = rng.uniform(0.5, max_freq, 2) * rng.choice([-1, 1], 2)
            phase = rng.uniform(0, 2 * np.pi)
            out[..., c] += rng.uniform(0.3, 1.0) * np.sin(2 * np.pi * (freq[0] * u + freq[1] * v) + phase)
    out /= np.abs(out).max() + 1e-12
    return 0.5 + 0.4 * out


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    w = np.sqrt(max(1.0 + np.trace(R), 1e-12)) / 2
    q = np.array([w, (R[2, 1] - R[1, 2]) / (4 * w), (R[0, 2] - R[2, 0]) / (4 * w), (R[1, 0] - R[0, 1]) / (4 * w)])
    return q / np.linalg.norm(q)


def textured_quad(center, axis_u, axis_v, size_u: float, size_v: float, spacing: float, seed: int,
                  opacity: float = 0.95, sh_degree: int = 1) -> GaussianSet:
    """Flat Gaussians on a grid over a rectangle spanned by unit axes ``axis_u`` and ``axis_v``."""
    axis_u = np.asarray(axis_u, np.float64)
    axis_v = np.asarray(axis_v, np.float64)
    normal = np.cross(axis_u, axis_v)
    nu = max(int(round(size_u / spacing)), 1)
    nv = max(int(round(size_v / spacing)), 1)
    su = (np.arange(nu) + 0.5) / nu
    sv = (np.arange(nv) + 0.5) / nv
    gu, gv = np.meshgrid(su, sv, indexing="ij")
    gu, gv = gu.reshape(-1), gv.reshape(-1)
    means = (np.asarray(center, np.float64) + np.outer(gu - 0.5, axis_u) * size_u
             + np.outer(gv - 0.5, axis_v) * size_v)
    R = np.stack([axis_u, axis_v, normal], axis=1)
    q = np.tile(_quat_from_matrix(R), (len(means), 1))
    step = max(size_u / nu, size_v / nv)
    scales = np.tile([0.8 * step, 0.8 * step, 0.02 * step], (len(means), 1))
    sh = np.zeros((len(means), num_coeffs(sh_degree), 3))
    sh[:, 0, :] = rgb_to_dc(smooth_texture(gu, gv, seed))
    return GaussianSet(means, np.full(len(means), opacity), scales, q, sh, sh_degree)


@dataclass
class SynthScene:
    gaussians: GaussianSet
    cameras: list[CameraView]
    context: list[int]
    targets: list[int]


def _cameras(eyes, target, size: int, near: float, far: float) -> list[CameraView]:
    f = float(size)
    return [CameraView.from_params(f, f, size / 2, size / 2, size, size, look_at(e, target), near, far)
            for e in eyes]


def make_plane(size: int = 64, seed: int = 0, depth: float = 4.0, sh_degree: int = 1) -> SynthScene:
    """One textured plane facing three cameras spaced along x."""
    g = textured_quad((0, 0, depth), (1, 0, 0), (0, 1, 0), 2.0 * depth, 1.6 * depth, depth / 24, seed,
                      sh_degree=sh_degree)
    eyes = [(-0.4, 0, 0), (0, 0, 0), (0.4, 0, 0)]
    cams = _cameras(eyes, (0, 0, depth), size, 1.0, 10.0)
    return SynthScene(g, cams, [0, 2], [1])


def make_box(size: int = 64, seed: int = 0, sh_degree: int = 1) -> SynthScene:
    """A textured cube, rotated about the vertical axis, in front of a textured back wall."""
    parts = [textured_quad((0, 0, 7), (1, 0, 0), (0, 1, 0), 12, 10, 0.25, seed, sh_degree=sh_degree)]
    half = 0.7
    c = np.array([0.0, 0.2, 4.0])
    yaw = np.deg2rad(35)
    Ry = rotation_from_quaternion(np.array([np.cos(yaw / 2), 0, np.sin(yaw / 2), 0]))
    faces = [((0, 0, -1), (1, 0, 0), (0, 1, 0)), ((-1, 0, 0), (0, 0, -1), (0, 1, 0)),
             ((1, 0, 0), (0, 0, 1), (0, 1, 0)), ((0, -1, 0), (1, 0, 0), (0, 0, 1))]
    for k, (n, a, b) in enumerate(faces):
        n, a, b = (Ry @ np.asarray(x, np.float64) for x in (n, a, b))
        parts.append(textured_quad(c + half * n, a, b, 2 * half, 2 * half, 0.07, seed + 1 + k,
                                   opacity=0.98, sh_degree=sh_degree))
    eyes = [(-0.6, 0, 0), (0, 0, 0), (0.6, 0, 0)]
    cams = _cameras(eyes, (0, 0.2, 4.5), size, 1.0, 10.0)
    return SynthScene(GaussianSet.concat(parts), cams, [0, 2], [1])


def make_preset(name: str, size: int = 64, seed: int = 0) -> SynthScene:
    if name == "plane":
        return make_plane(size, seed)
    if name == "box":
        return make_box(size, seed)
    raise ValueError(f"unknown preset {name!r}; choose from {PRESETS}")


def render_views(scene: SynthScene) -> list:
    return [rasterize_reference(scene.gaussians, cam, cam.width, cam.height, dtype=np.float64)
            for cam in scene.cameras]


def relative_prior(render) -> np.ndarray:
    """``depth ** 0.7`` with uncovered pixels set to the largest covered value."""
    d = np.where(render.alpha > 1e-3, render.depth, 0.0)
    fill = d.max() if d.max() > 0 else 1.0
    d = np.where(render.alpha > 1e-3, d, fill)
    return (d ** PRIOR_EXPONENT).astype(np.float32)


def write_synthetic(name: str, out_dir, size: int = 64, seed: int = 0) -> Path:
    """Render a preset to ``out_dir`` (PNGs, PFM priors, ``gt.ply``, ``scene.json``). Returns the scene path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_preset(name, size, seed)
    views = []
    for k, (cam, r) in enumerate(zip(scene.cameras, render_views(scene))):
        img_path = out / f"view{k}.png"
        prior_path = out / f"view{k}_prior.pfm"
        write_png(img_path, r.color)
        write_pfm(prior_path, relative_prior(r))
        views.append(View(img_path, cam, prior_path))
    write_ply(scene.gaussians, out / "gt.ply")
    path = out / "scene.json"
    save_scene(SceneBundle(views, scene.context, scene.targets, out), path)
    return path


# ---------------------------------------------------------------------------
# Feature-level matching case
# ---------------------------------------------------------------------------


@dataclass
class MatchingCase:
    f_i: np.ndarray  # [s, s, C] source features
    f_j: np.ndarray  # [s, s, C] target features
    cam_i: CameraView  # at grid resolution
    cam_j: CameraView
    candidates: np.ndarray
    k_star: int
    interior: np.ndarray  # [s, s] bool, true match lands inside the target grid


def plane_matching_case(size: int = 16, D: int = 32, k_star: int = 12, channels: int = 32,
                        disparity: int = 4, seed: int = 0, margin: int = 0) -> MatchingCase:
    """Two views of a fronto-parallel plane at exactly ``candidates[k_star]``.

    The plane carries an i.i.d. field of unit feature vectors, one per grid
    cell, seen by a rectified pair whose baseline makes the plane's disparity
    exactly ``disparity`` cells. The correct candidate therefore samples the
    identical unit vector, and any other candidate samples a different vector
    or a bilinear blend of two, whose dot product with the source is smaller.
    """
    rng = np.random.default_rng(seed)
    cand = depth_candidates(1.0, 10.0, D)
    z = cand[k_star]
    f = float(size)
    baseline = disparity * z / f
    cam_i = CameraView.from_params(f, f, size / 2, size / 2, size, size, None, 1.0, 10.0)
    T = np.eye(4)
    T[0, 3] = baseline
    cam_j = CameraView.from_params(f, f, size / 2, size / 2, size, size, T, 1.0, 10.0)
    lattice = rng.normal(size=(size, size + disparity, channels))
    lattice /= np.linalg.norm(lattice, axis=-1, keepdims=True)
    lattice = lattice.astype(np.float32)
    # column c of the lattice is seen at x = c - disparity in view j and at x = c in view i
    f_j = lattice[:, disparity:]
    f_i = lattice[:, :size]
    xs = np.arange(size)
    interior = np.zeros((size, size), bool)
    ok = (xs - disparity >= margin) & (xs - disparity <= size - 1 - margin)
    interior[margin:size - margin, :] = ok[None, :]
    return MatchingCase(f_i.copy(), f_j.copy(), cam_i, cam_j, cand, k_star, interior)
