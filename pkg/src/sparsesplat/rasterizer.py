"""Tile-based CPU splatting with analytic gradients and a brute-force reference.

Both render paths share :func:`_composite` and the constants below, so for any
pixel they see the same ordered splat list (the tiled path merely drops splats
whose 3-sigma box cannot reach the tile, which the per-pixel box test would
reject anyway) and produce the same compositing result.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianSet
from .geometry import CameraView, rotation_from_quaternion
from .numerics import NumericsError
from .sh import degree_from_coeffs, sh_basis

LOWPASS = 0.3
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
SIGMA_EXTENT = 3.0
NEAR_CULL = 0.05
TILE = 16

_REF_CHUNK = 1 << 22  # splat x pixel elements per block in the reference path


@dataclass
class Splats:
    """Projected, non-culled Gaussians (struct of arrays)."""

    index: np.ndarray  # [n] source index into the GaussianSet
    mean2d: np.ndarray  # [n, 2]
    cov2d: np.ndarray  # [n, 2, 2], low-pass floor included
    conic: np.ndarray  # [n, 3] entries (a, b, c) of the inverse covariance
    radius: np.ndarray  # [n, 2] half extents of the 3-sigma box
    depth: np.ndarray  # [n]
    color: np.ndarray  # [n, 3]
    opacity: np.ndarray  # [n]

    def __len__(self):
        return len(self.index)

    def take(self, order):
        return Splats(*(getattr(self, f)[order] for f in self.__dataclass_fields__))


@dataclass
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    index: int


@dataclass
class RenderOutput:
    color: np.ndarray  # [H, W, 3]
    alpha: np.ndarray  # [H, W]
    depth: np.ndarray  # [H, W], alpha-normalised expected depth (0 where empty)
    contributors: np.ndarray  # [H, W] int


@dataclass
class GaussianGrads:
    means: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    sh: np.ndarray

    def blocks(self) -> dict[str, np.ndarray]:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


# ---------------------------------------------------------------------------
# Projection
# ---------------------------------------------------------------------------


def _check_finite(gaussians: GaussianSet) -> None:
    for name in ("means", "opacities", "scales", "rotations", "sh"):
        arr = getattr(gaussians, name)
        bad = ~np.isfinite(arr.reshape(len(arr), int(np.prod(arr.shape[1:])))).all(axis=1)
        if bad.any():
            raise NumericsError(f"gaussian {int(np.argmax(bad))} has a non-finite {name} value")


def _camera_terms(cam: CameraView, dtype):
    R_cw = cam.rotation.T.astype(dtype)  # world -> camera
    pos = cam.position.astype(dtype)
    return R_cw, pos, dtype.type(cam.fx), dtype.type(cam.fy), dtype.type(cam.cx), dtype.type(cam.cy)


def _project_terms(g: GaussianSet, cam: CameraView, dtype):
    """Every intermediate of the projection, for the forward and backward passes."""
    R_cw, pos, fx, fy, cx, cy = _camera_terms(cam, dtype)
    mu = g.means.astype(dtype)
    t = (mu - pos) @ R_cw.T
    keep = t[:, 2] > dtype.type(NEAR_CULL * cam.near)
    idx = np.nonzero(keep)[0]
    t = t[idx]
    mu = mu[idx]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    n = len(idx)

    J = np.zeros((n, 2, 3), dtype)
    J[:, 0, 0] = fx / tz
    J[:, 0, 2] = -fx * tx / (tz * tz)
    J[:, 1, 1] = fy / tz
    J[:, 1, 2] = -fy * ty / (tz * tz)

    q = g.rotations[idx].astype(dtype)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    if np.any(qn == 0):
        raise NumericsError(f"gaussian {int(idx[np.argmin(qn[:, 0])])} has a zero-norm rotation")
    qhat = q / qn
    Rg = rotation_from_quaternion(qhat).astype(dtype)
    s = g.scales[idx].astype(dtype)
    sigma = (Rg * (s * s)[:, None, :]) @ np.swapaxes(Rg, 1, 2)
    M = R_cw @ sigma @ R_cw.T
    cov = J @ M @ np.swapaxes(J, 1, 2)
    cov[:, 0, 0] += dtype.type(LOWPASS)
    cov[:, 1, 1] += dtype.type(LOWPASS)
    A, B, C = cov[:, 0, 0], cov[:, 0, 1], cov[:, 1, 1]
    det = A * C - B * B
    conic = np.stack([C / det, -B / det, A / det], axis=1)
    radius = dtype.type(SIGMA_EXTENT) * np.sqrt(np.stack([A, C], axis=1))
    mean2d = np.stack([fx * tx / tz + cx, fy * ty / tz + cy], axis=1)

    v = mu - pos
    vnorm = np.linalg.norm(v, axis=1, keepdims=True)
    dirs = v / vnorm
    sh = g.sh[idx].astype(dtype)
    degree = degree_from_coeffs(sh.shape[1])
    basis, dbasis = sh_basis(dirs, degree, with_grad=True)
    basis = basis.astype(dtype)
    raw_color = np.einsum("nk,nkc->nc", basis, sh) + dtype.type(0.5)
    color = np.clip(raw_color, 0, 1)

    return dict(idx=idx, t=t, J=J, qhat=qhat, qn=qn, R=Rg, s=s, M=M, cov=cov, conic=conic, radius=radius,
                mean2d=mean2d, dirs=dirs, vnorm=vnorm, basis=basis, dbasis=dbasis.astype(dtype), sh=sh,
                raw_color=raw_color, color=color, R_cw=R_cw, fx=fx, fy=fy,
                opacity=g.opacities[idx].astype(dtype), depth=tz)


def project_all(gaussians: GaussianSet, cam: CameraView, dtype=np.float32) -> Splats:
    dtype = np.dtype(dtype)
    _check_finite(gaussians)
    p = _project_terms(gaussians, cam, dtype)
    return Splats(p["idx"], p["mean2d"], p["cov"], p["conic"], p["radius"], p["depth"], p["color"], p["opacity"])


def project_gaussian(gaussian, cam: CameraView, dtype=np.float64) -> Splat2D | None:
    """Project one Gaussian; ``None`` when it is culled (too close or behind)."""
    g = GaussianSet(np.asarray(gaussian.center)[None], np.array([gaussian.opacity]),
                    np.asarray(gaussian.scale)[None], np.asarray(gaussian.rotation)[None],
                    np.asarray(gaussian.sh)[None])
    sp = project_all(g, cam, dtype)
    if len(sp) == 0:
        return None
    return Splat2D(sp.mean2d[0], sp.cov2d[0], float(sp.depth[0]), sp.color[0], float(sp.opacity[0]), 0)


def depth_order(splats: Splats) -> np.ndarray:
    """Front-to-back order; ties broken by source index."""
    return np.lexsort((splats.index, splats.depth))


# ---------------------------------------------------------------------------
# Compositing kernel
# ---------------------------------------------------------------------------


def _alpha(sp: Splats, px, py):
    """Per (splat, pixel) opacity terms. Shapes ``[n, m]``."""
    dt = sp.mean2d.dtype
    dx = px[None, :] - sp.mean2d[:, 0:1]
    dy = py[None, :] - sp.mean2d[:, 1:2]
    inbox = (np.abs(dx) <= sp.radius[:, 0:1]) & (np.abs(dy) <= sp.radius[:, 1:2])
    a, b, c = sp.conic[:, 0:1], sp.conic[:, 1:2], sp.conic[:, 2:3]
    power = dt.type(-0.5) * (a * dx * dx + c * dy * dy) - b * dx * dy
    gauss = np.exp(np.minimum(power, 0))
    raw = sp.opacity[:, None] * gauss
    alpha = np.minimum(dt.type(ALPHA_MAX), raw)
    keep = inbox & (alpha >= dt.type(ALPHA_MIN))
    alpha = np.where(keep, alpha, 0)
    trans = np.cumprod(1 - alpha, axis=0)
    t_before = np.concatenate([np.ones((1, alpha.shape[1]), dt), trans[:-1]], axis=0)
    contrib = keep & (t_before >= dt.type(T_MIN))
    return dict(dx=dx, dy=dy, gauss=gauss, raw=raw, alpha=alpha, t_before=t_before, contrib=contrib)


def _composite(sp: Splats, px, py, background):
    """Front-to-back compositing of ordered splats over a set of pixels."""
    dt = sp.mean2d.dtype
    m = len(px)
    if len(sp) == 0:
        return (np.broadcast_to(background, (m, 3)).copy(), np.zeros(m, dt), np.zeros(m, dt),
                np.zeros(m, np.int32))
    k = _alpha(sp, px, py)
    w = np.where(k["contrib"], k["t_before"] * k["alpha"], 0)
    t_final = np.where(k["contrib"], 1 - k["alpha"], 1).prod(axis=0)
    color = w.T @ sp.color + t_final[:, None] * background[None, :]
    alpha = 1 - t_final
    wsum = w.sum(axis=0)
    depth = np.where(wsum > 0, (w.T @ sp.depth) / np.where(wsum > 0, wsum, 1), 0)
    return color, alpha, depth.astype(dt), k["contrib"].sum(axis=0).astype(np.int32)


def _output(h, w, color, alpha, depth, count) -> RenderOutput:
    return RenderOutput(color.reshape(h, w, 3), alpha.reshape(h, w), depth.reshape(h, w), count.reshape(h, w))


def _pixel_grid(width, height, dtype):
    ys, xs = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    return (xs.reshape(-1) + 0.5).astype(dtype), (ys.reshape(-1) + 0.5).astype(dtype)


def rasterize_reference(gaussians: GaussianSet, cam: CameraView, width: int, height: int, background=(0, 0, 0),
                        dtype=np.float32) -> RenderOutput:
    """Brute-force renderer: every pixel visits every splat in global depth order."""
    dtype = np.dtype(dtype)
    bg = np.asarray(background, dtype)
    sp = project_all(gaussians, cam, dtype)
    sp = sp.take(depth_order(sp))
    px, py = _pixel_grid(width, height, dtype)
    n = max(len(sp), 1)
    step = max(width, (_REF_CHUNK // n) // width * width)
    parts = [_composite(sp, px[i:i + step], py[i:i + step], bg) for i in range(0, len(px), step)]
    return _output(height, width, *(np.concatenate(p) for p in zip(*parts)))


# ---------------------------------------------------------------------------
# Tiled path
# ---------------------------------------------------------------------------


@dataclass
class TileBins:
    tiles_x: int
    tiles_y: int
    starts: np.ndarray  # [n_tiles + 1] offsets into ranks
    ranks: np.ndarray  # positions in the depth-sorted splat list


def bin_splats(sp: Splats, width: int, height: int, tile: int = TILE) -> TileBins:
    """Assign depth-sorted splats to every tile their 3-sigma box touches.

    The pixel range is widened by one pixel on each side so rounding can only
    add candidates; the per-pixel box test makes the final decision.
    """
    tx_n = -(-width // tile)
    ty_n = -(-height // tile)
    if len(sp) == 0:
        return TileBins(tx_n, ty_n, np.zeros(tx_n * ty_n + 1, np.int64), np.zeros(0, np.int64))
    lo = np.floor(sp.mean2d.astype(np.float64) - sp.radius - 0.5) - 1
    hi = np.ceil(sp.mean2d.astype(np.float64) + sp.radius - 0.5) + 1
    x0 = np.clip(lo[:, 0], 0, width - 1)
    x1 = np.clip(hi[:, 0], 0, width - 1)
    y0 = np.clip(lo[:, 1], 0, height - 1)
    y1 = np.clip(hi[:, 1], 0, height - 1)
    visible = (hi[:, 0] >= 0) & (lo[:, 0] <= width - 1) & (hi[:, 1] >= 0) & (lo[:, 1] <= height - 1)
    tx0 = (x0 // tile).astype(np.int64)
    tx1 = (x1 // tile).astype(np.int64)
    ty0 = (y0 // tile).astype(np.int64)
    ty1 = (y1 // tile).astype(np.int64)
    nx = np.where(visible, tx1 - tx0 + 1, 0)
    ny = np.where(visible, ty1 - ty0 + 1, 0)
    counts = nx * ny
    rank = np.repeat(np.arange(len(sp)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    rnx = np.repeat(nx, counts)
    tx = np.repeat(tx0, counts) + local % np.maximum(rnx, 1)
    ty = np.repeat(ty0, counts) + local // np.maximum(rnx, 1)
    tile_id = ty * tx_n + tx
    order = np.lexsort((rank, tile_id))
    tile_id = tile_id[order]
    rank = rank[order]
    starts = np.searchsorted(tile_id, np.arange(tx_n * ty_n + 1))
    return TileBins(tx_n, ty_n, starts, rank)


def _tile_pixels(t, bins: TileBins, width, height, tile, dtype):
    ty, tx = divmod(t, bins.tiles_x)
    xs = np.arange(tx * tile, min((tx + 1) * tile, width))
    ys = np.arange(ty * tile, min((ty + 1) * tile, height))
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    flat = (yy * width + xx).reshape(-1)
    return flat, (xx.reshape(-1) + 0.5).astype(dtype), (yy.reshape(-1) + 0.5).astype(dtype)


def _map_tiles(fn, n_tiles, threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(n_tiles)))
    return [fn(t) for t in range(n_tiles)]


def rasterize(gaussians: GaussianSet, cam: CameraView, width: int, height: int, background=(0, 0, 0),
              dtype=np.float32, threads: int = 1, tile: int = TILE) -> RenderOutput:
    """Render with per-tile splat lists. Output is independent of ``threads``."""
    dtype = np.dtype(dtype)
    bg = np.asarray(background, dtype)
    sp = project_all(gaussians, cam, dtype)
    sp = sp.take(depth_order(sp))
    bins = bin_splats(sp, width, height, tile)

    color = np.empty((height * width, 3), dtype)
    alpha = np.empty(height * width, dtype)
    depth = np.empty(height * width, dtype)
    count = np.empty(height * width, np.int32)

    def run(t):
        flat, px, py = _tile_pixels(t, bins, width, height, tile, dtype)
        sub = sp.take(bins.ranks[bins.starts[t]:bins.starts[t + 1]])
        return flat, _composite(sub, px, py, bg)

    for flat, (c, a, d, k) in _map_tiles(run, bins.tiles_x * bins.tiles_y, threads):
        color[flat], alpha[flat], depth[flat], count[flat] = c, a, d, k
    return _output(height, width, color, alpha, depth, count)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def _tile_backward(sp: Splats, px, py, background, grad_color):
    """Gradients w.r.t. per-splat 2D quantities for one block of pixels."""
    k = _alpha(sp, px, py)
    contrib = k["contrib"]
    alpha = k["alpha"]
    w = np.where(contrib, k["t_before"] * alpha, 0)
    t_final = np.where(contrib, 1 - alpha, 1).prod(axis=0)

    per = w[:, :, None] * sp.color[:, None, :]  # [n, m, 3]
    suffix = np.cumsum(per[::-1], axis=0)[::-1] - per + (t_final[:, None] * background[None, :])[None]
    g_alpha = np.einsum("mc,nmc->nm", grad_color, k["t_before"][:, :, None] * sp.color[:, None, :]
                        - suffix / (1 - alpha)[:, :, None])
    g_alpha = np.where(contrib, g_alpha, 0)
    g_color = w @ grad_color

    live = contrib & (k["raw"] < ALPHA_MAX)
    g_raw = np.where(live, g_alpha, 0)
    g_opacity = (g_raw * k["gauss"]).sum(axis=1)
    g_power = g_raw * k["raw"]
    dx, dy = k["dx"], k["dy"]
    a, b, c = sp.conic[:, 0:1], sp.conic[:, 1:2], sp.conic[:, 2:3]
    g_conic = np.stack([(-0.5 * g_power * dx * dx).sum(1), (-g_power * dx * dy).sum(1),
                        (-0.5 * g_power * dy * dy).sum(1)], axis=1)
    g_mean = np.stack([(g_power * (a * dx + b * dy)).sum(1), (g_power * (b * dx + c * dy)).sum(1)], axis=1)
    return g_mean, g_conic, g_opacity, g_color


def _quat_rotation_grad(q, G):
    """Contract ``dL/dR`` with ``dR/dq`` for unit quaternions ``q = (w, x, y, z)``."""
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = lambda i, j: G[:, i, j]  # noqa: E731
    dw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1))
    dx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0)
              + w * g(2, 1) - 2 * x * g(2, 2))
    dy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0)
              + z * g(2, 1) - 2 * y * g(2, 2))
    dz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) + y * g(1, 2)
              + x * g(2, 0) + y * g(2, 1))
    return np.stack([dw, dx, dy, dz], axis=1)


def rasterize_backward(gaussians: GaussianSet, cam: CameraView, width: int, height: int, grad_color,
                       background=(0, 0, 0), dtype=np.float32, threads: int = 1,
                       tile: int = TILE) -> GaussianGrads:
    """Analytic gradient of ``sum(grad_color * render.color)`` w.r.t. Gaussian parameters.

    Recomputes the forward state per tile. Splats removed by the opacity
    floor, the 0.99 cap or the transmittance cutoff receive no gradient
    through the gated term, as do colour channels clamped by the SH offset.
    Rotation gradients are w.r.t. the stored (possibly unnormalised)
    quaternion components.
    """
    dtype = np.dtype(dtype)
    bg = np.asarray(background, dtype)
    grad_color = np.asarray(grad_color, dtype).reshape(height * width, 3)
    _check_finite(gaussians)
    p = _project_terms(gaussians, cam, dtype)
    sp = Splats(p["idx"], p["mean2d"], p["cov"], p["conic"], p["radius"], p["depth"], p["color"], p["opacity"])
    order = depth_order(sp)
    sp_sorted = sp.take(order)
    bins = bin_splats(sp_sorted, width, height, tile)
    n = len(sp)

    def run(t):
        flat, px, py = _tile_pixels(t, bins, width, height, tile, dtype)
        ranks = bins.ranks[bins.starts[t]:bins.starts[t + 1]]
        if len(ranks) == 0:
            return ranks, None
        return ranks, _tile_backward(sp_sorted.take(ranks), px, py, bg, grad_color[flat])

    g_mean = np.zeros((n, 2), dtype)
    g_conic = np.zeros((n, 3), dtype)
    g_op = np.zeros(n, dtype)
    g_col = np.zeros((n, 3), dtype)
    # merge in fixed tile order so the sums do not depend on thread scheduling
    for ranks, res in _map_tiles(run, bins.tiles_x * bins.tiles_y, threads):
        if res is None:
            continue
        dst = order[ranks]
        np.add.at(g_mean, dst, res[0])
        np.add.at(g_conic, dst, res[1])
        np.add.at(g_op, dst, res[2])
        np.add.at(g_col, dst, res[3])
    return _chain_to_parameters(gaussians, p, g_mean, g_conic, g_op, g_col, dtype)


def _chain_to_parameters(gaussians, p, g_mean, g_conic, g_op, g_col, dtype) -> GaussianGrads:
    m = len(gaussians)
    idx = p["idx"]
    out = GaussianGrads(np.zeros((m, 3), dtype), np.zeros((m, 3), dtype), np.zeros((m, 4), dtype),
                        np.zeros(m, dtype), np.zeros(gaussians.sh.shape, dtype))
    if len(idx) == 0:
        return out

    # conic -> 2D covariance
    a, b, c = p["conic"][:, 0], p["conic"][:, 1], p["conic"][:, 2]
    Q = np.stack([np.stack([a, b], 1), np.stack([b, c], 1)], 1)
    GQ = np.stack([np.stack([g_conic[:, 0], 0.5 * g_conic[:, 1]], 1),
                   np.stack([0.5 * g_conic[:, 1], g_conic[:, 2]], 1)], 1)
    G_cov = -Q @ GQ @ Q

    J, M = p["J"], p["M"]
    Jt = np.swapaxes(J, 1, 2)
    G_M = Jt @ G_cov @ J
    G_J = 2 * G_cov @ J @ M
    R_cw = p["R_cw"]
    G_sigma = R_cw.T @ G_M @ R_cw

    R, s = p["R"], p["s"]
    # d/ds_k of sum_k s_k^2 r_k r_k^T  with r_k the k-th column of R
    out.scales[idx] = 2 * s * np.einsum("nik,nij,njk->nk", R, G_sigma, R)
    G_R = 2 * G_sigma @ R * (s * s)[:, None, :]
    g_qhat = _quat_rotation_grad(p["qhat"], G_R)
    qhat, qn = p["qhat"], p["qn"]
    out.rotations[idx] = (g_qhat - qhat * np.sum(qhat * g_qhat, axis=1, keepdims=True)) / qn

    t = p["t"]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
    fx, fy = p["fx"], p["fy"]
    g_t = np.zeros_like(t)
    g_t[:, 0] = g_mean[:, 0] * fx / tz - G_J[:, 0, 2] * fx / (tz * tz)
    g_t[:, 1] = g_mean[:, 1] * fy / tz - G_J[:, 1, 2] * fy / (tz * tz)
    g_t[:, 2] = (-g_mean[:, 0] * fx * tx / (tz * tz) - g_mean[:, 1] * fy * ty / (tz * tz)
                 - G_J[:, 0, 0] * fx / (tz * tz) + G_J[:, 0, 2] * 2 * fx * tx / tz**3
                 - G_J[:, 1, 1] * fy / (tz * tz) + G_J[:, 1, 2] * 2 * fy * ty / tz**3)
    g_mu = g_t @ R_cw

    raw = p["raw_color"]
    g_raw = np.where((raw > 0) & (raw < 1), g_col, 0)
    out.sh[idx] = p["basis"][:, :, None] * g_raw[:, None, :]
    g_dir = np.einsum("nkd,nkc,nc->nd", p["dbasis"], p["sh"], g_raw)
    d = p["dirs"]
    g_mu += (g_dir - d * np.sum(d * g_dir, axis=1, keepdims=True)) / p["vnorm"]

    out.means[idx] = g_mu
    out.opacities[idx] = g_op
    return out


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def gate_margin(gaussians: GaussianSet, cam: CameraView, width: int, height: int, dtype=np.float64) -> float:
    """Smallest relative distance of any (splat, pixel) pair to a non-smooth gate.

    Finite-difference checks are only meaningful when this is comfortably
    larger than the perturbation size.
    """
    dtype = np.dtype(dtype)
    p = _project_terms(gaussians, cam, dtype)
    sp = Splats(p["idx"], p["mean2d"], p["cov"], p["conic"], p["radius"], p["depth"], p["color"], p["opacity"])
    if len(sp) == 0:
        return np.inf
    sp = sp.take(depth_order(sp))
    px, py = _pixel_grid(width, height, dtype)
    k = _alpha(sp, px, py)
    margins = [np.inf]
    box = np.minimum(sp.radius[:, 0:1] - np.abs(k["dx"]), sp.radius[:, 1:2] - np.abs(k["dy"]))
    # only box edges where the Gaussian is still above the opacity floor matter
    relevant = k["raw"] >= ALPHA_MIN * 0.5
    if relevant.any():
        margins.append(np.min(np.abs(box[relevant])))
    margins.append(np.min(np.abs(k["raw"] - ALPHA_MIN)))
    margins.append(np.min(np.abs(k["raw"] - ALPHA_MAX)))
    tb = k["t_before"][k["alpha"] > 0]
    if tb.size:
        margins.append(np.min(np.abs(np.log(tb) - np.log(T_MIN))))
    raw = p["raw_color"]
    margins.append(np.min(np.minimum(np.abs(raw), np.abs(raw - 1))))
    return float(min(margins))
