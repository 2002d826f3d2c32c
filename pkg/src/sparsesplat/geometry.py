"""Pinhole cameras, plane-sweep depth candidates and epipolar feature sampling.

Pixel convention: pixel ``(u, v)`` covers ``[u, u+1) x [v, v+1)`` and its
center sits at ``(u + 0.5, v + 0.5)``. Intrinsics map camera-frame points to
these continuous coordinates. Cameras look down +z (OpenCV axes).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import bilinear_sample

BEHIND_EPS = 1e-9


class CameraError(ValueError):
    pass


@dataclass(frozen=True)
class CameraView:
    intrinsics: np.ndarray  # 3x3
    world_from_camera: np.ndarray  # 4x4 rigid
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        T = np.asarray(self.world_from_camera, dtype=np.float64)
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "world_from_camera", T)
        self.validate()

    @classmethod
    def from_params(cls, fx, fy, cx, cy, width, height, world_from_camera=None, near=0.5, far=100.0):
        K = np.array([[fx, 0, cx], [0, fy, cy], [0, 0, 1]], dtype=np.float64)
        T = np.eye(4) if world_from_camera is None else world_from_camera
        return cls(K, T, int(width), int(height), float(near), float(far))

    def validate(self, tol: float = 1e-6) -> None:
        K, T = self.intrinsics, self.world_from_camera
        if K.shape != (3, 3) or T.shape != (4, 4):
            raise CameraError(f"bad camera matrix shapes {K.shape}, {T.shape}")
        if not (np.all(np.isfinite(K)) and np.all(np.isfinite(T))):
            raise CameraError("camera matrices must be finite")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CameraError("focal lengths must be positive")
        if abs(K[1, 0]) + abs(K[2, 0]) + abs(K[2, 1]) > 0 or K[2, 2] != 1:
            raise CameraError("intrinsics must be upper triangular with K[2,2] = 1")
        R = T[:3, :3]
        if not np.allclose(R.T @ R, np.eye(3), atol=tol):
            raise CameraError("rotation block of world_from_camera is not orthonormal")
        if np.linalg.det(R) < 0:
            raise CameraError("rotation block of world_from_camera has det = -1 (reflection)")
        if not np.allclose(T[3], [0, 0, 0, 1]):
            raise CameraError("world_from_camera must have last row [0, 0, 0, 1]")
        if not (self.near > 0 and self.far >= self.near):
            raise CameraError(f"need 0 < near <= far, got near={self.near}, far={self.far}")
        if self.width <= 0 or self.height <= 0:
            raise CameraError("image size must be positive")

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.world_from_camera[:3, :3]

    @property
    def position(self) -> np.ndarray:
        return self.world_from_camera[:3, 3]

    @property
    def camera_from_world(self) -> np.ndarray:
        R = self.rotation
        out = np.eye(4)
        out[:3, :3] = R.T
        out[:3, 3] = -R.T @ self.position
        return out

    def scaled(self, factor: float) -> "CameraView":
        """Camera for an image resampled by ``factor`` (e.g. 0.25 for quarter res).

        With the half-pixel-center convention, scaling continuous pixel
        coordinates by ``factor`` maps pixel edges onto pixel edges, so
        ``fx, fy, cx, cy`` all scale linearly.
        """
        K = self.intrinsics.copy()
        K[:2] *= factor
        return CameraView(K, self.world_from_camera, round(self.width * factor), round(self.height * factor),
                          self.near, self.far)

    def with_pose(self, world_from_camera) -> "CameraView":
        return CameraView(self.intrinsics, world_from_camera, self.width, self.height, self.near, self.far)


def depth_candidates(near: float, far: float, D: int) -> np.ndarray:
    """``D`` depths spaced uniformly in inverse depth, from ``near`` to ``far``."""
    if not (near > 0 and far >= near):
        raise ValueError(f"need 0 < near <= far, got near={near}, far={far}")
    if D < 1:
        raise ValueError(f"need at least one candidate, got D={D}")
    if D == 1:
        return np.array([near], dtype=np.float64)
    t = np.arange(D, dtype=np.float64) / (D - 1)
    inv = (1.0 / near) * (1 - t) + (1.0 / far) * t
    vals = 1.0 / inv
    vals[0], vals[-1] = near, far
    return vals


def unproject(u, v, depth, cam: CameraView) -> np.ndarray:
    """World points seen at continuous pixel coordinates ``(u, v)`` and camera depth.

    Broadcasts over array inputs; returns ``[..., 3]`` in float64.
    """
    u, v, depth = np.broadcast_arrays(np.asarray(u, np.float64), np.asarray(v, np.float64),
                                      np.asarray(depth, np.float64))
    pc = np.stack([depth * (u - cam.cx) / cam.fx, depth * (v - cam.cy) / cam.fy, depth], axis=-1)
    return pc @ cam.rotation.T + cam.position


def to_camera(points, cam: CameraView) -> np.ndarray:
    return (np.asarray(points, np.float64) - cam.position) @ cam.rotation


def project(points, cam: CameraView):
    """Project world points.

    Returns ``(uv[..., 2], z[...], in_front[...])``. ``in_front`` is False
    where the camera-frame depth is at most 1e-9; the caller culls those
    (their ``uv`` is set to NaN).
    """
    pc = to_camera(points, cam)
    z = pc[..., 2]
    in_front = z > BEHIND_EPS
    safe_z = np.where(in_front, z, 1.0)
    u = cam.fx * pc[..., 0] / safe_z + cam.cx
    v = cam.fy * pc[..., 1] / safe_z + cam.cy
    uv = np.stack([u, v], axis=-1)
    uv[~in_front] = np.nan
    return uv, z, in_front


def pixel_centers(width: int, height: int):
    """Continuous coordinates of pixel centers, each ``[height, width]``."""
    v, u = np.meshgrid(np.arange(height, dtype=np.float64) + 0.5,
                       np.arange(width, dtype=np.float64) + 0.5, indexing="ij")
    return u, v


def epipolar_locations(cam_i: CameraView, cam_j: CameraView, candidates: np.ndarray):
    """Where every pixel of ``cam_i`` at every candidate depth lands in ``cam_j``.

    Both cameras describe the grid being sampled (e.g. already scaled to
    quarter resolution). Returns ``(x, y, ok)`` each ``[H, W, D]`` where
    ``x, y`` are *index* coordinates (pixel center at integers) suitable for
    :func:`~sparsesplat.numerics.bilinear_sample`, and ``ok`` is False for
    points behind ``cam_j``.
    """
    u, v = pixel_centers(cam_i.width, cam_i.height)
    d = np.asarray(candidates, np.float64)
    pts = unproject(u[..., None], v[..., None], d[None, None, :], cam_i)
    uv, _, ok = project(pts, cam_j)
    x = np.where(ok, uv[..., 0] - 0.5, -1e6)
    y = np.where(ok, uv[..., 1] - 0.5, -1e6)
    return x, y, ok


def _in_bounds(x, y, width, height, tol=1e-6):
    # valid = inside the span of cell centers, so all four bilinear corners exist
    return (x >= -tol) & (x <= width - 1 + tol) & (y >= -tol) & (y <= height - 1 + tol)


def sweep_sample(features_j: np.ndarray, cam_i: CameraView, cam_j: CameraView, candidates):
    """Plane-sweep warp of target features into the source view.

    ``features_j`` is ``[h, w, C]`` at the resolution described by ``cam_j``.
    Returns ``(samples[h, w, D, C], mask[h, w, D])``. Entries whose warped
    location is behind ``cam_j`` or outside its grid are zero with mask 0.
    """
    x, y, ok = epipolar_locations(cam_i, cam_j, candidates)
    h, w = features_j.shape[:2]
    mask = ok & _in_bounds(x, y, w, h)
    vals, _ = bilinear_sample(features_j, x, y)
    vals = np.where(mask[..., None], vals, 0).astype(features_j.dtype, copy=False)
    return vals, mask.astype(features_j.dtype)


def camera_embedding(cam: CameraView) -> np.ndarray:
    """Fixed 18-vector: normalised intrinsics, rotation, translation, near, far."""
    intr = [cam.fx / cam.width, cam.fy / cam.height, cam.cx / cam.width, cam.cy / cam.height]
    return np.concatenate([intr, cam.rotation.reshape(-1), cam.position, [cam.near, cam.far]]).astype(np.float32)


def rotation_from_quaternion(q) -> np.ndarray:
    """Rotation matrix from a (w, x, y, z) quaternion; normalises first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.stack([
        1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
    ], axis=-1)
    return R.reshape(q.shape[:-1] + (3, 3))


def look_at(eye, target, up=(0.0, -1.0, 0.0)) -> np.ndarray:
    """world_from_camera for a camera at ``eye`` looking at ``target`` (+z forward, +y down)."""
    eye = np.asarray(eye, np.float64)
    fwd = np.asarray(target, np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(-np.asarray(up, np.float64), fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    T = np.eye(4)
    T[:3, 0], T[:3, 1], T[:3, 2], T[:3, 3] = right, down, fwd, eye
    return T
