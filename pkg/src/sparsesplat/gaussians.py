"""3D Gaussian primitives: covariance construction, per-pixel prediction and PLY IO."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import CameraView, pixel_centers, rotation_from_quaternion, unproject
from .matching import DepthDistribution
from .numerics import NumericsError, ensure_finite, linear, sigmoid, softplus, upsample_bilinear
from .sh import degree_from_coeffs, num_coeffs, sh_evaluate  # noqa: F401  (re-exported)
from .weights import WeightStore

OPACITY_EPS = 1e-6


@dataclass
class Gaussian:
    center: np.ndarray
    opacity: float
    scale: np.ndarray
    rotation: np.ndarray  # (w, x, y, z)
    sh: np.ndarray  # [K, 3]


@dataclass
class GaussianSet:
    """Struct-of-arrays container for ``M`` Gaussians.

    ``sh`` is ``[M, (deg+1)^2, 3]``; rotations are (w, x, y, z) quaternions.
    """

    means: np.ndarray
    opacities: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    sh: np.ndarray
    sh_degree: int = field(default=-1)

    def __post_init__(self):
        m = len(self.means)
        self.means = np.asarray(self.means).reshape(m, 3)
        self.opacities = np.asarray(self.opacities).reshape(m)
        self.scales = np.asarray(self.scales).reshape(m, 3)
        self.rotations = np.asarray(self.rotations).reshape(m, 4)
        self.sh = np.asarray(self.sh)
        if self.sh.ndim == 2:
            self.sh = self.sh.reshape(m, -1, 3)
        if self.sh_degree < 0:
            self.sh_degree = degree_from_coeffs(self.sh.shape[1])
        if self.sh.shape != (m, num_coeffs(self.sh_degree), 3):
            raise NumericsError(f"sh has shape {self.sh.shape}, expected {(m, num_coeffs(self.sh_degree), 3)}")

    def __len__(self) -> int:
        return len(self.means)

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.means[i], float(self.opacities[i]), self.scales[i], self.rotations[i], self.sh[i])

    @classmethod
    def empty(cls, sh_degree: int = 1, dtype=np.float32) -> "GaussianSet":
        k = num_coeffs(sh_degree)
        return cls(np.zeros((0, 3), dtype), np.zeros(0, dtype), np.zeros((0, 3), dtype), np.zeros((0, 4), dtype),
                   np.zeros((0, k, 3), dtype), sh_degree)

    @classmethod
    def concat(cls, sets: list["GaussianSet"]) -> "GaussianSet":
        return cls(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                     ("means", "opacities", "scales", "rotations", "sh")), sets[0].sh_degree)

    def astype(self, dtype) -> "GaussianSet":
        return GaussianSet(self.means.astype(dtype), self.opacities.astype(dtype), self.scales.astype(dtype),
                           self.rotations.astype(dtype), self.sh.astype(dtype), self.sh_degree)

    def copy(self) -> "GaussianSet":
        return self.astype(self.means.dtype)

    def validate(self, tol: float = 1e-6) -> None:
        """Raise if any member breaks the Gaussian invariants."""
        for name in ("means", "opacities", "scales", "rotations", "sh"):
            ensure_finite(getattr(self, name), f"gaussian {name}")
        if len(self) == 0:
            return
        if not (np.all(self.opacities > 0) and np.all(self.opacities < 1)):
            raise NumericsError("opacities must lie in (0, 1)")
        if not np.all(self.scales > 0):
            raise NumericsError("scales must be positive")
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1)
        if np.max(np.abs(norms - 1)) > tol:
            raise NumericsError("rotations must be unit quaternions")


def covariance(scale, quaternion) -> np.ndarray:
    """``R diag(s^2) R^T`` for (w, x, y, z) quaternions; broadcasts over leading axes."""
    q = np.asarray(quaternion, dtype=np.float64)
    if np.any(np.linalg.norm(q, axis=-1) == 0):
        raise NumericsError("zero-norm quaternion")
    R = rotation_from_quaternion(q)
    s2 = np.asarray(scale, dtype=np.float64) ** 2
    return (R * s2[..., None, :]) @ np.swapaxes(R, -1, -2)


# ---------------------------------------------------------------------------
# Prediction heads
# ---------------------------------------------------------------------------

CONF_FEATURES = 2  # max probability, normalised entropy


def register_heads(store: WeightStore, channels: int, hidden: int, sh_degree: int, prefix: str = "gaussian") -> None:
    n_in = channels + 3 + CONF_FEATURES
    store.add_linear(f"{prefix}.trunk", n_in, hidden)
    store.add_linear(f"{prefix}.opacity", hidden, 1)
    store.add_linear(f"{prefix}.scale", hidden, 3)
    store.add_linear(f"{prefix}.rotation", hidden, 4)
    store.add_linear(f"{prefix}.sh", hidden, 3 * num_coeffs(sh_degree))


def confidence_stats(dist: DepthDistribution) -> np.ndarray:
    """Per-pixel ``[max probability, entropy / log D]``."""
    p = dist.probabilities()
    D = p.shape[-1]
    ent = -np.sum(p * np.log(np.maximum(p, 1e-30)), axis=-1)
    ent = ent / np.log(D) if D > 1 else np.zeros_like(ent)
    return np.stack([p.max(axis=-1), ent], axis=-1).astype(np.float32)


def predict_view_gaussians(depth: np.ndarray, feature: np.ndarray, image: np.ndarray, cam: CameraView,
                           dist: DepthDistribution, weights: WeightStore, sh_degree: int,
                           prefix: str = "gaussian") -> GaussianSet:
    """One Gaussian per full-resolution pixel, in row-major pixel order."""
    h, w = depth.shape
    if image.shape[:2] != (h, w):
        raise NumericsError(f"image {image.shape} and depth {depth.shape} disagree")
    factor = h // feature.shape[0]
    if feature.shape[0] * factor != h or feature.shape[1] * factor != w:
        raise NumericsError(f"feature grid {feature.shape[:2]} does not tile depth {depth.shape}")
    feats = upsample_bilinear(feature.astype(np.float32), factor)
    conf = upsample_bilinear(confidence_stats(dist), factor)
    x = np.concatenate([feats, image.astype(np.float32), conf], axis=-1)
    trunk = linear(x, weights, f"{prefix}.trunk", "gelu")

    opacity = np.clip(sigmoid(linear(trunk, weights, f"{prefix}.opacity")[..., 0].astype(np.float64)),
                      OPACITY_EPS, 1 - OPACITY_EPS)

    d64 = depth.astype(np.float64)
    footprint = d64[..., None] * np.array([1 / cam.fx, 1 / cam.fy, 2 / (cam.fx + cam.fy)])
    raw_scale = softplus(linear(trunk, weights, f"{prefix}.scale").astype(np.float64))
    scale = np.maximum(raw_scale, 1e-6) * footprint

    q = linear(trunk, weights, f"{prefix}.rotation").astype(np.float64) + np.array([1.0, 0, 0, 0])
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    q = np.where(norm > 1e-12, q / np.maximum(norm, 1e-12), np.array([1.0, 0, 0, 0]))

    k = num_coeffs(sh_degree)
    sh = linear(trunk, weights, f"{prefix}.sh").astype(np.float64).reshape(h, w, k, 3)

    u, v = pixel_centers(w, h)
    means = unproject(u, v, d64, cam)
    return GaussianSet(means.reshape(-1, 3), opacity.reshape(-1), scale.reshape(-1, 3), q.reshape(-1, 4),
                       sh.reshape(-1, k, 3), sh_degree)


def predict_gaussians(refined, features, images, cams, dists, weights: WeightStore, sh_degree: int = 1,
                      prefix: str = "gaussian") -> GaussianSet:
    """Concatenate per-view predictions (view-major, then row-major pixels)."""
    if not (len(refined) == len(features) == len(images) == len(cams) == len(dists)):
        raise NumericsError("per-view inputs have inconsistent lengths")
    sets = [predict_view_gaussians(refined[i], features[i], images[i], cams[i], dists[i], weights, sh_degree, prefix)
            for i in range(len(refined))]
    return GaussianSet.concat(sets)


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


class PLYError(ValueError):
    pass


def _ply_fields(sh_degree: int) -> list[str]:
    n_rest = 3 * (num_coeffs(sh_degree) - 1)
    return (["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] + [f"f_rest_{i}" for i in range(n_rest)]
            + ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"])


def write_ply(gaussians: GaussianSet, path) -> None:
    """Binary little-endian PLY in the layout used by common splat viewers.

    Opacity is stored as a logit and scales as logs; ``f_rest`` is
    channel-major (all red coefficients, then green, then blue).
    """
    names = _ply_fields(gaussians.sh_degree)
    m = len(gaussians)
    dt = np.dtype([(n, "<f4") for n in names])
    rec = np.empty(m, dtype=dt)
    g = gaussians.astype(np.float64)
    for i, n in enumerate("xyz"):
        rec[n] = g.means[:, i]
    for c in range(3):
        rec[f"f_dc_{c}"] = g.sh[:, 0, c]
    rest = np.transpose(g.sh[:, 1:, :], (0, 2, 1)).reshape(m, 3 * (g.sh.shape[1] - 1))
    for i in range(rest.shape[1]):
        rec[f"f_rest_{i}"] = rest[:, i]
    op = np.clip(g.opacities, 1e-12, 1 - 1e-12)
    rec["opacity"] = np.log(op) - np.log1p(-op)
    for i in range(3):
        rec[f"scale_{i}"] = np.log(g.scales[:, i])
    for i in range(4):
        rec[f"rot_{i}"] = g.rotations[:, i]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {m}"]
    header += [f"property float {n}" for n in names]
    header += ["end_header"]
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(rec.tobytes())


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def read_ply(path) -> GaussianSet:
    """Read a binary little-endian Gaussian PLY (extra properties are ignored)."""
    raw = Path(path).read_bytes()
    end = raw.find(b"end_header\n")
    if not raw.startswith(b"ply\n") or end < 0:
        raise PLYError(f"{path}: not a PLY file")
    lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    count = None
    props: list[tuple[str, str]] = []
    in_vertex = False
    for line in lines[1:]:
        parts = line.split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            if parts[1] != "binary_little_endian":
                raise PLYError(f"{path}: unsupported PLY format {parts[1]}")
        elif parts[0] == "element":
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
            elif count is None:
                raise PLYError(f"{path}: elements before 'vertex' are not supported")
        elif parts[0] == "property" and in_vertex:
            if parts[1] == "list" or parts[1] not in _PLY_TYPES:
                raise PLYError(f"{path}: unsupported vertex property {' '.join(parts[1:])}")
            props.append((parts[2], "<" + _PLY_TYPES[parts[1]]))
    if count is None:
        raise PLYError(f"{path}: no vertex element")
    dt = np.dtype(props)
    if len(body) < dt.itemsize * count:
        raise PLYError(f"{path}: vertex data truncated")
    rec = np.frombuffer(body, dtype=dt, count=count)
    names = set(dt.names)
    required = {"x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
                "rot_0", "rot_1", "rot_2", "rot_3"}
    if missing := required - names:
        raise PLYError(f"{path}: missing properties {sorted(missing)}")
    n_rest = sum(1 for n in names if n.startswith("f_rest_"))
    if n_rest % 3:
        raise PLYError(f"{path}: f_rest count {n_rest} is not a multiple of 3")
    degree = degree_from_coeffs(n_rest // 3 + 1)

    col = lambda n: rec[n].astype(np.float64)  # noqa: E731
    means = np.stack([col("x"), col("y"), col("z")], axis=1)
    dc = np.stack([col(f"f_dc_{c}") for c in range(3)], axis=1)[:, None, :]
    rest = np.stack([col(f"f_rest_{i}") for i in range(n_rest)], axis=1) if n_rest else np.zeros((count, 0))
    rest = rest.reshape(count, 3, n_rest // 3).transpose(0, 2, 1)
    sh = np.concatenate([dc, rest], axis=1)
    opacity = 1.0 / (1.0 + np.exp(-col("opacity")))
    scales = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rots = np.stack([col(f"rot_{i}") for i in range(4)], axis=1)
    return GaussianSet(means, opacity, scales, rots, sh, degree)
