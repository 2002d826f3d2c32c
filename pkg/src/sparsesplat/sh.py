"""Real spherical harmonics up to degree 3, in the ordering and sign convention of
the reference 3D Gaussian splatting code (index ``l*l + l + m``)."""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005, -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658, 0.3731763325901154,
      -0.4570457994644658, 1.445305721320277, -0.5900435899266435)

MAX_DEGREE = 3


def num_coeffs(degree: int) -> int:
    return (degree + 1) ** 2


def degree_from_coeffs(n: int) -> int:
    d = int(round(np.sqrt(n))) - 1
    if num_coeffs(d) != n or not 0 <= d <= MAX_DEGREE:
        raise ValueError(f"{n} coefficients do not correspond to an SH degree in [0, {MAX_DEGREE}]")
    return d


def sh_basis(dirs: np.ndarray, degree: int, with_grad: bool = False):
    """Basis values ``[..., K]`` at unit directions ``[..., 3]``.

    With ``with_grad`` also returns ``d basis / d dir`` as ``[..., K, 3]``
    (derivative of the polynomial form w.r.t. the raw x, y, z components).
    """
    if not 0 <= degree <= MAX_DEGREE:
        raise ValueError(f"SH degree must be in [0, {MAX_DEGREE}], got {degree}")
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    one = np.ones_like(x)
    zero = np.zeros_like(x)
    vals = [C0 * one]
    grads = [(zero, zero, zero)]
    if degree >= 1:
        vals += [-C1 * y, C1 * z, -C1 * x]
        grads += [(zero, -C1 * one, zero), (zero, zero, C1 * one), (-C1 * one, zero, zero)]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        vals += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
        grads += [
            (C2[0] * y, C2[0] * x, zero),
            (zero, C2[1] * z, C2[1] * y),
            (-2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z),
            (C2[3] * z, zero, C2[3] * x),
            (2 * C2[4] * x, -2 * C2[4] * y, zero),
        ]
    if degree >= 3:
        vals += [
            C3[0] * y * (3 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4 * zz - xx - yy),
            C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            C3[4] * x * (4 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3 * yy),
        ]
        grads += [
            (C3[0] * 6 * x * y, C3[0] * (3 * xx - 3 * yy), zero),
            (C3[1] * y * z, C3[1] * x * z, C3[1] * x * y),
            (C3[2] * -2 * x * y, C3[2] * (4 * zz - xx - 3 * yy), C3[2] * 8 * y * z),
            (C3[3] * -6 * x * z, C3[3] * -6 * y * z, C3[3] * (6 * zz - 3 * xx - 3 * yy)),
            (C3[4] * (4 * zz - 3 * xx - yy), C3[4] * -2 * x * y, C3[4] * 8 * x * z),
            (C3[5] * 2 * x * z, C3[5] * -2 * y * z, C3[5] * (xx - yy)),
            (C3[6] * (3 * xx - 3 * yy), C3[6] * -6 * x * y, zero),
        ]
    basis = np.stack(vals, axis=-1)
    if not with_grad:
        return basis
    g = np.stack([np.stack(gr, axis=-1) for gr in grads], axis=-2)
    return basis, g


def sh_to_rgb(coeffs: np.ndarray, dirs: np.ndarray):
    """Colour before clamping: ``sum_k coeffs[..., k, :] * Y_k(dir) + 0.5``."""
    degree = degree_from_coeffs(coeffs.shape[-2])
    basis = sh_basis(dirs, degree).astype(coeffs.dtype, copy=False)
    return np.einsum("...k,...kc->...c", basis, coeffs) + coeffs.dtype.type(0.5)


def sh_evaluate(coeffs: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] for SH coefficients ``[..., K, 3]`` seen along unit ``direction``."""
    coeffs = np.asarray(coeffs)
    if not np.issubdtype(coeffs.dtype, np.floating):
        coeffs = coeffs.astype(np.float64)
    d = np.asarray(direction, dtype=coeffs.dtype)
    return np.clip(sh_to_rgb(coeffs, d), 0.0, 1.0)


def rgb_to_dc(rgb) -> np.ndarray:
    """Degree-0 coefficient reproducing ``rgb`` (inverse of the +0.5 offset)."""
    return (np.asarray(rgb) - 0.5) / C0
