"""Dense-array kernels shared by every stage of the pipeline.

Arrays are plain ``numpy.ndarray`` objects laid out channels-last
(``[H, W, C]`` for images and feature grids). float32 is the working
precision; every kernel preserves the dtype of its inputs so the same code
runs in float64 inside gradient checks.

Layers that own parameters look them up in a :class:`~sparsesplat.weights.WeightStore`
by prefix: ``<name>.weight`` and ``<name>.bias``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class NumericsError(ValueError):
    """Raised on shape mismatches and non-finite values."""


def ensure_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        bad = np.argwhere(~np.isfinite(x))[0]
        raise NumericsError(f"{what} contains a non-finite value at index {tuple(int(i) for i in bad)}")
    return x


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------

_GELU_K = np.sqrt(2.0 / np.pi)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gelu(x):
    """Tanh approximation of GELU."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_K * (x + 0.044715 * x**3)))


def _gelu_grad(x):
    inner = _GELU_K * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * _GELU_K * (1.0 + 3 * 0.044715 * x**2)


def softplus(x):
    return np.logaddexp(0.0, x).astype(x.dtype, copy=False)


ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "none": lambda x: x,
    "relu": lambda x: np.maximum(x, 0),
    "gelu": gelu,
    "sigmoid": sigmoid,
}


def _activation_grad(name: str, pre: np.ndarray, post: np.ndarray) -> np.ndarray:
    if name == "none":
        return np.ones_like(pre)
    if name == "relu":
        return (pre > 0).astype(pre.dtype)
    if name == "gelu":
        return _gelu_grad(pre)
    if name == "sigmoid":
        return post * (1 - post)
    raise NumericsError(f"unknown activation {name!r}")


# ---------------------------------------------------------------------------
# Softmax and sampling
# ---------------------------------------------------------------------------


def softmax_last(x: np.ndarray) -> np.ndarray:
    """Softmax over the last axis. Shift-invariant by construction."""
    x = np.asarray(x)
    if x.shape[-1] < 1:
        raise NumericsError("softmax over an empty axis")
    if np.isnan(x).any():
        raise NumericsError("softmax input contains NaN")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def bilinear_sample(grid: np.ndarray, x, y) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``grid[H, W, C]`` at continuous index coordinates.

    Integer coordinates hit cell values exactly: ``(x=2, y=3)`` returns
    ``grid[3, 2]``. Corners falling outside the grid contribute zero.

    Returns ``(values[..., C], validity[...])`` where validity is the
    bilinear mass landing on in-bounds corners.
    """
    x = np.asarray(x, dtype=grid.dtype)
    y = np.asarray(y, dtype=grid.dtype)
    h, w = grid.shape[:2]
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros(x.shape + grid.shape[2:], dtype=grid.dtype)
    valid = np.zeros(x.shape, dtype=grid.dtype)
    for dx, dy, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (1, 0, fx * (1 - fy)),
        (0, 1, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx
        yi = y0 + dy
        inb = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        wgt = np.where(inb, wgt, 0)
        vals = grid[np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
        out += wgt[..., None] * vals if grid.ndim == 3 else wgt * vals
        valid += wgt
    return out, valid


def upsample_bilinear(grid: np.ndarray, factor: int) -> np.ndarray:
    """Upsample ``[h, w, ...]`` by an integer factor with half-pixel alignment.

    Output pixel ``i`` has center ``(i + 0.5) / factor`` in source pixel
    units, i.e. source index ``(i + 0.5) / factor - 0.5``. Borders clamp to
    the nearest source cell (edge replication).
    """
    h, w = grid.shape[:2]
    dt = grid.dtype if np.issubdtype(grid.dtype, np.floating) else np.float32
    ys = (np.arange(h * factor, dtype=np.float64) + 0.5) / factor - 0.5
    xs = (np.arange(w * factor, dtype=np.float64) + 0.5) / factor - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(np.int64), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(np.int64), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0).astype(dt)
    fx = (xs - x0).astype(dt)
    extra = (1,) * (grid.ndim - 2)
    fy = fy.reshape((-1, 1) + extra)
    fx = fx.reshape((1, -1) + extra)
    g = grid.astype(dt, copy=False)
    top = g[y0][:, x0] * (1 - fx) + g[y0][:, x1] * fx
    bot = g[y1][:, x0] * (1 - fx) + g[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


# ---------------------------------------------------------------------------
# Parametric layers
# ---------------------------------------------------------------------------


def _params(weights, name):
    return weights[f"{name}.weight"], weights[f"{name}.bias"]


def linear(x: np.ndarray, weights, name: str, activation: str = "none") -> np.ndarray:
    """``act(x @ W + b)`` over the last axis of ``x``."""
    w, b = _params(weights, name)
    if x.shape[-1] != w.shape[0]:
        raise NumericsError(f"linear {name}: input has {x.shape[-1]} features, weight expects {w.shape[0]}")
    w = w.astype(x.dtype, copy=False)
    b = b.astype(x.dtype, copy=False)
    return ACTIVATIONS[activation](x @ w + b)


def linear_backward(x, weights, name, grad_out, activation="none"):
    """Gradients of :func:`linear` w.r.t. input, weight and bias."""
    w, b = _params(weights, name)
    w = w.astype(x.dtype, copy=False)
    pre = x @ w + b.astype(x.dtype, copy=False)
    post = ACTIVATIONS[activation](pre)
    g = grad_out * _activation_grad(activation, pre, post)
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return g @ w.T, x2.T @ g2, g2.sum(axis=0)


def mlp(x, weights, name: str, n_layers: int, out_activation: str = "none"):
    """Stack of ``n_layers`` linear layers ``<name>.fc{i}`` with GELU between."""
    for i in range(n_layers):
        act = out_activation if i == n_layers - 1 else "gelu"
        x = linear(x, weights, f"{name}.fc{i}", act)
    return x


def _im2col(x, k, stride, padding):
    xp = np.pad(x, ((padding, padding), (padding, padding), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(0, 1))  # [H', W', Cin, k, k]
    win = win[::stride, ::stride]
    return xp, win


def conv2d(x: np.ndarray, weights, name: str, stride: int = 1, padding: int | None = None,
           activation: str = "none") -> np.ndarray:
    """2-D cross-correlation of ``x[H, W, Cin]`` with a ``[k, k, Cin, Cout]`` kernel.

    Zero padding; ``padding`` defaults to ``k // 2``.
    """
    w, b = _params(weights, name)
    k = w.shape[0]
    if w.shape[0] != w.shape[1] or k % 2 == 0:
        raise NumericsError(f"conv2d {name}: kernel must be square and odd-sized, got {w.shape[:2]}")
    if x.ndim != 3 or x.shape[2] != w.shape[2]:
        raise NumericsError(f"conv2d {name}: input {x.shape} incompatible with kernel {w.shape}")
    if padding is None:
        padding = k // 2
    _, win = _im2col(x, k, stride, padding)
    w = w.astype(x.dtype, copy=False)
    # win is [H', W', Cin, ky, kx]; kernel is [ky, kx, Cin, Cout]
    out = np.einsum("hwcij,ijco->hwo", win, w, optimize=True) + b.astype(x.dtype, copy=False)
    return ACTIVATIONS[activation](out)


def conv2d_output_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


def conv2d_backward(x, weights, name, grad_out, stride=1, padding=None, activation="none"):
    """Gradients of :func:`conv2d` w.r.t. input, kernel and bias."""
    w, b = _params(weights, name)
    k = w.shape[0]
    if padding is None:
        padding = k // 2
    w = w.astype(x.dtype, copy=False)
    xp, win = _im2col(x, k, stride, padding)
    pre = np.einsum("hwcij,ijco->hwo", win, w, optimize=True) + b.astype(x.dtype, copy=False)
    post = ACTIVATIONS[activation](pre)
    g = grad_out * _activation_grad(activation, pre, post)

    dw = np.einsum("hwcij,hwo->ijco", win, g, optimize=True)
    db = g.sum(axis=(0, 1))
    dxp = np.zeros_like(xp)
    ho, wo = g.shape[:2]
    for i in range(k):
        for j in range(k):
            dxp[i:i + stride * ho:stride, j:j + stride * wo:stride] += g @ w[i, j].T
    h, wd = x.shape[:2]
    return dxp[padding:padding + h, padding:padding + wd], dw, db


def se_gate(feature: np.ndarray, context: np.ndarray, weights, name: str) -> np.ndarray:
    """Squeeze-excitation style channel gate driven by an external context vector.

    ``feature * sigmoid(fc1(gelu(fc0(context))))`` with the gate broadcast over
    every leading (spatial) axis.
    """
    gate = _se_gate_vector(context.astype(feature.dtype, copy=False), weights, name)
    if gate.shape[-1] != feature.shape[-1]:
        raise NumericsError(f"se_gate {name}: gate has {gate.shape[-1]} channels, feature has {feature.shape[-1]}")
    return feature * gate


def _se_gate_vector(context, weights, name):
    hidden = linear(context, weights, f"{name}.fc0", "gelu")
    return linear(hidden, weights, f"{name}.fc1", "sigmoid")


def se_gate_backward(feature, context, weights, name, grad_out):
    """Returns ``(d_feature, d_context, {param: grad})``."""
    context = context.astype(feature.dtype, copy=False)
    hidden = linear(context, weights, f"{name}.fc0", "gelu")
    gate = linear(hidden, weights, f"{name}.fc1", "sigmoid")
    d_feature = grad_out * gate
    reduce_axes = tuple(range(feature.ndim - 1))
    d_gate = (grad_out * feature).sum(axis=reduce_axes)
    d_hidden, dw1, db1 = linear_backward(hidden, weights, f"{name}.fc1", d_gate, "sigmoid")
    d_context, dw0, db0 = linear_backward(context, weights, f"{name}.fc0", d_hidden, "gelu")
    grads = {
        f"{name}.fc0.weight": dw0, f"{name}.fc0.bias": db0,
        f"{name}.fc1.weight": dw1, f"{name}.fc1.bias": db1,
    }
    return d_feature, d_context, grads


# ---------------------------------------------------------------------------
# Windowed attention
# ---------------------------------------------------------------------------


def to_windows(x: np.ndarray, window: int) -> np.ndarray:
    """``[H, W, C] -> [nWin, window*window, C]`` (row-major window order)."""
    h, w, c = x.shape
    if h % window or w % window:
        raise NumericsError(f"window {window} does not divide grid {h}x{w}")
    x = x.reshape(h // window, window, w // window, window, c)
    return x.transpose(0, 2, 1, 3, 4).reshape(-1, window * window, c)


def from_windows(t: np.ndarray, window: int, h: int, w: int) -> np.ndarray:
    c = t.shape[-1]
    t = t.reshape(h // window, w // window, window, window, c)
    return t.transpose(0, 2, 1, 3, 4).reshape(h, w, c)


def window_attention(query: np.ndarray, source: np.ndarray, weights, name: str, window: int) -> np.ndarray:
    """Single-head attention of ``query`` tokens over ``source`` tokens, per window.

    Both grids are ``[H, W, C]``. Returns the attended values (no residual).
    Projections: ``<name>.q``, ``<name>.k``, ``<name>.v``.
    """
    h, w, _ = query.shape
    qt = to_windows(query, window)
    st = to_windows(source, window)
    q = linear(qt, weights, f"{name}.q")
    k = linear(st, weights, f"{name}.k")
    v = linear(st, weights, f"{name}.v")
    logits = q @ k.transpose(0, 2, 1) / np.sqrt(q.shape[-1]).astype(q.dtype)
    attn = softmax_last(logits)
    return from_windows(attn @ v, window, h, w)


# ---------------------------------------------------------------------------
# Finite-difference gradient checking
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    numeric: np.ndarray
    analytic: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} rel={self.max_rel_error:.3e} abs={self.max_abs_error:.3e} tol={self.tol:.0e}"


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function, evaluated in float64."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = float(f(x))
        flat[i] = orig - eps
        fm = float(f(x))
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericsError(f"function is not finite near coordinate {i}")
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def grad_check(f, x, analytic_grad, eps: float = 1e-6, tol: float = 1e-5,
               floor: float = 1e-12) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    The relative error is block-normalised:
    ``max|a - n| / max(max|a|, max|n|, floor)``, so coordinates with tiny
    gradients are judged against the scale of the whole block.
    """
    numeric = numeric_gradient(f, x, eps)
    analytic = np.asarray(analytic_grad, dtype=np.float64).reshape(numeric.shape)
    abs_err = float(np.max(np.abs(analytic - numeric))) if numeric.size else 0.0
    scale = max(float(np.max(np.abs(analytic), initial=0.0)), float(np.max(np.abs(numeric), initial=0.0)), floor)
    return GradCheckReport(abs_err / scale, abs_err, numeric, analytic, tol)
