"""Dense float32 kernels shared by every stage of the pipeline.

Tensors are plain ``numpy.ndarray`` objects with dtype ``float32`` laid out
row-major as ``[h, w, c]`` (feature maps) or ``[h, w]`` (score maps).
Reductions are carried out in float64 and rounded back to float32 so the
result does not depend on the order numpy happens to pick.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "as_tensor",
    "bilinear_resize",
    "concat_channels",
    "GaussianKernel",
    "gaussian_kernel",
    "gaussian_smooth",
    "avg_pool",
    "add",
    "sub",
    "scale",
    "square",
    "channel_sq_norm",
    "channel_norm",
]


def as_tensor(x, ndim: int | None = None) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array, validating its shape."""
    t = np.ascontiguousarray(x, dtype=np.float32)
    if t.ndim == 0 or any(s < 1 for s in t.shape):
        raise ValueError(f"tensor dimensions must all be >= 1, got {t.shape}")
    if ndim is not None and t.ndim != ndim:
        raise ValueError(f"expected a rank-{ndim} tensor, got shape {t.shape}")
    return t


def _axis_weights(n_in: int, n_out: int):
    # corner-aligned: output endpoints land on input endpoints
    if n_out == 1 or n_in == 1:
        pos = np.zeros(n_out)
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    return lo, hi, frac


def bilinear_resize(t, out_h: int, out_w: int) -> np.ndarray:
    """Resize ``[h, w, c]`` (or ``[h, w]``) to ``[out_h, out_w, ...]``."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    t = as_tensor(t)
    if t.ndim not in (2, 3):
        raise ValueError(f"expected [h,w] or [h,w,c], got {t.shape}")
    h, w = t.shape[:2]
    if (h, w) == (out_h, out_w):
        return t.copy()
    src = t.astype(np.float64)
    y0, y1, fy = _axis_weights(h, out_h)
    x0, x1, fx = _axis_weights(w, out_w)
    if t.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    return (top * (1 - fy) + bot * fy).astype(np.float32)


def concat_channels(parts: Sequence) -> np.ndarray:
    if len(parts) == 0:
        raise ValueError("concat_channels needs at least one tensor")
    arrs = [as_tensor(p, 3) for p in parts]
    hw = arrs[0].shape[:2]
    for a in arrs[1:]:
        if a.shape[:2] != hw:
            raise ValueError(f"spatial shape mismatch: {a.shape[:2]} vs {hw}")
    return np.concatenate(arrs, axis=2)


@dataclass(frozen=True)
class GaussianKernel:
    sigma: float
    radius: int
    weights: np.ndarray  # [2r+1, 2r+1], sums to 1


def gaussian_kernel(sigma: float, radius: int | None = None) -> GaussianKernel:
    """Isotropic 2-D Gaussian truncated at ``ceil(4 sigma)`` and renormalised."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius is None:
        radius = max(1, math.ceil(4 * sigma))
    if radius < 1:
        raise ValueError("radius must be >= 1")
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x**2) / (2 * sigma**2))
    g /= g.sum()
    w = np.outer(g, g)
    w /= w.sum()
    return GaussianKernel(float(sigma), int(radius), w)


def gaussian_smooth(t, k: GaussianKernel | float) -> np.ndarray:
    """Same-size 2-D convolution with zero padding at the borders."""
    if not isinstance(k, GaussianKernel):
        k = gaussian_kernel(float(k))
    t = as_tensor(t, 2)
    r = k.radius
    # separable pass; kernel is the outer product of its normalised 1-D profile
    g = k.weights.sum(axis=1)
    h, w = t.shape
    p = np.pad(t.astype(np.float64), r)
    tmp = np.zeros((h + 2 * r, w))
    for i, gi in enumerate(g):
        tmp += gi * p[:, i : i + w]
    out = np.zeros((h, w))
    for i, gi in enumerate(g):
        out += gi * tmp[i : i + h, :]
    return out.astype(np.float32)


def avg_pool(t, k: int, stride: int = 1) -> np.ndarray:
    t = as_tensor(t, 2)
    h, w = t.shape
    if k < 1 or k > h or k > w:
        raise ValueError(f"pool window {k} does not fit a {h}x{w} map")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    c = np.zeros((h + 1, w + 1))
    c[1:, 1:] = t.astype(np.float64).cumsum(0).cumsum(1)
    ys = np.arange(0, h - k + 1, stride)
    xs = np.arange(0, w - k + 1, stride)
    win = (
        c[np.ix_(ys + k, xs + k)]
        - c[np.ix_(ys, xs + k)]
        - c[np.ix_(ys + k, xs)]
        + c[np.ix_(ys, xs)]
    )
    return (win / (k * k)).astype(np.float32)


def _same_shape(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return (a.astype(np.float64) + b).astype(np.float32)


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return (a.astype(np.float64) - b).astype(np.float32)


def scale(a, s: float) -> np.ndarray:
    return (as_tensor(a).astype(np.float64) * s).astype(np.float32)


def square(a) -> np.ndarray:
    a = as_tensor(a).astype(np.float64)
    return (a * a).astype(np.float32)


def channel_sq_norm(a) -> np.ndarray:
    """``[h, w, c] -> [h, w]`` sum of squares over channels."""
    a = as_tensor(a, 3).astype(np.float64)
    return np.einsum("ijc,ijc->ij", a, a).astype(np.float32)


def channel_norm(a) -> np.ndarray:
    return np.sqrt(channel_sq_norm(a).astype(np.float64)).astype(np.float32)
