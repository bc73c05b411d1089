"""Anomaly score maps from reconstruction error, and heatmap export."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import as_tensor, avg_pool, bilinear_resize, channel_sq_norm, gaussian_smooth

PAPER_SIGMA = 4.0
NOMINAL_SIZE = 224
DEFAULT_POOL = 8  # at NOMINAL_SIZE


def scaled_to(value: float, out_size: int, nominal: int = NOMINAL_SIZE) -> float:
    """Rescale a pixel quantity defined at ``nominal`` resolution to ``out_size``."""
    return value * out_size / nominal


def default_pool(out_h: int, out_w: int) -> int:
    return max(1, min(out_h, out_w, round(scaled_to(DEFAULT_POOL, min(out_h, out_w)))))


def score_map(x0, x0_rec, out_h: int, out_w: int, sigma: float = PAPER_SIGMA) -> np.ndarray:
    """Per-position squared error over channels, upsampled bilinearly and smoothed."""
    x0, x0_rec = as_tensor(x0, 3), as_tensor(x0_rec, 3)
    if x0.shape != x0_rec.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {x0_rec.shape}")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    err = channel_sq_norm(x0_rec.astype(np.float64) - x0)
    up = bilinear_resize(err, out_h, out_w)
    return np.maximum(gaussian_smooth(up, sigma), 0.0)


def image_score(s, pool_k: int) -> float:
    """Maximum of the stride-1 ``pool_k`` x ``pool_k`` average-pooled map."""
    return float(avg_pool(s, pool_k, 1).max())


# --- heatmaps ---------------------------------------------------------------


def normalize_per_image(maps: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = []
    for m in maps:
        m = np.asarray(m, dtype=np.float64)
        lo, hi = m.min(), m.max()
        out.append((m - lo) / (hi - lo) if hi > lo else np.zeros_like(m))
    return out


def normalize_per_category(maps: Sequence[np.ndarray]) -> list[np.ndarray]:
    """One shared min/max over all maps, so normal images stay dark."""
    lo = min(float(np.min(m)) for m in maps)
    hi = max(float(np.max(m)) for m in maps)
    span = hi - lo
    return [
        (np.asarray(m, dtype=np.float64) - lo) / span if span > 0 else np.zeros(np.shape(m))
        for m in maps
    ]


def pgm_bytes(m01: np.ndarray) -> bytes:
    """8-bit binary PGM (P5) for a map already scaled to [0, 1]."""
    m = np.asarray(m01, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError("heatmap must be 2-D")
    px = np.clip(np.rint(m * 255.0), 0, 255).astype(np.uint8)
    h, w = px.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + px.tobytes()


def write_pgm(path, m01: np.ndarray) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(pgm_bytes(m01))


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w)
