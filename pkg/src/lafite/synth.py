"""Mask-based anomaly synthesis and the pseudo validation set."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import rng as _rng

SHAPES = ("rectangle", "ellipse", "polygon")


class MaskSpecError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSpec:
    """How fragments are cut: shape families, area fraction, rotation, count."""

    h: int
    w: int
    shapes: tuple[str, ...] = SHAPES
    size_range: tuple[float, float] = (0.05, 0.2)
    rotation_range: tuple[float, float] = (0.0, 180.0)
    count_range: tuple[int, int] = (1, 3)

    def validate(self) -> None:
        lo, hi = self.size_range
        if not (0 < lo <= hi < 1):
            raise MaskSpecError(f"size_range must satisfy 0 < lo <= hi < 1, got {self.size_range}")
        if self.count_range[0] < 0 or self.count_range[0] > self.count_range[1]:
            raise MaskSpecError(f"bad count_range {self.count_range}")
        if self.rotation_range[0] > self.rotation_range[1]:
            raise MaskSpecError(f"bad rotation_range {self.rotation_range}")
        if not self.shapes or any(s not in SHAPES for s in self.shapes):
            raise MaskSpecError(f"shapes must be drawn from {SHAPES}")
        if self.h < 1 or self.w < 1:
            raise MaskSpecError("mask size must be positive")
        if math.floor(hi * self.h * self.w) < 1:
            raise MaskSpecError("size_range too small to cover a single pixel")


@dataclass
class SynthSample:
    tensor: np.ndarray
    gt_mask: np.ndarray
    source_id: str
    target_id: str


def _pixel_grid(h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    return yy + 0.5, xx + 0.5


def _rotate(dy, dx, theta):
    c, s = math.cos(theta), math.sin(theta)
    return c * dy + s * dx, -s * dy + c * dx


def _rect(h, w, area, theta, cy, cx, aspect):
    a = math.sqrt(area * aspect)
    b = area / a
    yy, xx = _pixel_grid(h, w)
    u, v = _rotate(yy - cy, xx - cx, theta)
    return (np.abs(u) <= a / 2) & (np.abs(v) <= b / 2)


def _ellipse(h, w, area, theta, cy, cx, aspect):
    a = math.sqrt(area * aspect / math.pi)
    b = area / (math.pi * a)
    yy, xx = _pixel_grid(h, w)
    u, v = _rotate(yy - cy, xx - cx, theta)
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def _polygon(h, w, area, theta, cy, cx, g):
    """Convex polygon with 3-6 vertices, scaled to the requested area."""
    k = int(g.integers(3, 7))
    ang = np.sort(g.uniform(0, 2 * math.pi, size=k))
    # spread the angles so the polygon is not degenerate
    ang = 0.5 * ang + 0.5 * np.arange(k) * 2 * math.pi / k
    pts = np.stack([np.sin(ang + theta), np.cos(ang + theta)], axis=1)
    x, y = pts[:, 1], pts[:, 0]
    unit_area = 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))
    pts *= math.sqrt(area / unit_area)
    yy, xx = _pixel_grid(h, w)
    inside = np.ones((h, w), dtype=bool)
    for i in range(k):
        p, q = pts[i], pts[(i + 1) % k]
        cross = (q[1] - p[1]) * (yy - cy - p[0]) - (q[0] - p[0]) * (xx - cx - p[1])
        inside &= cross >= 0
    return inside


def _row_slack(m: np.ndarray) -> int:
    """Pixels in the longest raster row or column of ``m``."""
    return int(max(m.sum(axis=0).max(), m.sum(axis=1).max()))


def _one_mask(spec: MaskSpec, g: np.random.Generator, shape: str) -> np.ndarray:
    h, w = spec.h, spec.w
    lo, hi = spec.size_range
    target = g.uniform(lo, hi) * h * w
    theta = math.radians(g.uniform(*spec.rotation_range))
    aspect = math.exp(g.uniform(math.log(0.5), math.log(2.0)))
    cy, cx = g.uniform(0.3 * h, 0.7 * h), g.uniform(0.3 * w, 0.7 * w)
    poly_seed = int(g.integers(2**62))
    area = target
    # rasterised area drifts from the continuous one; rescale until it lands
    # in range, allowing one raster row of slack
    for _ in range(60):
        if shape == "rectangle":
            m = _rect(h, w, area, theta, cy, cx, aspect)
        elif shape == "ellipse":
            m = _ellipse(h, w, area, theta, cy, cx, aspect)
        else:
            m = _polygon(h, w, area, theta, cy, cx, np.random.default_rng(poly_seed))
        px = int(m.sum())
        if px > 0:
            slack = _row_slack(m)
            if lo * h * w - slack <= px <= hi * h * w + slack and abs(px - target) <= slack:
                return m.astype(np.float32)
        area *= target / max(px, 0.5)
        # clipped by the border: move toward the centre
        cy, cx = 0.5 * (cy + h / 2), 0.5 * (cx + w / 2)
    raise MaskSpecError(f"could not rasterise a {shape} within {spec.size_range} on {h}x{w}")


def make_masks(spec: MaskSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Draw ``count`` random masks, each covering an area fraction in ``size_range``."""
    spec.validate()
    n = int(rng.integers(spec.count_range[0], spec.count_range[1] + 1))
    out = []
    for _ in range(n):
        shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
        out.append(_one_mask(spec, rng, shape))
    return out


def mask_union(masks: Sequence[np.ndarray], h: int, w: int) -> np.ndarray:
    u = np.zeros((h, w), dtype=bool)
    for m in masks:
        u |= np.asarray(m) > 0
    return u.astype(np.float32)


def synthesize(target, donor, masks, target_id: str = "target", source_id: str = "donor") -> SynthSample:
    """Paste ``donor`` into ``target`` wherever any mask is set."""
    target = np.asarray(target, dtype=np.float32)
    donor = np.asarray(donor, dtype=np.float32)
    if target.shape != donor.shape:
        raise ValueError(f"shape mismatch: {target.shape} vs {donor.shape}")
    h, w = target.shape[:2]
    u = mask_union(masks, h, w)
    sel = u > 0
    if target.ndim == 3:
        sel = sel[:, :, None]
    out = np.where(sel, donor, target)
    return SynthSample(out, u, source_id, target_id)


@dataclass
class PseudoSample:
    id: str
    tensor: np.ndarray
    label: int  # 1 = pseudo-anomalous
    gt_mask: np.ndarray
    source_id: str | None = None


def build_pseudo_validation(
    tensors: Sequence[np.ndarray],
    ids: Sequence[str],
    spec: MaskSpec,
    batch: int = 16,
    seed: int = 0,
    normal_fraction: float = 0.5,
) -> list[PseudoSample]:
    """Turn normal samples into a labelled validation set.

    Samples are shuffled and split into batches of ``batch``. Within a batch
    a ``1 - normal_fraction`` share is chosen for corruption; each of those
    receives fragments cut from another batch member (a cyclic shift of a
    random permutation, so nobody donates to itself). The rest stay normal.
    A final short batch is used as is; a batch of one stays normal.
    """
    if batch < 2:
        raise ValueError("batch must be >= 2")
    if len(tensors) != len(ids):
        raise ValueError("need one id per tensor")
    if not 0 <= normal_fraction <= 1:
        raise ValueError("normal_fraction must be in [0, 1]")
    spec.validate()
    out: list[PseudoSample] = []
    order = _rng.stream(seed, "pseudo-order").permutation(len(tensors))
    for b, start in enumerate(range(0, len(tensors), batch)):
        members = [int(i) for i in order[start : start + batch]]
        g = _rng.stream(seed, "pseudo-batch", b)
        n = len(members)
        perm = g.permutation(n)
        donors = np.roll(perm, 1)
        donor_of = {int(perm[i]): int(donors[i]) for i in range(n)}
        n_anom = 0 if n < 2 else int(round((1 - normal_fraction) * n))
        chosen = set(int(i) for i in g.permutation(n)[:n_anom])
        for j, idx in enumerate(members):
            x = np.asarray(tensors[idx], dtype=np.float32)
            h, w = x.shape[:2]
            if j in chosen:
                d = members[donor_of[j]]
                masks = make_masks(spec, _rng.stream(seed, "pseudo-mask", ids[idx]))
                s = synthesize(x, tensors[d], masks, ids[idx], ids[d])
                label = int(s.gt_mask.any())
                out.append(PseudoSample(f"pseudo_{ids[idx]}", s.tensor, label, s.gt_mask, ids[d]))
            else:
                out.append(PseudoSample(f"pseudo_{ids[idx]}", x.copy(), 0, np.zeros((h, w), np.float32)))
    return out
