"""Detection and localization metrics: AUROC, AU-PR and AUPRO."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy import ndimage

DEFAULT_FPR_LIMIT = 0.3


class UndefinedMetricError(ValueError):
    pass


def _scored(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{len(s)} scores but {len(y)} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y


def _avg_ranks(s: np.ndarray) -> np.ndarray:
    order = np.argsort(s, kind="stable")
    ss = s[order]
    ranks = np.empty(len(s))
    # group boundaries of equal values
    starts = np.flatnonzero(np.r_[True, ss[1:] != ss[:-1]])
    ends = np.r_[starts[1:], len(s)]
    for a, b in zip(starts, ends):
        ranks[order[a:b]] = (a + b + 1) / 2.0  # mean of 1-based ranks a+1..b
    return ranks


def auroc(scores, labels) -> float:
    """Mann-Whitney statistic: P(anomalous > normal) + 0.5 P(tie)."""
    s, y = _scored(scores, labels)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise UndefinedMetricError("AUROC needs both normal and anomalous samples")
    r = _avg_ranks(s)
    u = r[y == 1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n0 * n1))


def aupr(scores, labels) -> float:
    """Area under the step-wise precision-recall curve (average precision).

    Each distinct score is a threshold; samples with ``score >= threshold``
    are predicted anomalous.
    """
    s, y = _scored(scores, labels)
    P = int(y.sum())
    if P == 0:
        raise UndefinedMetricError("AU-PR needs at least one anomalous sample")
    order = np.argsort(-s, kind="stable")
    ss, yy = s[order], y[order]
    tp = np.cumsum(yy)
    # last position of each group of equal scores
    last = np.flatnonzero(np.r_[ss[1:] != ss[:-1], True])
    tp_at = tp[last]
    pred_at = last + 1
    precision = tp_at / pred_at
    recall = tp_at / P
    prev = np.r_[0.0, recall[:-1]]
    return float(np.sum((recall - prev) * precision))


def label_regions(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """8-connected components of a binary mask."""
    return ndimage.label(np.asarray(mask) > 0, structure=np.ones((3, 3), dtype=int))


def pro_curve(score_maps: Sequence[np.ndarray], gt_masks: Sequence[np.ndarray]):
    """(fpr, pro, thresholds) evaluated at every distinct score, descending.

    The returned curve starts at (0, 0) for a threshold above every score.
    """
    if len(score_maps) != len(gt_masks):
        raise ValueError("need one mask per score map")
    scores, region_ids, normal = [], [], []
    region_sizes = []
    offset = 0
    for sm, gm in zip(score_maps, gt_masks):
        sm = np.asarray(sm, dtype=np.float64)
        gm = np.asarray(gm)
        if sm.shape != gm.shape:
            raise ValueError(f"map {sm.shape} and mask {gm.shape} differ")
        lab, n = label_regions(gm)
        ids = np.where(lab > 0, lab + offset, 0).ravel()
        region_sizes.extend(np.bincount(lab.ravel(), minlength=n + 1)[1:].tolist())
        offset += n
        scores.append(sm.ravel())
        region_ids.append(ids)
        normal.append(gm.ravel() <= 0)
    n_regions = offset
    if n_regions == 0:
        raise UndefinedMetricError("AUPRO needs at least one anomalous region")
    s = np.concatenate(scores)
    rid = np.concatenate(region_ids)
    nrm = np.concatenate(normal)
    n_normal = int(nrm.sum())
    if n_normal == 0:
        raise UndefinedMetricError("AUPRO needs normal pixels to measure false positives")
    sizes = np.asarray(region_sizes, dtype=np.float64)

    order = np.argsort(-s, kind="stable")
    s, rid, nrm = s[order], rid[order], nrm[order]
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    fp = np.cumsum(nrm)[last]
    fpr = fp / n_normal
    # per-region covered fraction at each threshold, averaged over regions
    w = np.where(rid > 0, 1.0 / sizes[np.maximum(rid, 1) - 1], 0.0) / n_regions
    pro = np.cumsum(w)[last]
    return np.r_[0.0, fpr], np.r_[0.0, pro], np.r_[np.inf, s[last]]


def aupro(score_maps, gt_masks, fpr_limit: float = DEFAULT_FPR_LIMIT) -> float:
    """Area under per-region-overlap vs FPR up to ``fpr_limit``, divided by ``fpr_limit``."""
    if not 0 < fpr_limit <= 1:
        raise ValueError("fpr_limit must be in (0, 1]")
    fpr, pro, _ = pro_curve(score_maps, gt_masks)
    return integrate_limited(fpr, pro, fpr_limit) / fpr_limit


def integrate_limited(x: np.ndarray, y: np.ndarray, limit: float) -> float:
    """Trapezoid area of the polyline ``(x, y)`` (x non-decreasing) over ``[0, limit]``."""
    area = 0.0
    for i in range(1, len(x)):
        x0, x1, y0, y1 = x[i - 1], x[i], y[i - 1], y[i]
        if x0 >= limit:
            break
        if x1 > limit:
            y1 = y0 + (y1 - y0) * (limit - x0) / (x1 - x0)
            x1 = limit
        area += (x1 - x0) * (y0 + y1) / 2.0
    return float(area)


def pixel_auroc(score_maps, gt_masks) -> float:
    s = np.concatenate([np.asarray(m, dtype=np.float64).ravel() for m in score_maps])
    y = np.concatenate([(np.asarray(g) > 0).ravel() for g in gt_masks]).astype(int)
    return auroc(s, y)


def format_report(rows) -> str:
    """Tab-separated ``metric  split  value`` lines, values to 4 decimals."""
    lines = ["metric\tsplit\tvalue"]
    for name, split, value in rows:
        lines.append(f"{name}\t{split}\t{value:.4f}")
    return "\n".join(lines) + "\n"
