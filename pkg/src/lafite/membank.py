"""Memory bank of normal feature slices, greedy k-center core set, exact
nearest-neighbour search and nearest-neighbour feature editing."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .features import load_tensor, save_tensor
from .tensor import as_tensor

VERBATIM = "verbatim"
NORMALIZED = "normalized"

# elements of the difference block held at once; bounds memory, not results
_BLOCK = 1 << 22


@dataclass(frozen=True)
class MemoryBank:
    rows: np.ndarray  # [n, d] float32

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class CoreSet:
    indices: np.ndarray  # [n_c] into the parent bank, in selection order
    rows: np.ndarray  # [n_c, d]

    @property
    def n(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class EditConfig:
    K: int = 3
    weight_mode: str = NORMALIZED

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.weight_mode not in (VERBATIM, NORMALIZED):
            raise ValueError(f"weight_mode must be {VERBATIM!r} or {NORMALIZED!r}")


def build_bank(tensors: Sequence) -> MemoryBank:
    """Stack every spatial slice of every training tensor, sample-major."""
    if len(tensors) == 0:
        raise ValueError("need at least one training tensor")
    mats = []
    c = None
    for t in tensors:
        t = as_tensor(t, 3)
        if c is None:
            c = t.shape[2]
        elif t.shape[2] != c:
            raise ValueError(f"channel mismatch: {t.shape[2]} vs {c}")
        mats.append(t.reshape(-1, c))
    rows = np.concatenate(mats, axis=0)
    if not np.isfinite(rows).all():
        raise ValueError("memory bank rows must be finite")
    return MemoryBank(rows)


def _dist_to(rows64: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = rows64 - q
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def greedy_coreset(bank: MemoryBank, keep_rate: float, seed_index: int = 0) -> CoreSet:
    """Greedy k-center selection of ``floor(n * keep_rate)`` rows.

    Starts from ``seed_index``; every further pick is the row farthest (in
    Euclidean distance) from everything chosen so far, lowest index on ties.
    """
    if not 0 < keep_rate <= 1:
        raise ValueError("keep_rate must be in (0, 1]")
    n = bank.n
    n_c = int(np.floor(n * keep_rate))
    if n_c == 0:
        raise ValueError(f"keep_rate {keep_rate} selects no rows from a bank of {n}")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index {seed_index} outside bank of {n}")
    X = bank.rows.astype(np.float64)
    sel = np.empty(n_c, dtype=np.int64)
    sel[0] = seed_index
    mins = _dist_to(X, X[seed_index])
    mins[seed_index] = -1.0
    for i in range(1, n_c):
        j = int(np.argmax(mins))
        sel[i] = j
        # chosen rows hold -1, which min() preserves
        np.minimum(mins, _dist_to(X, X[j]), out=mins)
        mins[j] = -1.0
    return CoreSet(sel, bank.rows[sel].copy())


def pairwise_distances(queries: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Exact Euclidean distances ``[m, n]`` from explicit differences."""
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(rows, dtype=np.float64)
    out = np.empty((q.shape[0], r.shape[0]))
    step = max(1, _BLOCK // max(1, r.size))
    for s in range(0, q.shape[0], step):
        diff = q[s : s + step, None, :] - r[None, :, :]
        out[s : s + step] = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    return out


def knn_batch(coreset: CoreSet, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``k`` neighbours for every query row: ``(indices [m,k], dists [m,k])``.

    Indices refer to coreset rows. Ascending distance, lowest index on ties.
    """
    if not 1 <= k <= coreset.n:
        raise ValueError(f"k={k} must be in [1, {coreset.n}]")
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if q.shape[1] != coreset.rows.shape[1]:
        raise ValueError(f"query dimension {q.shape[1]} != {coreset.rows.shape[1]}")
    D = pairwise_distances(q, coreset.rows)
    # stable sort keeps lower indices first among equal distances
    order = np.argsort(D, axis=1, kind="stable")[:, :k]
    return order, np.take_along_axis(D, order, axis=1)


def knn(coreset: CoreSet, query, k: int) -> list[tuple[int, float]]:
    idx, dist = knn_batch(coreset, np.asarray(query)[None, :], k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def edit_weights(dists, weight_mode: str = NORMALIZED) -> np.ndarray:
    """Neighbour weights ``1 - softmax(d)_k`` (divided by ``K-1`` when normalised).

    ``dists`` is ``[..., K]``; for ``K == 1`` the single weight is 1.
    """
    d = np.asarray(dists, dtype=np.float64)
    K = d.shape[-1]
    if K == 1:
        return np.ones_like(d)
    z = np.exp(d - d.max(axis=-1, keepdims=True))
    w = 1.0 - z / z.sum(axis=-1, keepdims=True)
    if weight_mode == NORMALIZED:
        w = w / (K - 1)
    elif weight_mode != VERBATIM:
        raise ValueError(f"unknown weight_mode {weight_mode!r}")
    return w


def edit_slices(queries, coreset: CoreSet, cfg: EditConfig) -> np.ndarray:
    """Replace each row of ``queries [m, d]`` by its weighted K-neighbour combination."""
    idx, dist = knn_batch(coreset, queries, cfg.K)
    w = edit_weights(dist, cfg.weight_mode)
    nb = coreset.rows.astype(np.float64)[idx]  # [m, K, d]
    return np.einsum("mk,mkd->md", w, nb).astype(np.float32)


def edit_slice(query, coreset: CoreSet, cfg: EditConfig) -> np.ndarray:
    return edit_slices(np.asarray(query)[None, :], coreset, cfg)[0]


def edit_tensor(x, coreset: CoreSet, cfg: EditConfig) -> np.ndarray:
    """Edit every spatial slice of ``[h, w, c]`` (or a batch ``[n, h, w, c]``)."""
    x = np.asarray(x, dtype=np.float32)
    if x.shape[-1] != coreset.rows.shape[1]:
        raise ValueError(f"channel mismatch: {x.shape[-1]} vs {coreset.rows.shape[1]}")
    flat = x.reshape(-1, x.shape[-1])
    return edit_slices(flat, coreset, cfg).reshape(x.shape)


def query_cost_estimate(n_c: int, d_l: int) -> float:
    """Approximate FLOPs of one editing query: ``3 * n_c * (d_l + 1)``.

    Counts about ``3 d_l`` per distance over ``n_c`` rows plus ``3 n_c`` for
    the top-3 scan.
    """
    if n_c < 1 or d_l < 1:
        raise ValueError("n_c and d_l must be positive")
    return 3.0 * n_c * (d_l + 1)


def save_coreset(coreset: CoreSet, out_dir) -> None:
    out = Path(out_dir)
    save_tensor(out / "coreset.laft", coreset.rows)
    (out / "coreset_indices.txt").write_text(
        "\n".join(str(int(i)) for i in coreset.indices) + "\n", encoding="utf-8"
    )


def load_coreset(out_dir) -> CoreSet:
    out = Path(out_dir)
    rows = load_tensor(out / "coreset.laft")
    idx = np.array(
        [int(s) for s in (out / "coreset_indices.txt").read_text(encoding="utf-8").split()],
        dtype=np.int64,
    )
    if len(idx) != rows.shape[0]:
        raise ValueError("coreset index file does not match the row file")
    return CoreSet(idx, rows)
