"""Feature aggregation, tensor files, dataset manifests and a synthetic
latent dataset that stands in for a pretrained backbone."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import rng as _rng
from .tensor import as_tensor, bilinear_resize, concat_channels

MAGIC = b"LAFT"
VERSION = 1
NORMAL = "normal"
ANOMALOUS = "anomalous"


class FormatError(ValueError):
    """Malformed tensor file or manifest."""


# --- multi-scale aggregation -------------------------------------------------


@dataclass(frozen=True)
class FeatureLevel:
    level: int
    map: np.ndarray


@dataclass(frozen=True)
class MsaConfig:
    selected_levels: tuple[int, ...]
    target_h: int
    target_w: int

    def __post_init__(self):
        if not self.selected_levels:
            raise ValueError("selected_levels must not be empty")
        if self.target_h < 1 or self.target_w < 1:
            raise ValueError("target size must be positive")


def aggregate(levels: Sequence[FeatureLevel], cfg: MsaConfig) -> np.ndarray:
    """Resize each selected level to the target size and stack along channels.

    Levels are concatenated in ascending level index.
    """
    by_level = {}
    for lv in levels:
        if lv.level in by_level:
            raise ValueError(f"duplicate feature level {lv.level}")
        by_level[lv.level] = lv.map
    missing = [l for l in cfg.selected_levels if l not in by_level]
    if missing:
        raise KeyError(f"missing feature levels: {missing}")
    parts = [
        bilinear_resize(as_tensor(by_level[l], 3), cfg.target_h, cfg.target_w)
        for l in sorted(set(cfg.selected_levels))
    ]
    return concat_channels(parts)


# --- LAFT tensor container ---------------------------------------------------


def tensor_bytes(t) -> bytes:
    t = np.asarray(t, dtype=np.float32)
    if t.ndim == 0:
        t = t.reshape(1)
    head = MAGIC + struct.pack("<II", VERSION, t.ndim)
    dims = struct.pack(f"<{t.ndim}Q", *t.shape)
    return head + dims + np.ascontiguousarray(t, dtype="<f4").tobytes()


def save_tensor(path, t) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(tensor_bytes(t))


def tensor_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise FormatError(f"truncated header at offset {len(buf)}")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r} at offset 0")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    off = 12
    if len(buf) < off + 8 * rank:
        raise FormatError(f"truncated dimensions at offset {len(buf)}")
    dims = struct.unpack_from(f"<{rank}Q", buf, off)
    off += 8 * rank
    n = int(np.prod(dims, dtype=np.int64)) if rank else 0
    need = off + 4 * n
    if len(buf) < need:
        raise FormatError(f"truncated payload at offset {len(buf)}, expected {need} bytes")
    if len(buf) > need:
        raise FormatError(f"trailing bytes at offset {need}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=off)
    return data.astype(np.float32).reshape(dims)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        return tensor_from_bytes(f.read())


# --- manifests ---------------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    id: str
    label: str
    tensor_path: str
    class_id: int = 0
    mask_path: str | None = None

    def __post_init__(self):
        if self.label not in (NORMAL, ANOMALOUS):
            raise ValueError(f"label must be normal/anomalous, got {self.label!r}")

    @property
    def is_anomalous(self) -> bool:
        return self.label == ANOMALOUS


@dataclass
class DatasetManifest:
    records: list[SampleRecord] = field(default_factory=list)
    root: Path | None = None  # relative paths resolve against this

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolve(self, p: str) -> Path:
        q = Path(p)
        if not q.is_absolute() and self.root is not None:
            q = self.root / q
        return q

    def load(self, rec: SampleRecord) -> np.ndarray:
        return load_tensor(self.resolve(rec.tensor_path))

    def load_mask(self, rec: SampleRecord) -> np.ndarray | None:
        if rec.mask_path is None:
            return None
        return load_tensor(self.resolve(rec.mask_path))

    def labels(self) -> np.ndarray:
        return np.array([int(r.is_anomalous) for r in self.records])

    def check_training(self) -> None:
        bad = [r.id for r in self.records if r.label != NORMAL]
        if bad:
            raise ValueError(f"training manifest contains non-normal samples: {bad[:5]}")


def write_manifest(path, manifest: DatasetManifest | Iterable[SampleRecord]) -> None:
    records = manifest.records if isinstance(manifest, DatasetManifest) else list(manifest)
    lines = ["# id\tlabel\ttensor_path\tclass_id\t[mask_path]"]
    for r in records:
        fields = [r.id, r.label, r.tensor_path, str(r.class_id)]
        if r.mask_path is not None:
            fields.append(r.mask_path)
        lines.append("\t".join(fields))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    records = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        if len(f) not in (4, 5):
            raise FormatError(f"{path}:{lineno}: expected 4 or 5 tab-separated fields")
        try:
            records.append(
                SampleRecord(f[0], f[1], f[2], int(f[3]), f[4] if len(f) == 5 else None)
            )
        except ValueError as e:
            raise FormatError(f"{path}:{lineno}: {e}") from None
    return DatasetManifest(records, root=path.parent)


# --- synthetic latent dataset ------------------------------------------------


@dataclass
class LatentDataset:
    """In-memory view of a generated dataset, mirroring the written manifests."""

    train: list[np.ndarray]
    train_classes: list[int]
    test: list[np.ndarray]
    test_classes: list[int]
    test_labels: np.ndarray
    test_masks: list[np.ndarray]  # all-zero for normal samples
    class_means: np.ndarray
    std: float

    def ids(self) -> tuple[list[str], list[str]]:
        """Sample ids as written to the manifests; they also key the noise streams."""
        tr = [f"train_c{k}_{i:05d}" for i, k in enumerate(self.train_classes)]
        te = [f"test_c{k}_{i:05d}" for i, k in enumerate(self.test_classes)]
        return tr, te


def generate_latent(
    n_classes: int,
    samples_per_class: int,
    h: int,
    w: int,
    c: int,
    anomaly_fraction: float,
    seed: int,
    test_per_class: int | None = None,
    offset: float = 5.0,
    std: float = 0.25,
    mean_scale: float = 1.0,
    region_frac: tuple[float, float] = (0.15, 0.35),
) -> LatentDataset:
    """Generate per-class Gaussian feature tensors with rectangular anomalies.

    Every slice of a class-``k`` tensor is drawn iid from ``N(mu_k, std^2 I)``.
    Anomalous test tensors get ``offset * std`` added on every channel inside
    one axis-aligned rectangle covering ``region_frac`` of the area; the sign
    of the shift is drawn per channel.
    """
    if min(n_classes, samples_per_class, h, w, c) < 1:
        raise ValueError("counts and sizes must be >= 1")
    if not 0.0 <= anomaly_fraction <= 1.0:
        raise ValueError("anomaly_fraction must be in [0, 1]")
    if test_per_class is None:
        test_per_class = samples_per_class
    means = _rng.stream(seed, "class-means").normal(0.0, mean_scale, size=(n_classes, c))

    train, train_cls = [], []
    for k in range(n_classes):
        for i in range(samples_per_class):
            g = _rng.stream(seed, "train", k, i)
            train.append((means[k] + std * g.standard_normal((h, w, c))).astype(np.float32))
            train_cls.append(k)

    test, test_cls, labels, masks = [], [], [], []
    n_anom = int(round(anomaly_fraction * test_per_class))
    for k in range(n_classes):
        for i in range(test_per_class):
            g = _rng.stream(seed, "test", k, i)
            x = means[k] + std * g.standard_normal((h, w, c))
            m = np.zeros((h, w), dtype=np.float32)
            if i < n_anom:
                m = _rect_mask(h, w, region_frac, g)
                sign = g.choice([-1.0, 1.0], size=c)
                x = x + m[:, :, None] * (offset * std * sign)
            test.append(x.astype(np.float32))
            test_cls.append(k)
            labels.append(int(i < n_anom))
            masks.append(m)
    return LatentDataset(
        train, train_cls, test, test_cls, np.array(labels), masks, means.astype(np.float32), std
    )


def _rect_mask(h, w, frac, g) -> np.ndarray:
    area = g.uniform(*frac) * h * w
    aspect = np.exp(g.uniform(np.log(0.5), np.log(2.0)))
    rh = int(np.clip(round(np.sqrt(area * aspect)), 1, h))
    rw = int(np.clip(round(area / rh), 1, w))
    y = int(g.integers(0, h - rh + 1))
    x = int(g.integers(0, w - rw + 1))
    m = np.zeros((h, w), dtype=np.float32)
    m[y : y + rh, x : x + rw] = 1.0
    return m


def synth_latent_dataset(
    n_classes: int,
    samples_per_class: int,
    h: int,
    w: int,
    c: int,
    anomaly_fraction: float,
    seed: int,
    out_dir=None,
    **kwargs,
) -> tuple[DatasetManifest, DatasetManifest]:
    """Generate a dataset and write it as LAFT tensors plus two manifests.

    Returns ``(train_manifest, test_manifest)``. With ``out_dir=None`` nothing
    is written; use :func:`generate_latent` directly for in-memory work.
    """
    ds = generate_latent(n_classes, samples_per_class, h, w, c, anomaly_fraction, seed, **kwargs)
    train_ids, test_ids = ds.ids()
    train_recs, test_recs = [], []
    for rid, k in zip(train_ids, ds.train_classes):
        train_recs.append(SampleRecord(rid, NORMAL, f"train/{rid}.laft", k))
    for rid, k, lab in zip(test_ids, ds.test_classes, ds.test_labels):
        mask = f"test/{rid}_mask.laft" if lab else None
        test_recs.append(SampleRecord(rid, ANOMALOUS if lab else NORMAL, f"test/{rid}.laft", k, mask))
    root = Path(out_dir) if out_dir is not None else None
    train_m = DatasetManifest(train_recs, root)
    test_m = DatasetManifest(test_recs, root)
    if root is not None:
        for r, x in zip(train_recs, ds.train):
            save_tensor(root / r.tensor_path, x)
        for r, x, m in zip(test_recs, ds.test, ds.test_masks):
            save_tensor(root / r.tensor_path, x)
            if r.mask_path:
                save_tensor(root / r.mask_path, m)
        write_manifest(root / "train.tsv", train_m)
        write_manifest(root / "test.tsv", test_m)
    return train_m, test_m


def load_all(manifest: DatasetManifest) -> list[np.ndarray]:
    return [manifest.load(r) for r in manifest]


def mask_or_zeros(manifest: DatasetManifest, rec: SampleRecord, hw) -> np.ndarray:
    m = manifest.load_mask(rec)
    return np.zeros(hw, dtype=np.float32) if m is None else m
