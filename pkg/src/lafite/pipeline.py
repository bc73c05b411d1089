"""End-to-end wiring: train a denoiser, build the core set, tune, score."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import rng as _rng
from .autodiff.denoisers import DenoiserConfig, NetworkDenoiser, make_denoiser
from .config import PipelineConfig
from .diffusion import ReconstructConfig, reconstruct, train_denoiser
from .features import LatentDataset, generate_latent
from .membank import CoreSet, EditConfig, build_bank, edit_tensor, greedy_coreset
from .metrics import aupr, aupro, auroc, pixel_auroc
from .schedule import NoiseSchedule, cosine_schedule
from .scoring import image_score, score_map
from .synth import MaskSpec, PseudoSample, build_pseudo_validation
from .tensor import bilinear_resize
from .tune import select_k, select_tau


def schedule_from(cfg: PipelineConfig) -> NoiseSchedule:
    return cosine_schedule(cfg.diffusion.T, eta=cfg.diffusion.eta)


def denoiser_config(cfg: PipelineConfig) -> DenoiserConfig:
    d = cfg.denoiser
    return DenoiserConfig(d.architecture, cfg.data.c, d.base_channels, d.hidden, d.temb_dim)


def train(cfg: PipelineConfig, train_x, sched: NoiseSchedule | None = None):
    """Fit a fresh denoiser on ``train_x``; returns ``(net, losses)``."""
    sched = sched or schedule_from(cfg)
    net = make_denoiser(denoiser_config(cfg), sched.T, seed=cfg.seed)
    t = cfg.train
    losses = train_denoiser(
        net,
        np.stack(train_x),
        sched,
        steps=t.steps,
        batch_size=t.batch_size,
        lr=t.lr,
        weight_decay=t.weight_decay,
        seed=cfg.seed,
        lr_drop_frac=t.lr_drop_frac,
    )
    return net, losses


def coreset_from(cfg: PipelineConfig, train_x) -> CoreSet:
    return greedy_coreset(build_bank(train_x), cfg.bank.keep_rate, cfg.bank.seed_index)


def mask_spec(cfg: PipelineConfig) -> MaskSpec:
    s = cfg.synth
    return MaskSpec(
        cfg.data.h,
        cfg.data.w,
        shapes=s.shapes,
        size_range=(s.size_min, s.size_max),
        rotation_range=(0.0, s.rotation_max),
        count_range=(s.count_min, s.count_max),
    )


def pseudo_validation(cfg: PipelineConfig, train_x, train_ids) -> list[PseudoSample]:
    return build_pseudo_validation(
        train_x, train_ids, mask_spec(cfg), cfg.synth.batch, cfg.seed, cfg.synth.normal_fraction
    )


@dataclass
class Detector:
    """Reconstruction-based scorer with optional nearest-neighbour editing.

    Corruption noise for sample ``id`` comes from the stream
    ``(seed, "recon", id)`` so results do not depend on batch composition.
    """

    denoiser: NetworkDenoiser
    sched: NoiseSchedule
    coreset: CoreSet | None
    image_hw: tuple[int, int]
    sigma: float
    pool_k: int
    seed: int = 0
    dt: int = 0
    eta: float = 0.0
    x0_denominator: str = "sqrt"
    batch: int = 256

    @classmethod
    def from_config(cls, cfg: PipelineConfig, denoiser, coreset, sched=None):
        df = cfg.diffusion
        return cls(
            denoiser,
            sched or schedule_from(cfg),
            coreset,
            (cfg.scoring.image_h, cfg.scoring.image_w),
            cfg.sigma_px,
            cfg.pool_px,
            cfg.seed,
            df.dt,
            df.eta,
            df.x0_denominator,
        )

    def recon_config(self, tau: int) -> ReconstructConfig:
        return ReconstructConfig(tau, self.dt or None, self.eta, self.x0_denominator)

    def reconstruct(self, tensors, ids: Sequence[str], tau: int, edit: EditConfig | None):
        X = np.asarray(np.stack(tensors), dtype=np.float32)
        if edit is not None:
            if self.coreset is None:
                raise ValueError("feature editing requested but no core set is loaded")
            X_init = edit_tensor(X, self.coreset, edit)
        else:
            X_init = X
        out = np.empty_like(X)
        rcfg = self.recon_config(tau)
        for s in range(0, len(X), self.batch):
            sl = slice(s, s + self.batch)
            eps = np.stack([_rng.stream(self.seed, "recon", i).standard_normal(X.shape[1:]) for i in ids[sl]])
            z_rng = _rng.stream(self.seed, "recon-z", tau, s)
            out[sl] = reconstruct(X_init[sl], rcfg, self.denoiser, self.sched, z_rng, eps=eps)
        return out

    def score_maps(self, tensors, ids, tau, edit):
        rec = self.reconstruct(tensors, ids, tau, edit)
        h, w = self.image_hw
        return [score_map(x, r, h, w, self.sigma) for x, r in zip(tensors, rec)]

    def image_scores(self, tensors, ids, tau, edit) -> np.ndarray:
        return np.array([image_score(m, self.pool_k) for m in self.score_maps(tensors, ids, tau, edit)])

    def evaluate(self, tensors, ids, labels, masks, tau, edit, fpr_limit=0.3) -> dict[str, float]:
        maps = self.score_maps(tensors, ids, tau, edit)
        scores = np.array([image_score(m, self.pool_k) for m in maps])
        h, w = self.image_hw
        gts = [upsample_mask(m, h, w) for m in masks]
        res = {"det_auroc": auroc(scores, labels), "det_aupr": aupr(scores, labels)}
        if any(g.any() for g in gts):
            res["loc_auroc"] = pixel_auroc(maps, gts)
            res["loc_aupro"] = aupro(maps, gts, fpr_limit)
        return res


def upsample_mask(m, h: int, w: int) -> np.ndarray:
    """Nearest-neighbour upsampling of a binary mask to ``h x w``."""
    m = np.asarray(m, dtype=np.float32)
    if m.shape == (h, w):
        return m
    ys = (np.arange(h) * m.shape[0]) // h
    xs = (np.arange(w) * m.shape[1]) // w
    return m[np.ix_(ys, xs)]


@dataclass
class BenchmarkResult:
    tau: int
    K: int
    tau_scores: dict[int, float]
    k_scores: dict[int, float]
    with_editing: dict[str, float]
    without_editing: dict[str, float]
    test_tau_scores: dict[int, float] = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0


def dataset_from(cfg: PipelineConfig) -> LatentDataset:
    d = cfg.data
    return generate_latent(
        d.n_classes,
        d.samples_per_class,
        d.h,
        d.w,
        d.c,
        d.anomaly_fraction,
        cfg.seed,
        test_per_class=d.test_per_class,
        offset=d.offset,
        std=d.std,
    )


def run_benchmark(cfg: PipelineConfig, test_tau_sweep: bool = False) -> BenchmarkResult:
    """datagen -> train -> core set -> tune on pseudo validation -> test metrics."""
    t0 = time.perf_counter()
    ds = dataset_from(cfg)
    sched = schedule_from(cfg)
    net, losses = train(cfg, ds.train, sched)
    cs = coreset_from(cfg, ds.train)
    det = Detector.from_config(cfg, net, cs, sched)

    train_ids, test_ids = ds.ids()
    pv = pseudo_validation(cfg, ds.train, train_ids)
    pv_x = [p.tensor for p in pv]
    pv_ids = [p.id for p in pv]
    pv_y = np.array([p.label for p in pv])
    tau, tau_scores = select_tau(cfg.tune.tau_values, det, pv_x, pv_ids, pv_y)
    K, k_scores = select_k(cfg.tune.k_values, tau, det, pv_x, pv_ids, pv_y, cfg.edit.weight_mode)

    lim = cfg.eval.fpr_limit
    with_fe = det.evaluate(ds.test, test_ids, ds.test_labels, ds.test_masks, tau, EditConfig(K, cfg.edit.weight_mode), lim)
    without = det.evaluate(ds.test, test_ids, ds.test_labels, ds.test_masks, tau, None, lim)
    seconds = time.perf_counter() - t0
    # analysis only, kept out of the pipeline timing
    test_tau = {}
    if test_tau_sweep:
        for t in cfg.tune.tau_values:
            test_tau[t] = auroc(det.image_scores(ds.test, test_ids, t, None), ds.test_labels)
    return BenchmarkResult(
        tau, K, tau_scores, k_scores, with_fe, without, test_tau, losses, seconds
    )
