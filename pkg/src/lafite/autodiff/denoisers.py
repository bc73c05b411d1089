"""Noise-prediction networks and the closed-form Gaussian oracle.

A denoiser exposes ``predict_eps(x_t, t)``. ``x_t`` is a single feature
tensor ``[h, w, c]`` or a batch ``[n, h, w, c]``; ``t`` is an int or one
int per batch element. The result has the shape of ``x_t``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .. import rng as _rng
from ..schedule import NoiseSchedule
from . import engine as ad
from .optim import ParameterSet


class Denoiser(Protocol):
    T: int

    def predict_eps(self, x_t: np.ndarray, t) -> np.ndarray: ...


def _batch(x_t, t, T):
    x = np.asarray(x_t)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected [h,w,c] or [n,h,w,c], got {x.shape}")
    ts = np.broadcast_to(np.asarray(t, dtype=np.int64), (x.shape[0],))
    if ts.min() < 1 or ts.max() > T:
        raise ValueError(f"timestep outside [1, {T}]")
    return x, ts, single


class AnalyticGaussianDenoiser:
    """Exact ``E[eps | x_t]`` when ``x_0 ~ N(mu, var * I)``."""

    def __init__(self, mu, var: float, sched: NoiseSchedule):
        if var <= 0:
            raise ValueError("var must be positive")
        self.mu = np.asarray(mu, dtype=np.float64)
        self.var = float(var)
        self.sched = sched
        self.T = sched.T

    def posterior_x0(self, x_t, t):
        x, ts, single = _batch(x_t, t, self.T)
        ab = self.sched.alpha_bar[ts].reshape(-1, 1, 1, 1)
        gain = np.sqrt(ab) * self.var / (ab * self.var + 1 - ab)
        x0 = self.mu + gain * (x - np.sqrt(ab) * self.mu)
        return x0[0] if single else x0

    def predict_eps(self, x_t, t):
        x, ts, single = _batch(x_t, t, self.T)
        ab = self.sched.alpha_bar[ts].reshape(-1, 1, 1, 1)
        x0 = self.posterior_x0(x, ts)
        eps = (x - np.sqrt(ab) * x0) / np.sqrt(1 - ab)
        eps = eps.astype(np.float32)
        return eps[0] if single else eps


@dataclass(frozen=True)
class DenoiserConfig:
    architecture: str = "conv_unet"  # or "mlp"
    channels: int = 8  # feature channels in and out
    base_channels: int = 16
    hidden: tuple[int, ...] = (64, 64)  # mlp widths
    temb_dim: int = 32

    def __post_init__(self):
        if self.architecture not in ("mlp", "conv_unet"):
            raise ValueError(f"unknown architecture {self.architecture!r}")
        if min(self.channels, self.base_channels, self.temb_dim, *self.hidden) < 1:
            raise ValueError("denoiser sizes must be positive")


class NetworkDenoiser:
    """Base for trainable denoisers; subclasses define ``_build`` and ``forward``."""

    def __init__(self, cfg: DenoiserConfig, T: int, seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.T = int(T)
        self.dtype = np.dtype(dtype)
        self.params = ParameterSet()
        self._g = _rng.stream(seed, "init", cfg.architecture)
        self._build()
        del self._g

    def _dense(self, name, n_in, n_out, zero=False):
        W = np.zeros((n_in, n_out)) if zero else self._g.normal(0, np.sqrt(1.0 / n_in), (n_in, n_out))
        self.params.add(name + ".W", W.astype(self.dtype))
        self.params.add(name + ".b", np.zeros(n_out, self.dtype))

    def _conv(self, name, n_in, n_out, zero=False):
        shape = (3, 3, n_in, n_out)
        W = np.zeros(shape) if zero else self._g.normal(0, np.sqrt(1.0 / (9 * n_in)), shape)
        self.params.add(name + ".W", W.astype(self.dtype))
        self.params.add(name + ".b", np.zeros(n_out, self.dtype))

    def _aff(self, name, x):
        return ad.affine(x, self.params[name + ".W"], self.params[name + ".b"])

    def _cv(self, name, x):
        return ad.conv3x3(x, self.params[name + ".W"], self.params[name + ".b"])

    def _temb(self, ts):
        e = ad.const(ad.timestep_embedding(ts, self.cfg.temb_dim, self.dtype))
        return ad.silu(self._aff("temb", e))

    def forward(self, x: ad.Var, ts: np.ndarray) -> ad.Var:
        raise NotImplementedError

    def predict_eps(self, x_t, t):
        x, ts, single = _batch(x_t, t, self.T)
        if x.shape[-1] != self.cfg.channels:
            raise ValueError(f"expected {self.cfg.channels} channels, got {x.shape[-1]}")
        out = self.forward(ad.const(x, self.dtype), ts).value.astype(np.float32)
        return out[0] if single else out


class MlpDenoiser(NetworkDenoiser):
    """Per-slice MLP; no spatial context."""

    def _build(self):
        c, hid = self.cfg.channels, self.cfg.hidden
        self._dense("temb", self.cfg.temb_dim, hid[0])
        widths = (c,) + hid
        for i in range(len(hid)):
            self._dense(f"fc{i}", widths[i], widths[i + 1])
        self._dense("out", hid[-1], c, zero=True)

    def forward(self, x, ts):
        temb = self._temb(ts)
        h = ad.silu(ad.add_time(self._aff("fc0", x), temb))
        for i in range(1, len(self.cfg.hidden)):
            h = ad.silu(self._aff(f"fc{i}", h))
        return self._aff("out", h)


class ConvUNetDenoiser(NetworkDenoiser):
    """Two-level U-net with skip connections; spatial dims must be divisible by 4."""

    def _build(self):
        c, b, te = self.cfg.channels, self.cfg.base_channels, self.cfg.temb_dim
        self._dense("temb", te, 2 * b)
        plan = [
            ("e1", c, b),
            ("e2", b, 2 * b),
            ("mid", 2 * b, 2 * b),
            ("u1", 4 * b, 2 * b),
            ("u2", 3 * b, b),
        ]
        for name, n_in, n_out in plan:
            self._conv(name + ".c1", n_in, n_out)
            self._dense(name + ".t", 2 * b, n_out)
            if name in ("e1", "e2", "mid"):
                self._conv(name + ".c2", n_out, n_out)
        self._conv("out", b, c, zero=True)

    def _stage(self, name, h, temb, second=True):
        h = ad.silu(ad.add_time(self._cv(name + ".c1", h), self._aff(name + ".t", temb)))
        if second:
            h = ad.silu(self._cv(name + ".c2", h))
        return h

    def forward(self, x, ts):
        H, W = x.shape[1:3]
        if H % 4 or W % 4:
            raise ValueError(f"conv_unet needs spatial dims divisible by 4, got {H}x{W}")
        temb = self._temb(ts)
        s1 = self._stage("e1", x, temb)
        s2 = self._stage("e2", ad.downsample2(s1), temb)
        h = self._stage("mid", ad.downsample2(s2), temb)
        h = self._stage("u1", ad.concat([ad.upsample2(h), s2]), temb, second=False)
        h = self._stage("u2", ad.concat([ad.upsample2(h), s1]), temb, second=False)
        return self._cv("out", h)


def make_denoiser(cfg: DenoiserConfig, T: int, seed: int = 0, dtype=np.float32) -> NetworkDenoiser:
    cls = MlpDenoiser if cfg.architecture == "mlp" else ConvUNetDenoiser
    return cls(cfg, T, seed, dtype)
