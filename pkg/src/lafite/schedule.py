"""Noise schedules and the closed-form diffusion coefficients."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step coefficients, indexed 0..T.

    Index 0 is the identity anchor: ``alpha_bar[0] == 1`` and
    ``beta[0] == 0``; real steps live at ``1..T``.
    """

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    eta: float = 0.0

    def with_eta(self, eta: float) -> "NoiseSchedule":
        if eta < 0:
            raise ValueError("eta must be nonnegative")
        return replace(self, eta=float(eta))

    def check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"t={t} outside [1, {self.T}]")


def cosine_schedule(T: int, eta: float = 0.0, s: float = COSINE_OFFSET) -> NoiseSchedule:
    """Cosine schedule: ``alpha_bar(t) = f(t)/f(0)``, ``f(t) = cos^2((t/T+s)/(1+s) * pi/2)``.

    ``beta_t`` is derived from consecutive ratios and clipped at 0.999, and
    ``alpha_bar`` is then rebuilt as the running product of ``1 - beta`` so the
    two arrays stay consistent.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos(((t / T + s) / (1 + s)) * math.pi / 2) ** 2
    ab = f / f[0]
    beta = np.zeros(T + 1)
    beta[1:] = np.minimum(1.0 - ab[1:] / ab[:-1], MAX_BETA)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    return NoiseSchedule(T, beta, alpha, alpha_bar, float(eta))


def sigma(sched: NoiseSchedule, t: int, dt: int) -> float:
    """DDIM noise scale for the jump ``t -> t - dt``."""
    sched.check_t(t)
    if not 1 <= dt <= t:
        raise ValueError(f"dt={dt} must satisfy 1 <= dt <= t={t}")
    if sched.eta == 0:
        return 0.0
    ab_t = sched.alpha_bar[t]
    ab_p = sched.alpha_bar[t - dt]
    return float(sched.eta * math.sqrt((1 - ab_p) / (1 - ab_t)) * math.sqrt(1 - ab_t / ab_p))
