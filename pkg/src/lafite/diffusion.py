"""Forward corruption, DDIM sampling and partial-noise reconstruction.

All functions accept a single tensor ``[h, w, c]`` or a batch with any
leading axes; coefficients are evaluated in float64 and results returned as
float32.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .autodiff import engine as ad
from .autodiff.denoisers import Denoiser, NetworkDenoiser
from .autodiff.optim import adamw_step
from .schedule import NoiseSchedule, sigma

X0_SQRT = "sqrt"
X0_AS_PRINTED = "as_printed"


class NumericDomainError(ArithmeticError):
    pass


@dataclass(frozen=True)
class ReconstructConfig:
    tau: int
    dt: int | None = None  # default: ceil(tau / 20)
    eta: float = 0.0
    x0_denominator: str = X0_SQRT

    def __post_init__(self):
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.dt is not None and not 1 <= self.dt <= self.tau:
            raise ValueError(f"dt={self.dt} must satisfy 1 <= dt <= tau={self.tau}")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.x0_denominator not in (X0_SQRT, X0_AS_PRINTED):
            raise ValueError(f"x0_denominator must be {X0_SQRT!r} or {X0_AS_PRINTED!r}")

    @property
    def stride(self) -> int:
        return self.dt if self.dt is not None else math.ceil(self.tau / 20)

    def check(self, sched: NoiseSchedule) -> None:
        if self.tau > sched.T:
            raise ValueError(f"tau={self.tau} exceeds T={sched.T}")


def _f64(x):
    return np.asarray(x, dtype=np.float64)


def forward_step(x_prev, t: int, sched: NoiseSchedule, rng: np.random.Generator, noise=None):
    """Sample ``x_t ~ N(sqrt(1 - beta_t) x_{t-1}, beta_t I)``."""
    sched.check_t(t)
    x = _f64(x_prev)
    if noise is None:
        noise = rng.standard_normal(x.shape)
    b = sched.beta[t]
    return (math.sqrt(1 - b) * x + math.sqrt(b) * _f64(noise)).astype(np.float32)


def _ab(sched, t, ndim):
    """alpha_bar at scalar t, or per leading-axis element for array t."""
    t = np.asarray(t)
    if t.ndim == 0:
        return sched.alpha_bar[int(t)]
    return sched.alpha_bar[t].reshape((-1,) + (1,) * (ndim - 1))


def corrupt(x0, t, eps, sched: NoiseSchedule):
    """``sqrt(ab_t) x0 + sqrt(1 - ab_t) eps``; ``t`` may be one value per batch element."""
    x0, eps = _f64(x0), _f64(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"shape mismatch: {x0.shape} vs {eps.shape}")
    ab = _ab(sched, t, x0.ndim)
    return (np.sqrt(ab) * x0 + np.sqrt(1 - ab) * eps).astype(np.float32)


def training_loss(denoiser: Denoiser, x0, t: int, eps, sched: NoiseSchedule) -> float:
    """Squared L2 error of the noise prediction at step ``t``."""
    x_t = corrupt(x0, t, eps, sched)
    d = _f64(eps) - _f64(denoiser.predict_eps(x_t, t))
    return float((d * d).sum())


def posterior_mean(x_t, t: int, denoiser: Denoiser, sched: NoiseSchedule):
    """``(1/alpha_t) (x_t - beta_t / sqrt(1 - ab_t) * eps_theta)``."""
    sched.check_t(t)
    e = _f64(denoiser.predict_eps(x_t, t))
    a, b, ab = sched.alpha[t], sched.beta[t], sched.alpha_bar[t]
    return ((_f64(x_t) - b / math.sqrt(1 - ab) * e) / a).astype(np.float32)


def ddim_step(
    x_t,
    t: int,
    dt: int,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    x0_denominator: str = X0_SQRT,
    eps_pred=None,
):
    """One DDIM jump ``t -> t - dt``.

    ``x0_denominator="as_printed"`` divides the clean-sample estimate by
    ``alpha_bar_t``; ``"sqrt"`` uses ``sqrt(alpha_bar_t)``.
    """
    if x0_denominator not in (X0_SQRT, X0_AS_PRINTED):
        raise ValueError(f"unknown x0_denominator {x0_denominator!r}")
    s = sigma(sched, t, dt)
    ab_t, ab_p = sched.alpha_bar[t], sched.alpha_bar[t - dt]
    x = _f64(x_t)
    e = _f64(denoiser.predict_eps(x_t, t) if eps_pred is None else eps_pred)
    denom = math.sqrt(ab_t) if x0_denominator == X0_SQRT else ab_t
    x0_hat = (x - math.sqrt(1 - ab_t) * e) / denom
    dir_var = 1 - ab_p - s * s
    if dir_var < 0:
        if dir_var > -1e-12:
            dir_var = 0.0
        else:
            raise NumericDomainError(f"1 - alpha_bar - sigma^2 = {dir_var} < 0 at t={t}, dt={dt}")
    out = math.sqrt(ab_p) * x0_hat + math.sqrt(dir_var) * e
    if s > 0:
        if rng is None:
            raise ValueError("rng required when sigma > 0")
        out = out + s * rng.standard_normal(x.shape)
    return out.astype(np.float32)


def timesteps(tau: int, dt: int) -> list[tuple[int, int]]:
    """``(t, step)`` pairs from ``tau`` down to 0; the last stride is truncated."""
    out, t = [], tau
    while t > 0:
        step = min(dt, t)
        out.append((t, step))
        t -= step
    return out


def reconstruct(
    x_init,
    cfg: ReconstructConfig,
    denoiser: Denoiser,
    sched: NoiseSchedule,
    rng: np.random.Generator | None = None,
    eps=None,
):
    """Noise ``x_init`` to step ``tau`` and run DDIM back to step 0.

    ``x_init`` is either the raw features or their edited version. Pass
    ``eps`` to fix the corruption noise explicitly (e.g. per-sample streams).
    """
    cfg.check(sched)
    sched = sched.with_eta(cfg.eta)
    if eps is None:
        if rng is None:
            raise ValueError("either rng or eps is required")
        eps = rng.standard_normal(np.shape(x_init))
    x = corrupt(x_init, cfg.tau, eps, sched)
    for t, step in timesteps(cfg.tau, cfg.stride):
        x = ddim_step(x, t, step, denoiser, sched, rng, cfg.x0_denominator)
    return x


# --- training ----------------------------------------------------------------


def train_denoiser(
    net: NetworkDenoiser,
    data,
    sched: NoiseSchedule,
    steps: int,
    batch_size: int = 32,
    lr: float = 1e-3,
    weight_decay: float = 1e-4,
    seed: int = 0,
    lr_drop_frac: float = 0.8,
    callback=None,
) -> list[float]:
    """Minimise the noise-prediction loss with AdamW; returns per-step losses.

    Each step draws a batch of examples, one uniform timestep per example in
    ``[1, T]`` and fresh Gaussian noise. The reported loss is the batch mean
    of the per-example squared error. The learning rate drops by 10x after
    ``lr_drop_frac`` of the steps.
    """
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 4:
        raise ValueError(f"expected [n,h,w,c] training data, got {data.shape}")
    n = data.shape[0]
    losses = []
    drop_at = int(lr_drop_frac * steps)
    for step in range(steps):
        g = _rng.stream(seed, "train-step", step)
        idx = g.integers(0, n, size=batch_size)
        ts = g.integers(1, sched.T + 1, size=batch_size)
        eps = g.standard_normal((batch_size,) + data.shape[1:])
        x_t = corrupt(data[idx], ts, eps, sched)
        net.params.zero_grad()
        pred = net.forward(ad.const(x_t, net.dtype), ts)
        loss = ad.scale(ad.sum_squares(ad.sub(ad.const(eps, net.dtype), pred)), 1.0 / batch_size)
        ad.backward(loss)
        cur_lr = lr if step < drop_at else lr * 0.1
        adamw_step(net.params, net.params.grads(), lr=cur_lr, weight_decay=weight_decay)
        losses.append(float(loss.value))
        if callback is not None:
            callback(step, losses[-1])
    return losses


def probability_flow_endpoint(x_tau, tau: int, mu, var: float, sched: NoiseSchedule):
    """Exact deterministic-flow image of ``x_tau`` at step 0 for ``N(mu, var I)`` data.

    The flow keeps the standardised offset ``(x_t - sqrt(ab_t) mu) / s_t`` fixed,
    where ``s_t^2 = ab_t var + 1 - ab_t``.
    """
    ab = sched.alpha_bar[tau]
    mu = _f64(mu)
    s_tau = math.sqrt(ab * var + 1 - ab)
    return mu + math.sqrt(var) * (_f64(x_tau) - math.sqrt(ab) * mu) / s_tau
