from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import Var, param

# defaults of the reference training recipe
PAPER_LR = 1e-4
PAPER_WEIGHT_DECAY = 1e-4


@dataclass
class ParameterSet:
    """Named trainable tensors plus AdamW moment estimates."""

    params: dict[str, Var] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    def add(self, name: str, value) -> Var:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        p = param(value, np.asarray(value).dtype if np.asarray(value).dtype == np.float32 else np.float64)
        self.params[name] = p
        self.m[name] = np.zeros_like(p.value)
        self.v[name] = np.zeros_like(p.value)
        return p

    def __getitem__(self, name: str) -> Var:
        return self.params[name]

    def names(self):
        return list(self.params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {
            k: (p.grad if p.grad is not None else np.zeros_like(p.value))
            for k, p in self.params.items()
        }

    def values(self) -> dict[str, np.ndarray]:
        return {k: p.value for k, p in self.params.items()}

    def count(self) -> int:
        return sum(p.value.size for p in self.params.values())


def adamw_step(
    params: ParameterSet,
    grads: dict[str, np.ndarray],
    lr: float = PAPER_LR,
    weight_decay: float = PAPER_WEIGHT_DECAY,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> ParameterSet:
    """One AdamW update with decoupled weight decay, applied in place."""
    params.step += 1
    bc1 = 1.0 - beta1**params.step
    bc2 = 1.0 - beta2**params.step
    for name, p in params.params.items():
        g = grads[name]
        if g.shape != p.value.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.value.shape}")
        m = params.m[name] = beta1 * params.m[name] + (1 - beta1) * g
        v = params.v[name] = beta2 * params.v[name] + (1 - beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        p.value = (p.value - lr * (update + weight_decay * p.value)).astype(p.value.dtype)
    return params
