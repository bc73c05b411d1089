"""Two-stage selection of the corruption step and neighbour count on a
pseudo validation set."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .membank import EditConfig
from .metrics import auroc

# (tau, K) reported for the full-scale benchmarks with T = 1000
REPORTED_SELECTIONS = {"mvtec_ad": (970, 3), "mpdd": (860, 3)}


@dataclass(frozen=True)
class TuneGrid:
    tau_values: tuple[int, ...]
    k_values: tuple[int, ...] = (1, 3, 5)

    def validate(self, T: int | None = None) -> None:
        if not self.tau_values or not self.k_values:
            raise ValueError("tuning grids must be non-empty")
        if T is not None and max(self.tau_values) > T:
            raise ValueError(f"tau grid exceeds T={T}")
        if min(self.tau_values) < 1 or min(self.k_values) < 1:
            raise ValueError("grid values must be >= 1")


def sweep(values: Iterable[int], evaluate: Callable[[int], float]) -> dict[int, float]:
    return {int(v): float(evaluate(int(v))) for v in values}


def best_of(scores: dict[int, float]) -> int:
    """Argmax of a sweep; ties go to the smallest key."""
    top = max(scores.values())
    return min(k for k, v in scores.items() if v == top)


def select_tau(
    tau_values: Sequence[int],
    detector,
    tensors,
    ids: Sequence[str],
    labels,
) -> tuple[int, dict[int, float]]:
    """Pick the corruption step with the best detection AUROC, editing disabled."""
    labels = np.asarray(labels)

    def evaluate(tau):
        return auroc(detector.image_scores(tensors, ids, tau, None), labels)

    scores = sweep(tau_values, evaluate)
    return best_of(scores), scores


def select_k(
    k_values: Sequence[int],
    tau: int,
    detector,
    tensors,
    ids: Sequence[str],
    labels,
    weight_mode: str = "normalized",
) -> tuple[int, dict[int, float]]:
    """With ``tau`` fixed, pick the neighbour count for feature editing."""
    labels = np.asarray(labels)

    def evaluate(k):
        return auroc(detector.image_scores(tensors, ids, tau, EditConfig(k, weight_mode)), labels)

    scores = sweep(k_values, evaluate)
    return best_of(scores), scores


def format_sweep(name: str, scores: dict[int, float]) -> str:
    lines = [f"{name}\tpseudo_val_auroc"]
    lines += [f"{k}\t{v:.4f}" for k, v in scores.items()]
    return "\n".join(lines) + "\n"


def write_sweep(path, name: str, scores: dict[int, float]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(format_sweep(name, scores), encoding="utf-8")
