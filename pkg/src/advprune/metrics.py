"""Reporting metrics over finalized models.

Sparsity counts exact zeros (|w| <= 1e-15) over every prunable coordinate;
channel sparsity counts groups whose l2 norm falls below the same cutoff.
Accuracies are argmax match rates after applying an attack per example with
the ground-truth label; all metric functions are pure given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attacks import AttackSpec, perturb
from .errors import ContractError, ParameterError
from .models import Model, forward
from .seeding import derive_seed

__all__ = [
    "ZERO_TOLERANCE",
    "MetricsRecord",
    "Histogram",
    "sparsity",
    "channel_sparsity",
    "accuracy",
    "weight_histogram",
    "small_weight_fraction",
]

ZERO_TOLERANCE = 1e-15


@dataclass(frozen=True)
class MetricsRecord:
    """One epoch's results row (percentages in [0, 100])."""

    epoch: int
    a1: float
    a2: float
    a3: float
    sparsity: float
    channel_sparsity: float
    lagrangian: float
    wall_seconds: float

    def __post_init__(self):
        for name in ("a1", "a2", "a3", "sparsity", "channel_sparsity"):
            v = getattr(self, name)
            if np.isfinite(v) and not 0.0 <= v <= 100.0:
                raise ParameterError(f"{name} must be a percentage in [0, 100], got {v}")


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray


def sparsity(model: Model) -> float:
    """Percentage of prunable coordinates that are (numerically) zero."""
    zero = 0
    total = 0
    for arr in model.params.values():
        zero += int(np.count_nonzero(np.abs(arr) <= ZERO_TOLERANCE))
        total += arr.size
    return 100.0 * zero / total


def channel_sparsity(model: Model) -> float:
    """Percentage of groups whose l2 norm is below the zero cutoff."""
    views = model.group_views()
    if not views:
        raise ContractError("model has no group labels")
    dead = sum(1 for v in views if v.norm() < ZERO_TOLERANCE)
    return 100.0 * dead / len(views)


def accuracy(
    model: Model,
    dataset,
    spec: AttackSpec = AttackSpec(),
    seed: int = 0,
    epoch: int = 0,
    batch_size: int = 64,
) -> float:
    """Argmax match rate after attacking each example with its true label.

    Attacks are re-seeded deterministically from (seed, epoch, batch), so
    repeated calls on the same model agree bit-exactly.
    """
    n = len(dataset.labels)
    if n < 1:
        raise ParameterError("dataset is empty")
    correct = 0
    for start in range(0, n, batch_size):
        x = dataset.inputs[start : start + batch_size]
        y = dataset.labels[start : start + batch_size]
        rng = np.random.default_rng(derive_seed(seed, "eval-attack", epoch, start // batch_size))
        adv = perturb(model, x, y, spec, rng=rng, stochastic=False)
        preds = forward(model, adv, "eval").data.argmax(axis=1)
        correct += int((preds == y).sum())
    return 100.0 * correct / n


def _all_weights(model: Model) -> np.ndarray:
    return np.concatenate([arr.ravel() for arr in model.params.values()])


def weight_histogram(model: Model, bin_edges) -> Histogram:
    """Counts of prunable coordinates per bin; edges must strictly increase."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ParameterError("bin edges must be a strictly increasing vector")
    counts, _ = np.histogram(_all_weights(model), bins=edges)
    return Histogram(edges=edges, counts=counts)


def small_weight_fraction(model: Model, cutoff: float) -> float:
    """Percentage of prunable coordinates with |w| < cutoff."""
    if cutoff < 0:
        raise ParameterError(f"cutoff must be >= 0, got {cutoff}")
    w = _all_weights(model)
    return 100.0 * float((np.abs(w) < cutoff).mean())
