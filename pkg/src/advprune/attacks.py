"""Gradient-based untargeted l-infinity attacks: FGSM and iterated FGSM.

Both attacks maximize the classification loss of the true label within an
eps ball around the original input, intersected with the coordinate clamp
range. The iterated variant optionally starts from a uniform random point
of the ball (the usual PGD initialization, re-drawn per batch).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ParameterError
from .models import INPUT_GRAD_KEY, Model, apply_on_tape

__all__ = ["AttackSpec", "fgsm", "ifgsm", "perturb"]

_FAMILIES = ("none", "fgsm", "ifgsm")


@dataclass(frozen=True)
class AttackSpec:
    """Attack family plus its l-infinity budget and schedule.

    eps is the radius, alpha the per-step size, steps the iteration count
    (ifgsm only), clamp the admissible per-coordinate range of inputs.
    """

    family: str = "none"
    eps: float = 0.0
    alpha: float = 0.0
    steps: int = 1
    random_init: bool = False
    clamp: tuple[float, float] = (0.0, 1.0)

    def validate(self) -> "AttackSpec":
        if self.family not in _FAMILIES:
            raise ParameterError(f"unknown attack family {self.family!r}; choose from {_FAMILIES}")
        if self.eps < 0:
            raise ParameterError(f"attack radius eps must be >= 0, got {self.eps}")
        if self.alpha < 0:
            raise ParameterError(f"attack step alpha must be >= 0, got {self.alpha}")
        if self.family == "ifgsm" and self.steps < 1:
            raise ParameterError(f"ifgsm needs at least 1 step, got {self.steps}")
        if not self.clamp[0] < self.clamp[1]:
            raise ParameterError(f"clamp range must satisfy lo < hi, got {self.clamp}")
        return self


def _project_ball(adv: np.ndarray, x: np.ndarray, eps: float) -> np.ndarray:
    """Project onto {z : max|z - x| <= eps}, exact in float arithmetic.

    np.clip against x +- eps can overshoot by an ulp because x + eps rounds;
    offending coordinates are nudged back toward x until the recomputed
    difference is contained.
    """
    adv = np.clip(adv, x - eps, x + eps)
    over = np.abs(adv - x) > eps
    while np.any(over):
        adv = np.where(over, np.nextafter(adv, x), adv)
        over = np.abs(adv - x) > eps
    return adv


def input_gradient(model: Model, x: np.ndarray, labels, rng=None, stochastic: bool = False):
    """Gradient of the mean cross-entropy loss with respect to the input batch."""
    tape = T.Tape()
    xv = tape.variable(x, INPUT_GRAD_KEY)
    logits = apply_on_tape(model, xv, rng=rng, stochastic=stochastic)
    loss = T.softmax_cross_entropy(logits, labels)
    grads = T.backward(loss)
    return grads[INPUT_GRAD_KEY].data


def fgsm(model: Model, x, labels, spec: AttackSpec, rng=None, stochastic: bool = False) -> np.ndarray:
    """Single signed-gradient step of size eps, then clamp.

    sign(0) is 0, so a zero radius or a flat loss returns the input
    bit-exactly.
    """
    spec.validate()
    x = np.asarray(x, dtype=np.float64)
    if spec.eps == 0.0:
        return x.copy()
    g = input_gradient(model, x, labels, rng=rng, stochastic=stochastic)
    adv = _project_ball(x + spec.eps * np.sign(g), x, spec.eps)
    return np.clip(adv, spec.clamp[0], spec.clamp[1])


def ifgsm(model: Model, x, labels, spec: AttackSpec, rng=None, stochastic: bool = False) -> np.ndarray:
    """Iterated FGSM with projection onto the eps ball around the original x.

    Each of the ``steps`` iterations moves by alpha along the loss gradient
    sign and re-projects onto the intersection of the l-infinity ball and
    the clamp range. With random_init the start point is drawn uniformly
    from the ball (then clamped).
    """
    spec.validate()
    if spec.steps < 1:
        raise ParameterError(f"ifgsm needs at least 1 step, got {spec.steps}")
    x = np.asarray(x, dtype=np.float64)
    if spec.eps == 0.0:
        return x.copy()
    lo, hi = spec.clamp
    adv = x
    if spec.random_init:
        if rng is None:
            raise ParameterError("random_init requires an rng")
        adv = _project_ball(x + rng.uniform(-spec.eps, spec.eps, size=x.shape), x, spec.eps)
        adv = np.clip(adv, lo, hi)
    for _ in range(spec.steps):
        g = input_gradient(model, adv, labels, rng=rng, stochastic=stochastic)
        adv = _project_ball(adv + spec.alpha * np.sign(g), x, spec.eps)
        adv = np.clip(adv, lo, hi)
    return adv


def perturb(model: Model, x, labels, spec: AttackSpec, rng=None, stochastic: bool = False) -> np.ndarray:
    """Dispatch on the attack family; family 'none' is the identity map."""
    spec.validate()
    if spec.family == "none":
        return np.asarray(x, dtype=np.float64).copy()
    if spec.family == "fgsm":
        return fgsm(model, x, labels, spec, rng=rng, stochastic=stochastic)
    return ifgsm(model, x, labels, spec, rng=rng, stochastic=stochastic)
