"""Splitting-method sparsifiers and their proximal operators.

Three algorithms update a pair (w, u) of weights and auxiliary sparse
variables every mini-batch:

  rvsm   w step:  w' = w - eta*g - eta*beta*(w - u)
         u step:  u' = hard_threshold(w', sqrt(2*lam/beta))
  rgsm   as rvsm but the loss gradient is augmented with lam2 times the
         group-lasso subgradient, and u is updated per group by the
         group-lasso (or group-l0) prox with parameter lam1
  admm   w' = w - eta*(g + z + beta*(w - u));
         u' = soft_threshold(w' + z/beta, lam/beta);
         z' = z + beta*(w' - u')

The relaxed objective value f(w) + lam*||u||_0 + (beta/2)*||w - u||^2 is
appended to a history whenever the caller supplies the loss value, which
makes the monotone-descent guarantee (step size below 2/(beta + L))
checkable at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DimensionError, EstimationError, ParameterError
from .groups import GroupView

__all__ = [
    "PrunerState",
    "hard_threshold",
    "soft_threshold",
    "prox_group_lasso",
    "prox_group_l0",
    "group_lasso_penalty",
    "group_l0_penalty",
    "l0_penalty",
    "init_pruner_state",
    "rvsm_step",
    "rgsm_step",
    "admm_step",
    "sgd_step",
    "lagrangian_value",
    "lipschitz_estimate",
    "finalize_epoch",
]

ALGORITHMS = ("none", "rvsm", "rgsm", "admm")
PROX_KINDS = ("group_lasso", "group_l0")


# ---------------------------------------------------------------------------
# proximal operators and penalties


def hard_threshold(w: np.ndarray, a: float) -> np.ndarray:
    """Keep entries with |w_i| > a, zero the rest (ties are killed).

    With a = sqrt(2*lam/beta) this is the exact coordinate-wise minimizer
    of lam*1{u != 0} + (beta/2)*(w - u)^2.
    """
    if a < 0:
        raise ParameterError(f"threshold must be >= 0, got {a}")
    w = np.asarray(w, dtype=np.float64)
    if np.isinf(a):
        return np.zeros_like(w)
    return np.where(np.abs(w) > a, w, 0.0)


def soft_threshold(w: np.ndarray, t: float) -> np.ndarray:
    """Shrink each entry toward zero by t; the prox of t*||.||_1."""
    if t < 0:
        raise ParameterError(f"threshold must be >= 0, got {t}")
    w = np.asarray(w, dtype=np.float64)
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def _group_values(g) -> np.ndarray:
    return g.values if isinstance(g, GroupView) else np.asarray(g, dtype=np.float64)


def prox_group_lasso(g, lam: float) -> np.ndarray:
    """Scale the group toward zero by lam in l2 norm; kill it at or below lam.

    Exact minimizer of lam*||u||_2 + 0.5*||u - g||^2.
    """
    if lam < 0:
        raise ParameterError(f"group shrinkage must be >= 0, got {lam}")
    v = _group_values(g)
    norm = float(np.linalg.norm(v))
    if norm <= lam:
        return np.zeros_like(v)
    return v * (1.0 - lam / norm)


def prox_group_l0(g, lam: float) -> np.ndarray:
    """Zero the whole group when ||g||_2 <= sqrt(2*lam), else keep it.

    Exact minimizer of lam*1{u != 0} + 0.5*||u - g||^2, ties toward zero.
    """
    if lam < 0:
        raise ParameterError(f"group penalty must be >= 0, got {lam}")
    v = _group_values(g)
    if float(np.linalg.norm(v)) <= np.sqrt(2.0 * lam):
        return np.zeros_like(v)
    return v.copy()


def _check_partition(w: dict[str, np.ndarray], groups: list[GroupView]):
    seen: dict[str, set[int]] = {}
    sizes: dict[str, int] = {}
    for g in groups:
        if g.param_id not in w:
            raise ContractError(f"group references unknown parameter {g.param_id!r}")
        rows = seen.setdefault(g.param_id, set())
        if g.index in rows:
            raise ContractError(f"overlapping groups: {g.param_id!r} row {g.index}")
        rows.add(g.index)
        sizes[g.param_id] = sizes.get(g.param_id, 0) + g.values.size
    for pid, rows in seen.items():
        if rows != set(range(len(rows))) or sizes[pid] != w[pid].size:
            raise ContractError(f"groups do not partition parameter {pid!r}")


def group_lasso_penalty(w: dict[str, np.ndarray], groups: list[GroupView]) -> float:
    """Sum of per-group l2 norms."""
    _check_partition(w, groups)
    return float(sum(np.linalg.norm(g.values) for g in groups))


def group_l0_penalty(w: dict[str, np.ndarray], groups: list[GroupView]) -> float:
    """Number of groups with nonzero l2 norm (exact-zero test)."""
    _check_partition(w, groups)
    return float(sum(1 for g in groups if np.linalg.norm(g.values) != 0.0))


def l0_penalty(w) -> float:
    """Number of exactly nonzero coordinates."""
    if isinstance(w, dict):
        return float(sum(int(np.count_nonzero(a)) for a in w.values()))
    return float(np.count_nonzero(np.asarray(w)))


# ---------------------------------------------------------------------------
# pruner state and steps


@dataclass
class PrunerState:
    """Paired (w, u) variables plus hyperparameters and the descent history.

    ``w`` aliases the live training parameters; ``u`` is always the image
    of the algorithm's proximal map applied to its reference point, and
    ``z`` is the dual variable (admm only, else None).
    """

    algorithm: str
    w: dict[str, np.ndarray]
    u: dict[str, np.ndarray]
    z: dict[str, np.ndarray] | None
    beta: float
    lam: float
    lam1: float
    lam2: float
    eta: float
    prox: str = "group_lasso"
    grouping: dict[str, tuple[str, int]] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)
    # admm only: the point w' + z_old/beta the last u-update thresholded,
    # kept so consistency is re-checkable bit-exactly.
    admm_ref: dict[str, np.ndarray] | None = None

    def rvsm_cutoff(self) -> float:
        if self.beta > 0:
            return float(np.sqrt(2.0 * self.lam / self.beta))
        return 0.0 if self.lam == 0.0 else np.inf

    def _group_prox(self, arr: np.ndarray) -> np.ndarray:
        fn = prox_group_lasso if self.prox == "group_lasso" else prox_group_l0
        rows = arr.reshape(arr.shape[0], -1)
        out = np.empty_like(rows)
        for i in range(rows.shape[0]):
            out[i] = fn(rows[i], self.lam1)
        return out.reshape(arr.shape)

    def prox_image(self, pid: str) -> np.ndarray:
        """The u value the algorithm's prox assigns for the current reference."""
        w = self.w[pid]
        if self.algorithm == "rvsm":
            return hard_threshold(w, self.rvsm_cutoff())
        if self.algorithm == "rgsm":
            return self._group_prox(w) if pid in self.grouping else w.copy()
        if self.algorithm == "admm":
            return soft_threshold(self.admm_ref[pid], self.lam / self.beta)
        return w.copy()

    def max_consistency_gap(self) -> float:
        """Largest deviation of u from the prox image of the reference weights."""
        return max(float(np.max(np.abs(self.u[pid] - self.prox_image(pid)))) for pid in self.w)


def init_pruner_state(
    model_or_params,
    algorithm: str,
    beta: float = 0.0,
    lam: float = 0.0,
    lam1: float = 0.0,
    lam2: float = 0.0,
    eta: float = 0.1,
    prox: str = "group_lasso",
) -> PrunerState:
    """Wrap live parameters in a PrunerState with u initialized to prox(w)."""
    if algorithm not in ALGORITHMS:
        raise ParameterError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")
    if prox not in PROX_KINDS:
        raise ParameterError(f"unknown prox {prox!r}; choose from {PROX_KINDS}")
    if min(beta, lam, lam1, lam2) < 0:
        raise ParameterError("beta, lam, lam1, lam2 must all be >= 0")
    if eta <= 0:
        raise ParameterError(f"step size eta must be > 0, got {eta}")
    if algorithm == "admm" and beta == 0:
        raise ParameterError("admm requires beta > 0 (dual update divides by beta)")
    if isinstance(model_or_params, dict):
        params, grouping = model_or_params, {}
    else:
        params, grouping = model_or_params.params, model_or_params.grouping()
    z = {pid: np.zeros_like(arr) for pid, arr in params.items()} if algorithm == "admm" else None
    state = PrunerState(algorithm, params, {}, z, beta, lam, lam1, lam2, eta, prox, grouping)
    if algorithm == "admm":
        state.admm_ref = {pid: arr + z[pid] / beta for pid, arr in params.items()}
    state.u = {pid: state.prox_image(pid) for pid in params}
    return state


def _gather_grads(state: PrunerState, grads) -> dict[str, np.ndarray]:
    out = {}
    for pid in state.w:
        if pid not in grads:
            raise ContractError(f"gradient map is missing prunable parameter {pid!r}")
        g = grads[pid]
        out[pid] = g.data if hasattr(g, "data") and not isinstance(g, np.ndarray) else np.asarray(g)
    return out


def _monitor(state: PrunerState, f_val):
    if f_val is None:
        return
    if state.algorithm == "rgsm":
        value = lagrangian_value(
            f_val, state.w, state.u, state.lam1, state.beta, "group", grouping=state.grouping
        )
    else:
        value = lagrangian_value(f_val, state.w, state.u, state.lam, state.beta, "l0")
    state.history.append(value)


def rvsm_step(state: PrunerState, grads, f_val: float | None = None) -> PrunerState:
    """One coupled gradient step on w and hard-threshold refresh of u."""
    if state.algorithm != "rvsm":
        raise ContractError(f"rvsm_step on a state tagged {state.algorithm!r}")
    g = _gather_grads(state, grads)
    _monitor(state, f_val)
    eta, beta = state.eta, state.beta
    cutoff = state.rvsm_cutoff()
    for pid, w in state.w.items():
        w_new = w - eta * g[pid] - eta * beta * (w - state.u[pid])
        state.w[pid] = w_new
        state.u[pid] = hard_threshold(w_new, cutoff)
    return state


def rgsm_step(state: PrunerState, grads, f_val: float | None = None) -> PrunerState:
    """rvsm-style step on the group-lasso-augmented objective.

    The effective gradient adds lam2 * w_g/||w_g|| per group (zero for dead
    groups, keeping them dead); u is refreshed per group by the configured
    prox with parameter lam1. Ungrouped parameters (biases) copy w into u.
    """
    if state.algorithm != "rgsm":
        raise ContractError(f"rgsm_step on a state tagged {state.algorithm!r}")
    g = _gather_grads(state, grads)
    _monitor(state, f_val)
    eta, beta, lam2 = state.eta, state.beta, state.lam2
    for pid, w in state.w.items():
        eff = g[pid]
        if lam2 > 0 and pid in state.grouping:
            rows = w.reshape(w.shape[0], -1)
            norms = np.linalg.norm(rows, axis=1, keepdims=True)
            subgrad = np.divide(rows, norms, out=np.zeros_like(rows), where=norms > 0)
            eff = eff + lam2 * subgrad.reshape(w.shape)
        w_new = w - eta * eff - eta * beta * (w - state.u[pid])
        state.w[pid] = w_new
        state.u[pid] = state._group_prox(w_new) if pid in state.grouping else w_new.copy()
    return state


def admm_step(state: PrunerState, grads, f_val: float | None = None) -> PrunerState:
    """Gradient step on the augmented Lagrangian, l1 prox on u, dual ascent on z."""
    if state.algorithm != "admm":
        raise ContractError(f"admm_step on a state tagged {state.algorithm!r}")
    if state.beta == 0:
        raise ParameterError("admm requires beta > 0")
    g = _gather_grads(state, grads)
    if f_val is not None:
        gap = sum(float(np.sum((state.w[p] - state.u[p]) ** 2)) for p in state.w)
        dual = sum(float(np.sum(state.z[p] * (state.w[p] - state.u[p]))) for p in state.w)
        l1 = sum(float(np.sum(np.abs(a))) for a in state.u.values())
        state.history.append(float(f_val) + state.lam * l1 + dual + 0.5 * state.beta * gap)
    eta, beta, lam = state.eta, state.beta, state.lam
    for pid, w in state.w.items():
        z, u = state.z[pid], state.u[pid]
        w_new = w - eta * (g[pid] + z + beta * (w - u))
        ref = w_new + z / beta
        u_new = soft_threshold(ref, lam / beta)
        state.z[pid] = z + beta * (w_new - u_new)
        state.w[pid] = w_new
        state.u[pid] = u_new
        state.admm_ref[pid] = ref
    return state


def sgd_step(state: PrunerState, grads, f_val: float | None = None) -> PrunerState:
    """Plain gradient descent for the 'none' algorithm; u mirrors w."""
    if state.algorithm != "none":
        raise ContractError(f"sgd_step on a state tagged {state.algorithm!r}")
    g = _gather_grads(state, grads)
    if f_val is not None:
        state.history.append(float(f_val))
    for pid, w in state.w.items():
        w_new = w - state.eta * g[pid]
        state.w[pid] = w_new
        state.u[pid] = w_new.copy()
    return state


def pruner_step(state: PrunerState, grads, f_val: float | None = None) -> PrunerState:
    """Dispatch to the step routine matching the state's algorithm tag."""
    fn = {"rvsm": rvsm_step, "rgsm": rgsm_step, "admm": admm_step, "none": sgd_step}[state.algorithm]
    return fn(state, grads, f_val)


# ---------------------------------------------------------------------------
# monitoring


def _coupling(w, u) -> float:
    total = 0.0
    for pid, wv in w.items():
        uv = u[pid]
        if wv.shape != uv.shape:
            raise DimensionError(f"w and u disagree on {pid!r}: {wv.shape} vs {uv.shape}")
        total += float(np.sum((wv - uv) ** 2))
    return total


def lagrangian_value(
    f_val: float,
    w: dict[str, np.ndarray],
    u: dict[str, np.ndarray],
    lam: float,
    beta: float,
    kind: str = "l0",
    grouping: dict[str, tuple[str, int]] | None = None,
) -> float:
    """Relaxed objective f + penalty(u) + (beta/2)*||w - u||^2.

    kind="l0" uses lam*||u||_0; kind="group" uses lam times the sum of
    per-group norms of u over the supplied grouping.
    """
    if set(w) != set(u):
        raise DimensionError("w and u must hold the same parameter ids")
    coupling = _coupling(w, u)
    if kind == "l0":
        penalty = lam * l0_penalty(u)
    elif kind == "group":
        if grouping is None:
            raise ContractError("group penalty needs a grouping")
        penalty = 0.0
        for pid, (_, count) in grouping.items():
            rows = u[pid].reshape(count, -1)
            penalty += float(np.linalg.norm(rows, axis=1).sum())
        penalty *= lam
    else:
        raise ParameterError(f"unknown penalty kind {kind!r}")
    return float(f_val) + penalty + 0.5 * beta * coupling


def lipschitz_estimate(
    grad_fn, w: np.ndarray, n_probes: int = 50, radius: float = 0.1, rng=None
) -> float:
    """Lower bound on the local gradient Lipschitz constant around w.

    Samples pairs of points inside the radius and maximizes the gradient
    difference ratio. The estimate can only undershoot the true constant.
    """
    if n_probes < 1:
        raise ParameterError(f"need at least one probe, got {n_probes}")
    if radius <= 0:
        raise ParameterError(f"probe radius must be > 0, got {radius}")
    rng = rng or np.random.default_rng(0)
    w = np.asarray(w, dtype=np.float64)
    best = None
    for _ in range(n_probes):
        a = w + rng.uniform(-radius, radius, size=w.shape)
        b = w + rng.uniform(-radius, radius, size=w.shape)
        dist = float(np.linalg.norm((a - b).ravel()))
        if dist < 1e-12:
            continue
        ratio = float(np.linalg.norm((grad_fn(a) - grad_fn(b)).ravel())) / dist
        best = ratio if best is None else max(best, ratio)
    if best is None:
        raise EstimationError("all probe pairs were degenerate; increase radius or probes")
    return best


def finalize_epoch(state: PrunerState, model):
    """Evaluation copy of the model with parameters replaced by u.

    Training continues from w; validation, sparsity, and robust accuracy are
    all computed on the returned model.
    """
    return model.clone_with_params(state.u)
