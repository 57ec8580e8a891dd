"""Dense float64 tensors and a reverse-mode automatic differentiation tape.

The op set is deliberately small: exactly what small MLPs, valid-convolution
nets, noise-injected residual ensembles, and gradient-based input attacks
need. Everything is double precision so that descent monitors can be checked
with tight slack.

A ``Tape`` records one forward computation as a DAG of ``TapeNode`` entries
with strictly increasing ids; ``backward`` replays it once in reverse and is
then consumed (no higher-order derivatives). Tensors are immutable and safe
to share across threads; a tape itself is single-threaded.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, ParameterError

__all__ = [
    "Tensor",
    "Tape",
    "TapeNode",
    "Var",
    "matmul",
    "conv2d",
    "relu",
    "tanh",
    "add",
    "sub",
    "mul",
    "scale",
    "transpose",
    "reshape",
    "sum_all",
    "mean_over_batch",
    "softmax_cross_entropy",
    "backward",
]


class Tensor:
    """Immutable dense array of 64-bit reals, C-contiguous (row-major).

    ``data`` exposes the underlying read-only ndarray; ``data.ravel()`` is
    the flat row-major layout. The public constructor always copies.
    """

    __slots__ = ("_data",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64, order="C")
        if arr.size == 0:
            raise DimensionError(f"tensor dimensions must be positive, got shape {arr.shape}")
        arr.setflags(write=False)
        self._data = arr

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        # Internal fast path: takes ownership of arr without copying.
        t = object.__new__(cls)
        arr.setflags(write=False)
        t._data = arr
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def item(self) -> float:
        return float(self._data)

    def tolist(self):
        return self._data.tolist()

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls._wrap(np.zeros(shape, dtype=np.float64))

    @classmethod
    def ones(cls, shape) -> "Tensor":
        return cls._wrap(np.ones(shape, dtype=np.float64))

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


class TapeNode:
    """One recorded operation: op tag, input ids, forward value, adjoint."""

    __slots__ = ("idx", "op", "inputs", "data", "adjoint", "needs_grad", "param_id", "backward_fn")

    def __init__(self, idx, op, inputs, data, needs_grad, param_id=None, backward_fn=None):
        self.idx = idx
        self.op = op
        self.inputs = inputs
        self.data = data
        self.adjoint = None
        self.needs_grad = needs_grad
        self.param_id = param_id
        self.backward_fn = backward_fn

    @property
    def value(self) -> Tensor:
        return Tensor._wrap(self.data)


class Var:
    """Lightweight handle to a node on a tape."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def node(self) -> TapeNode:
        return self.tape.nodes[self.idx]

    @property
    def data(self) -> np.ndarray:
        return self.node.data

    @property
    def tensor(self) -> Tensor:
        return self.node.value

    @property
    def shape(self) -> tuple[int, ...]:
        return self.node.data.shape

    def __repr__(self) -> str:
        return f"Var(idx={self.idx}, shape={self.shape})"


class Tape:
    """Single-use recording of a forward computation."""

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.consumed = False

    def _record(self, op, data, inputs, needs_grad, param_id=None, backward_fn=None) -> Var:
        if self.consumed:
            raise ContractError("tape already consumed by backward; build a new tape")
        data = np.asarray(data, dtype=np.float64)
        node = TapeNode(len(self.nodes), op, tuple(inputs), data, needs_grad, param_id, backward_fn)
        self.nodes.append(node)
        return Var(self, node.idx)

    def variable(self, values, param_id: str) -> Var:
        """A requires-grad leaf; ``backward`` reports its gradient under ``param_id``."""
        arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
        return self._record("variable", arr, (), True, param_id=param_id)

    def constant(self, values) -> Var:
        """A leaf that never receives a gradient."""
        arr = values.data if isinstance(values, Tensor) else np.asarray(values, dtype=np.float64)
        return self._record("constant", arr, (), False)

    def gaussian_noise(self, shape, sigma: float, rng: np.random.Generator) -> Var:
        """Fresh N(0, sigma^2) draw recorded as a constant (no gradient path).

        sigma == 0 yields exact zeros without consuming rng state.
        """
        if sigma < 0:
            raise ParameterError(f"noise std must be >= 0, got {sigma}")
        if sigma == 0.0:
            arr = np.zeros(shape, dtype=np.float64)
        else:
            arr = rng.normal(0.0, sigma, size=shape)
        return self._record("gaussian_noise", arr, (), False)


def _tape_of(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ContractError("operands were recorded on different tapes")
    return tape


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient contributions over axes that numpy broadcasting expanded."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def matmul(a: Var, b: Var) -> Var:
    """Matrix product of two rank-2 tensors."""
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul requires (m,k) x (k,n), got {ad.shape} x {bd.shape}")
    out = ad @ bd
    needs = a.node.needs_grad or b.node.needs_grad

    def backward_fn(g):
        return ((a.idx, g @ bd.T), (b.idx, ad.T @ g))

    return tape._record("matmul", out, (a.idx, b.idx), needs, backward_fn=backward_fn)


def _conv_windows(x4: np.ndarray, kh: int, kw: int) -> np.ndarray:
    # (B, C, H, W) -> (B, C, H', W', kh, kw) without copying
    return sliding_window_view(x4, (kh, kw), axis=(2, 3))


def _conv_forward(x4: np.ndarray, k: np.ndarray) -> np.ndarray:
    win = _conv_windows(x4, k.shape[2], k.shape[3])
    return np.einsum("bcpqij,ocij->bopq", win, k, optimize=True)


def conv2d(x: Var, kernels: Var) -> Var:
    """Valid (no padding) stride-1 cross-correlation.

    ``x`` is (c_in, h, w) for a single example or (b, c_in, h, w) for a
    batch; ``kernels`` is (c_out, c_in, kh, kw).
    """
    tape = _tape_of(x, kernels)
    xd, kd = x.data, kernels.data
    if kd.ndim != 4:
        raise DimensionError(f"kernels must be (c_out, c_in, kh, kw), got {kd.shape}")
    batched = xd.ndim == 4
    if not batched and xd.ndim != 3:
        raise DimensionError(f"input must be (c_in, h, w) or (b, c_in, h, w), got {xd.shape}")
    x4 = xd if batched else xd[np.newaxis]
    if x4.shape[1] != kd.shape[1]:
        raise DimensionError(f"channel mismatch: input {xd.shape} vs kernels {kd.shape}")
    kh, kw = kd.shape[2], kd.shape[3]
    if kh > x4.shape[2] or kw > x4.shape[3]:
        raise DimensionError(f"kernel {kd.shape} larger than input {xd.shape}")
    out4 = _conv_forward(x4, kd)
    out = out4 if batched else out4[0]
    needs = x.node.needs_grad or kernels.node.needs_grad

    def backward_fn(g):
        g4 = g if batched else g[np.newaxis]
        contribs = []
        if kernels.node.needs_grad:
            win = _conv_windows(x4, kh, kw)
            dk = np.einsum("bopq,bcpqij->ocij", g4, win, optimize=True)
            contribs.append((kernels.idx, dk))
        if x.node.needs_grad:
            gp = np.pad(g4, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
            winp = _conv_windows(gp, kh, kw)
            kf = kd[:, :, ::-1, ::-1]
            dx4 = np.einsum("bopqij,ocij->bcpq", winp, kf, optimize=True)
            contribs.append((x.idx, dx4 if batched else dx4[0]))
        return tuple(contribs)

    return tape._record("conv2d", out, (x.idx, kernels.idx), needs, backward_fn=backward_fn)


def relu(x: Var) -> Var:
    """Elementwise max(x, 0); subgradient 0 at the kink."""
    xd = x.data
    out = np.maximum(xd, 0.0)

    def backward_fn(g):
        return ((x.idx, g * (xd > 0.0)),)

    return x.tape._record("relu", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def tanh(x: Var) -> Var:
    """Elementwise hyperbolic tangent."""
    out = np.tanh(x.data)

    def backward_fn(g):
        return ((x.idx, g * (1.0 - out * out)),)

    return x.tape._record("tanh", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def add(a: Var, b: Var) -> Var:
    """Elementwise sum with numpy broadcasting (used for bias terms)."""
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    try:
        out = ad + bd
    except ValueError:
        raise DimensionError(f"add shapes not broadcastable: {ad.shape} vs {bd.shape}") from None
    needs = a.node.needs_grad or b.node.needs_grad

    def backward_fn(g):
        return ((a.idx, _unbroadcast(g, ad.shape)), (b.idx, _unbroadcast(g, bd.shape)))

    return tape._record("add", out, (a.idx, b.idx), needs, backward_fn=backward_fn)


def sub(a: Var, b: Var) -> Var:
    """Elementwise difference with numpy broadcasting."""
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    try:
        out = ad - bd
    except ValueError:
        raise DimensionError(f"sub shapes not broadcastable: {ad.shape} vs {bd.shape}") from None
    needs = a.node.needs_grad or b.node.needs_grad

    def backward_fn(g):
        return ((a.idx, _unbroadcast(g, ad.shape)), (b.idx, _unbroadcast(-g, bd.shape)))

    return tape._record("sub", out, (a.idx, b.idx), needs, backward_fn=backward_fn)


def mul(a: Var, b: Var) -> Var:
    """Elementwise product with numpy broadcasting."""
    tape = _tape_of(a, b)
    ad, bd = a.data, b.data
    try:
        out = ad * bd
    except ValueError:
        raise DimensionError(f"mul shapes not broadcastable: {ad.shape} vs {bd.shape}") from None
    needs = a.node.needs_grad or b.node.needs_grad

    def backward_fn(g):
        return ((a.idx, _unbroadcast(g * bd, ad.shape)), (b.idx, _unbroadcast(g * ad, bd.shape)))

    return tape._record("mul", out, (a.idx, b.idx), needs, backward_fn=backward_fn)


def scale(x: Var, s: float) -> Var:
    """Multiply by a plain scalar constant (not differentiated w.r.t. s)."""
    s = float(s)
    if not np.isfinite(s):
        raise ParameterError(f"scale factor must be finite, got {s}")
    out = x.data * s

    def backward_fn(g):
        return ((x.idx, g * s),)

    return x.tape._record("scale", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def transpose(x: Var) -> Var:
    """Transpose of a rank-2 tensor."""
    if x.data.ndim != 2:
        raise DimensionError(f"transpose requires rank 2, got shape {x.shape}")
    out = x.data.T

    def backward_fn(g):
        return ((x.idx, g.T),)

    return x.tape._record("transpose", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def reshape(x: Var, shape) -> Var:
    """View with a new shape of equal size."""
    shape = tuple(int(d) for d in shape)
    if int(np.prod(shape)) != x.data.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    old = x.data.shape
    out = x.data.reshape(shape)

    def backward_fn(g):
        return ((x.idx, g.reshape(old)),)

    return x.tape._record("reshape", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def sum_all(x: Var) -> Var:
    """Sum of all entries; returns a scalar (shape ()) tensor."""
    shape = x.data.shape
    out = np.asarray(x.data.sum())

    def backward_fn(g):
        return ((x.idx, np.full(shape, float(g))),)

    return x.tape._record("sum_all", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def mean_over_batch(x: Var) -> Var:
    """Mean over the leading (batch) axis."""
    xd = x.data
    if xd.ndim < 1:
        raise DimensionError("mean_over_batch requires at least one axis")
    b = xd.shape[0]
    out = xd.mean(axis=0)

    def backward_fn(g):
        return ((x.idx, np.broadcast_to(g / b, xd.shape).copy()),)

    return x.tape._record("mean_over_batch", out, (x.idx,), x.node.needs_grad, backward_fn=backward_fn)


def softmax_cross_entropy(logits: Var, labels) -> Var:
    """Mean negative log softmax probability of the true class.

    ``logits`` is (batch, classes); ``labels`` is an integer vector. The
    log-sum-exp is stabilized by max subtraction.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise DimensionError(f"logits must be (batch, classes), got {ld.shape}")
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != ld.shape[0]:
        raise DimensionError(f"labels must be a vector of length {ld.shape[0]}, got {y.shape}")
    c = ld.shape[1]
    if y.min() < 0 or y.max() >= c:
        bad = int(y[(y < 0) | (y >= c)][0])
        raise IndexError(f"label {bad} out of range [0, {c})")
    b = ld.shape[0]
    shifted = ld - ld.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1))
    out = np.asarray((logz - shifted[np.arange(b), y]).mean())
    probs = np.exp(shifted - logz[:, np.newaxis])

    def backward_fn(g):
        grad = probs.copy()
        grad[np.arange(b), y] -= 1.0
        return ((logits.idx, grad * (float(g) / b)),)

    return logits.tape._record(
        "softmax_cross_entropy", out, (logits.idx,), logits.node.needs_grad, backward_fn=backward_fn
    )


def backward(loss: Var) -> dict[str, Tensor]:
    """Reverse-mode sweep from a scalar loss.

    Returns the gradient for every variable on the tape keyed by its
    param id (zeros for variables the loss does not depend on). The tape
    is consumed: adjoints and closures are dropped afterwards.
    """
    tape = loss.tape
    if tape.consumed:
        raise ContractError("tape already consumed by backward")
    if loss.data.shape != ():
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    nodes = tape.nodes
    nodes[loss.idx].adjoint = np.asarray(1.0)
    for node in reversed(nodes[: loss.idx + 1]):
        g = node.adjoint
        if g is None or node.backward_fn is None:
            continue
        for idx, contrib in node.backward_fn(g):
            target = nodes[idx]
            if not target.needs_grad:
                continue
            if target.adjoint is None:
                target.adjoint = np.zeros_like(target.data)
            target.adjoint = target.adjoint + contrib
    grads: dict[str, Tensor] = {}
    for node in nodes:
        if node.param_id is None:
            continue
        adj = node.adjoint if node.adjoint is not None else np.zeros_like(node.data)
        grads[node.param_id] = Tensor._wrap(np.ascontiguousarray(adj))
    tape.consumed = True
    for node in nodes:
        node.backward_fn = None
    return grads
