"""Model zoo: plain MLPs, small valid-conv nets, and n-fold ensembles of
residual chains with optional Gaussian noise injected into every residual
mapping (output = mean of the jointly trained members).

A model is an ordered list of layer descriptors per ensemble member plus a
flat parameter registry. Members share the architecture but never the
parameters. Train-mode forwards are tape-recorded and differentiable with
respect to parameters and input; eval-mode forwards are noise-free, tape-free
and bit-deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, ParameterError
from .groups import GroupView, collect_group_views

__all__ = [
    "ParamInfo",
    "Model",
    "build_mlp",
    "build_convnet",
    "build_residual_ensemble",
    "strip_skip_connections",
    "forward",
    "apply_on_tape",
]

INPUT_GRAD_KEY = "@input"

_ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class ParamInfo:
    """Registry entry: id, kind ('weight' groups by rows, 'bias' ungrouped)."""

    param_id: str
    kind: str
    shape: tuple[int, ...]
    layer: str


class Model:
    """Layer descriptors plus a flat parameter registry.

    Descriptors are nested tuples, one list per ensemble member:
      ("linear", in_dim, out_dim)
      ("conv", c_in, c_out, kh, kw)
      ("act", "relu" | "tanh")
      ("flatten",)
      ("block", (inner descriptors...))   residual mapping G
    """

    def __init__(self, members, n: int, sigma: float, skip: bool, params: dict[str, np.ndarray]):
        self.members = [list(layers) for layers in members]
        self.n = int(n)
        self.sigma = float(sigma)
        self.skip = bool(skip)
        self.params = params
        self.registry = _build_registry(self.members)
        ids = [info.param_id for info in self.registry]
        if sorted(ids) != sorted(params.keys()) or len(set(ids)) != len(ids):
            raise ContractError("parameter registry and parameter dict disagree")

    def parameter_count(self) -> int:
        return sum(arr.size for arr in self.params.values())

    def grouping(self) -> dict[str, tuple[str, int]]:
        """Map of weight param id to (layer label, number of groups)."""
        return {
            info.param_id: (info.layer, info.shape[0])
            for info in self.registry
            if info.kind == "weight"
        }

    def group_views(self) -> list[GroupView]:
        return collect_group_views(self.params, self.grouping())

    def has_residual_blocks(self) -> bool:
        return any(desc[0] == "block" for layers in self.members for desc in layers)

    def clone_with_params(self, params: dict[str, np.ndarray]) -> "Model":
        copied = {pid: np.array(arr, dtype=np.float64) for pid, arr in params.items()}
        return Model(self.members, self.n, self.sigma, self.skip, copied)

    def copy(self) -> "Model":
        return self.clone_with_params(self.params)


def _layer_params(desc, path):
    kind = desc[0]
    if kind == "linear":
        _, d_in, d_out = desc
        return [(f"{path}.w", "weight", (d_out, d_in), d_in), (f"{path}.b", "bias", (d_out,), d_in)]
    if kind == "conv":
        _, c_in, c_out, kh, kw = desc
        fan = c_in * kh * kw
        return [
            (f"{path}.w", "weight", (c_out, c_in, kh, kw), fan),
            (f"{path}.b", "bias", (c_out,), fan),
        ]
    return []


def _walk(members):
    """Yield (path, desc) for every parameterized layer in registry order."""
    for mi, layers in enumerate(members):
        for li, desc in enumerate(layers):
            if desc[0] == "block":
                for gi, inner in enumerate(desc[1]):
                    yield f"m{mi}.l{li}.g{gi}", inner
            else:
                yield f"m{mi}.l{li}", desc


def _build_registry(members) -> list[ParamInfo]:
    registry = []
    for path, desc in _walk(members):
        for pid, kind, shape, _fan in _layer_params(desc, path):
            registry.append(ParamInfo(pid, kind, shape, path))
    return registry


def _init_params(members, seed: int) -> dict[str, np.ndarray]:
    # Uniform in +-1/sqrt(fan_in), drawn in registry order.
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for path, desc in _walk(members):
        for pid, _kind, shape, fan in _layer_params(desc, path):
            bound = 1.0 / np.sqrt(fan)
            params[pid] = rng.uniform(-bound, bound, size=shape)
    return params


def _validate_descriptor(desc):
    kind = desc[0]
    if kind == "linear":
        if desc[1] < 1 or desc[2] < 1:
            raise ParameterError(f"linear layer widths must be positive, got {desc}")
    elif kind == "conv":
        if min(desc[1:]) < 1:
            raise ParameterError(f"conv layer dims must be positive, got {desc}")
    elif kind == "act":
        if desc[1] not in _ACTIVATIONS:
            raise ParameterError(f"unknown activation {desc[1]!r}; choose from {_ACTIVATIONS}")
    elif kind == "block":
        for inner in desc[1]:
            _validate_descriptor(inner)
    elif kind != "flatten":
        raise ParameterError(f"unknown layer kind {kind!r}")


def _make_model(members, n, sigma, skip, seed) -> Model:
    for layers in members:
        for desc in layers:
            _validate_descriptor(desc)
    return Model(members, n, sigma, skip, _init_params(members, seed))


def build_mlp(widths, activation: str = "relu", seed: int = 0) -> Model:
    """Plain fully connected net: linear layers with the activation between."""
    widths = [int(w) for w in widths]
    if len(widths) < 2:
        raise ParameterError(f"an MLP needs at least 2 widths, got {widths}")
    if min(widths) < 1:
        raise ParameterError(f"layer widths must be positive, got {widths}")
    if activation not in _ACTIVATIONS:
        raise ParameterError(f"unknown activation {activation!r}; choose from {_ACTIVATIONS}")
    layers = []
    for i in range(len(widths) - 1):
        layers.append(("linear", widths[i], widths[i + 1]))
        if i + 2 < len(widths):
            layers.append(("act", activation))
    return _make_model([layers], 1, 0.0, False, seed)


def build_convnet(input_shape, channels, kernel: int, classes: int, seed: int = 0,
                  activation: str = "relu") -> Model:
    """Small valid-conv stack followed by flatten and a linear head."""
    c, h, w = (int(d) for d in input_shape)
    channels = [int(x) for x in channels]
    if min([c, h, w, kernel, classes] + channels) < 1:
        raise ParameterError("conv net dimensions must be positive")
    layers = []
    prev = c
    for ch in channels:
        layers.append(("conv", prev, ch, kernel, kernel))
        layers.append(("act", activation))
        h, w = h - kernel + 1, w - kernel + 1
        if h < 1 or w < 1:
            raise ParameterError("conv stack consumes the whole input; fewer/smaller kernels needed")
        prev = ch
    layers.append(("flatten",))
    layers.append(("linear", prev * h * w, classes))
    return _make_model([layers], 1, 0.0, False, seed)


@dataclass(frozen=True)
class BlockSpec:
    """Shape of one residual member: stem width, block count, head."""

    in_dim: int
    width: int
    blocks: int
    out_dim: int
    activation: str = "relu"


def build_residual_ensemble(n: int, block: BlockSpec, sigma: float, seed: int = 0) -> Model:
    """n jointly trained residual chains; outputs averaged.

    Each member is stem -> blocks -> head, where every block computes
    x + G(x) + xi with G = linear(act(linear(x))) and xi ~ N(0, sigma^2 I)
    drawn fresh per train-mode forward.
    """
    if n < 1:
        raise ParameterError(f"ensemble size must be >= 1, got {n}")
    if sigma < 0:
        raise ParameterError(f"noise std must be >= 0, got {sigma}")
    if block.blocks < 1:
        raise ParameterError(f"need at least one residual block, got {block.blocks}")
    inner = (
        ("linear", block.width, block.width),
        ("act", block.activation),
        ("linear", block.width, block.width),
    )
    member = [("linear", block.in_dim, block.width)]
    member += [("block", inner)] * block.blocks
    member += [("linear", block.width, block.out_dim)]
    members = [list(member) for _ in range(n)]
    return _make_model(members, n, sigma, True, seed)


def strip_skip_connections(model: Model) -> Model:
    """Copy of the model whose blocks compute G(x) (+ noise) with no skip path."""
    if not model.has_residual_blocks():
        raise ContractError("model has no residual blocks to strip")
    stripped = model.copy()
    stripped.skip = False
    return stripped


def _expected_input_shape(model: Model):
    first = model.members[0][0]
    if first[0] == "linear":
        return ("linear", first[1])
    if first[0] == "conv":
        return ("conv", first[1])
    raise ContractError(f"member cannot start with layer {first[0]!r}")


def _check_batch(model: Model, batch: np.ndarray):
    kind, dim = _expected_input_shape(model)
    if kind == "linear":
        if batch.ndim != 2 or batch.shape[1] != dim:
            raise DimensionError(f"expected batch (b, {dim}), got {batch.shape}")
    else:
        if batch.ndim != 4 or batch.shape[1] != dim:
            raise DimensionError(f"expected batch (b, {dim}, h, w), got {batch.shape}")


def _eval_member(params, paths, x, skip):
    for path, desc in paths:
        kind = desc[0]
        if kind == "linear":
            x = x @ params[f"{path}.w"].T + params[f"{path}.b"]
        elif kind == "conv":
            w = params[f"{path}.w"]
            x = T._conv_forward(x, w) + params[f"{path}.b"].reshape(-1, 1, 1)
        elif kind == "act":
            x = np.maximum(x, 0.0) if desc[1] == "relu" else np.tanh(x)
        elif kind == "flatten":
            x = x.reshape(x.shape[0], -1)
        elif kind == "block":
            g = _eval_member(params, desc[2], x, skip)
            x = x + g if skip else g
    return x


def _member_paths(layers, mi):
    """Resolve descriptor paths once; blocks carry their inner paths inline."""
    out = []
    for li, desc in enumerate(layers):
        if desc[0] == "block":
            inner = [(f"m{mi}.l{li}.g{gi}", d) for gi, d in enumerate(desc[1])]
            out.append((f"m{mi}.l{li}", ("block", desc[1], inner)))
        else:
            out.append((f"m{mi}.l{li}", desc))
    return out


def _tape_member(tape, paths, param_vars, x, skip, sigma, rng, stochastic):
    for path, desc in paths:
        kind = desc[0]
        if kind == "linear":
            w, b = param_vars[f"{path}.w"], param_vars[f"{path}.b"]
            x = T.add(T.matmul(x, T.transpose(w)), b)
        elif kind == "conv":
            w, b = param_vars[f"{path}.w"], param_vars[f"{path}.b"]
            c_out = b.data.shape[0]
            x = T.add(T.conv2d(x, w), T.reshape(b, (c_out, 1, 1)))
        elif kind == "act":
            x = T.relu(x) if desc[1] == "relu" else T.tanh(x)
        elif kind == "flatten":
            x = T.reshape(x, (x.shape[0], int(np.prod(x.shape[1:]))))
        elif kind == "block":
            g = _tape_member(tape, desc[2], param_vars, x, skip, sigma, rng, stochastic)
            out = T.add(x, g) if skip else g
            if stochastic and sigma > 0.0:
                out = T.add(out, tape.gaussian_noise(g.shape, sigma, rng))
            x = out
    return x


def apply_on_tape(model: Model, x: T.Var, rng=None, stochastic: bool = False) -> T.Var:
    """Record the model's forward pass on the tape of ``x`` and return logits.

    Every parameter is registered as a tape variable under its registry id,
    so ``backward`` yields the full gradient map. ``stochastic`` enables the
    per-block noise draws (requires ``rng`` when sigma > 0).
    """
    if stochastic and model.sigma > 0.0 and rng is None:
        raise ContractError("stochastic forward of a sigma > 0 model needs an rng")
    tape = x.tape
    param_vars = {
        info.param_id: tape.variable(model.params[info.param_id], info.param_id)
        for info in model.registry
    }
    outputs = []
    for mi, layers in enumerate(model.members):
        paths = _member_paths(layers, mi)
        outputs.append(
            _tape_member(tape, paths, param_vars, x, model.skip, model.sigma, rng, stochastic)
        )
    if model.n == 1:
        return outputs[0]
    total = outputs[0]
    for out in outputs[1:]:
        total = T.add(total, out)
    return T.scale(total, 1.0 / model.n)


def forward(model: Model, batch, mode: str = "eval", rng=None, stochastic=None):
    """Run the model on a batch.

    mode="eval": noise-free, tape-free; returns a Tensor of logits.
    mode="train": tape-recorded; returns the logits Var, differentiable
    w.r.t. every parameter and the input (gradient key "@input").
    ``stochastic`` overrides whether noise is drawn (defaults to train mode).
    """
    batch = batch.data if isinstance(batch, T.Tensor) else np.asarray(batch, dtype=np.float64)
    _check_batch(model, batch)
    if mode == "eval":
        outs = [
            _eval_member(model.params, _member_paths(layers, mi), batch, model.skip)
            for mi, layers in enumerate(model.members)
        ]
        result = outs[0] if model.n == 1 else sum(outs[1:], outs[0]) * (1.0 / model.n)
        return T.Tensor._wrap(np.ascontiguousarray(result))
    if mode != "train":
        raise ParameterError(f"mode must be 'train' or 'eval', got {mode!r}")
    if stochastic is None:
        stochastic = True
    tape = T.Tape()
    x = tape.variable(batch, INPUT_GRAD_KEY)
    return apply_on_tape(model, x, rng=rng, stochastic=stochastic)
