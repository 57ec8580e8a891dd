"""Flat binary checkpoint container for models and pruner state.

Layout (all integers little-endian, all floats IEEE-754 binary64 LE):

  model chunk
    magic            4 bytes  b"ADVP"
    version          u32      currently 1
    flags            u8       bit 0: skip connections active
    ensemble size    u32
    noise sigma      f64
    record count     u32      layer descriptor table
    records          each: u32 byte length + UTF-8 text
                     "<member> <kind> <args...>"; block inner layers are
                     joined with "|", e.g. "0 block linear 8 8|act relu|linear 8 8"
    param count      u32
    params           each: u32 id length + id UTF-8, u8 kind (0 weight,
                     1 bias), u32 ndim, ndim x u32 dims, then raw f64 data
                     in row-major order

  pruner chunk (optional, immediately after)
    magic            4 bytes  b"PRST"
    algorithm        u8       0 none, 1 rvsm, 2 rgsm, 3 admm
    prox kind        u8       0 group_lasso, 1 group_l0
    hyperparameters  5 x f64  beta, lam, lam1, lam2, eta
    u arrays         raw f64, registry order and shapes
    z arrays         only for admm, same layout
    ref arrays       only for admm: the last u-update's threshold input
    history length   u32
    history          f64 each

Loading restores the pruner state aliased onto the loaded model's
parameters, so training and consistency checks resume bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .models import Model
from .pruners import ALGORITHMS, PROX_KINDS, PrunerState

__all__ = ["save_checkpoint", "load_checkpoint", "MODEL_MAGIC", "PRUNER_MAGIC", "VERSION"]

MODEL_MAGIC = b"ADVP"
PRUNER_MAGIC = b"PRST"
VERSION = 1

_KINDS = ("weight", "bias")


def _descriptor_text(desc) -> str:
    kind = desc[0]
    if kind == "block":
        return "block " + "|".join(_descriptor_text(d) for d in desc[1])
    if kind == "act":
        return f"act {desc[1]}"
    if kind == "flatten":
        return "flatten"
    return " ".join([kind] + [str(int(v)) for v in desc[1:]])


def _parse_descriptor(text: str):
    kind, _, rest = text.partition(" ")
    if kind == "block":
        return ("block", tuple(_parse_descriptor(part) for part in rest.split("|")))
    if kind == "act":
        return ("act", rest)
    if kind == "flatten":
        return ("flatten",)
    if kind in ("linear", "conv"):
        return tuple([kind] + [int(v) for v in rest.split()])
    raise FormatError(f"unknown layer record kind {kind!r}")


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


class _Reader:
    def __init__(self, blob: bytes, label: str):
        self.blob = blob
        self.pos = 0
        self.label = label

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise FormatError(f"{self.label}: truncated at byte {self.pos} (need {n} more)")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def text(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)


def _model_bytes(model: Model) -> bytes:
    out = [MODEL_MAGIC, struct.pack("<I", VERSION)]
    out.append(struct.pack("<B", 1 if model.skip else 0))
    out.append(struct.pack("<I", model.n))
    out.append(struct.pack("<d", model.sigma))
    records = [
        f"{mi} {_descriptor_text(desc)}"
        for mi, layers in enumerate(model.members)
        for desc in layers
    ]
    out.append(struct.pack("<I", len(records)))
    for rec in records:
        raw = rec.encode("utf-8")
        out.append(struct.pack("<I", len(raw)) + raw)
    out.append(struct.pack("<I", len(model.registry)))
    for info in model.registry:
        pid = info.param_id.encode("utf-8")
        out.append(struct.pack("<I", len(pid)) + pid)
        out.append(struct.pack("<B", _KINDS.index(info.kind)))
        out.append(struct.pack("<I", len(info.shape)))
        out.append(struct.pack(f"<{len(info.shape)}I", *info.shape))
        out.append(_pack_array(model.params[info.param_id]))
    return b"".join(out)


def _pruner_bytes(state: PrunerState, model: Model) -> bytes:
    out = [PRUNER_MAGIC]
    out.append(struct.pack("<B", ALGORITHMS.index(state.algorithm)))
    out.append(struct.pack("<B", PROX_KINDS.index(state.prox)))
    out.append(struct.pack("<5d", state.beta, state.lam, state.lam1, state.lam2, state.eta))
    for info in model.registry:
        out.append(_pack_array(state.u[info.param_id]))
    if state.algorithm == "admm":
        for info in model.registry:
            out.append(_pack_array(state.z[info.param_id]))
        for info in model.registry:
            out.append(_pack_array(state.admm_ref[info.param_id]))
    out.append(struct.pack("<I", len(state.history)))
    out.append(struct.pack(f"<{len(state.history)}d", *state.history))
    return b"".join(out)


def save_checkpoint(path, model: Model, state: PrunerState | None = None) -> None:
    """Write the model (and optionally its pruner state) as one binary file."""
    blob = _model_bytes(model)
    if state is not None:
        blob += _pruner_bytes(state, model)
    with open(path, "wb") as fh:
        fh.write(blob)


def _read_model(r: _Reader) -> Model:
    if r.take(4) != MODEL_MAGIC:
        raise FormatError(f"{r.label}: bad magic, not a model checkpoint")
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"{r.label}: unsupported version {version}, expected {VERSION}")
    skip = bool(r.u8() & 1)
    n = r.u32()
    sigma = r.f64()
    members: list[list] = [[] for _ in range(n)]
    for _ in range(r.u32()):
        text = r.text()
        mi, _, rest = text.partition(" ")
        members[int(mi)].append(_parse_descriptor(rest))
    declared = []
    params = {}
    for _ in range(r.u32()):
        pid = r.text()
        kind = _KINDS[r.u8()]
        ndim = r.u32()
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
        declared.append((pid, kind, shape))
        params[pid] = r.array(shape)
    model = Model(members, n, sigma, skip, params)
    derived = [(i.param_id, i.kind, i.shape) for i in model.registry]
    if declared != derived:
        raise FormatError(f"{r.label}: parameter table does not match layer records")
    return model


def _read_pruner(r: _Reader, model: Model) -> PrunerState:
    if r.take(4) != PRUNER_MAGIC:
        raise FormatError(f"{r.label}: bad pruner chunk magic")
    algorithm = ALGORITHMS[r.u8()]
    prox = PROX_KINDS[r.u8()]
    beta, lam, lam1, lam2, eta = struct.unpack("<5d", r.take(40))
    u = {info.param_id: r.array(info.shape) for info in model.registry}
    z = None
    ref = None
    if algorithm == "admm":
        z = {info.param_id: r.array(info.shape) for info in model.registry}
        ref = {info.param_id: r.array(info.shape) for info in model.registry}
    history = [r.f64() for _ in range(r.u32())]
    return PrunerState(
        algorithm, model.params, u, z, beta, lam, lam1, lam2, eta,
        prox, model.grouping(), history, ref,
    )


def load_checkpoint(path):
    """Read a checkpoint; returns (model, pruner state or None)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob, str(path))
    model = _read_model(r)
    state = None
    if r.pos < len(blob):
        state = _read_pruner(r, model)
    if r.pos != len(blob):
        raise FormatError(f"{r.label}: {len(blob) - r.pos} trailing bytes")
    return model, state
