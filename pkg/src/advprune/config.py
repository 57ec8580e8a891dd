"""Declarative experiment configuration.

Configs serialize to a line-oriented ``key=value`` format with dotted
sections and round-trip exactly (floats via repr). The hash of the
canonical serialization identifies a run in result CSVs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

from .attacks import AttackSpec
from .errors import ParameterError, ParseError, ValidationError
from .pruners import ALGORITHMS, PROX_KINDS

__all__ = [
    "ModelSpec",
    "DataSpec",
    "PrunerSpec",
    "OptimSpec",
    "ExperimentConfig",
    "serialize_config",
    "parse_config",
    "config_hash",
    "parse_attack_string",
]

MODEL_FAMILIES = ("mlp", "conv", "res_ens")
DATA_FAMILIES = ("blobs", "spirals", "tiny_images", "csv", "idx")


@dataclass(frozen=True)
class ModelSpec:
    family: str = "mlp"
    widths: tuple[int, ...] = (2, 24, 24, 2)
    activation: str = "relu"
    conv_input: tuple[int, ...] = (1, 8, 8)
    conv_channels: tuple[int, ...] = (6,)
    kernel: int = 3
    classes: int = 2
    in_dim: int = 2
    width: int = 16
    blocks: int = 2
    out_dim: int = 2
    n: int = 1
    sigma: float = 0.0
    skip: bool = True


@dataclass(frozen=True)
class DataSpec:
    family: str = "blobs"
    n: int = 120
    classes: int = 2
    dim: int = 2
    spread: float = 0.1
    turns: float = 1.5
    noise: float = 0.02
    h: int = 8
    w: int = 8
    path: str = ""
    labels_path: str = ""
    val_fraction: float = 0.2
    test_fraction: float = 0.2


@dataclass(frozen=True)
class PrunerSpec:
    algorithm: str = "none"
    beta: float = 0.0
    lam: float = 0.0
    lam1: float = 0.0
    lam2: float = 0.0
    prox: str = "group_lasso"


@dataclass(frozen=True)
class OptimSpec:
    eta0: float = 0.1
    momentum: float = 0.0
    epochs: int = 50
    batch_size: int = 32
    decay_epochs: tuple[int, ...] = (30, 42)
    decay_factor: float = 0.1


def _default_train_attack() -> AttackSpec:
    return AttackSpec("ifgsm", eps=0.1, alpha=0.025, steps=10, random_init=True)


def _default_eval_attacks() -> tuple[AttackSpec, ...]:
    return (
        AttackSpec("fgsm", eps=0.1),
        AttackSpec("ifgsm", eps=0.1, alpha=0.025, steps=20, random_init=True),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec)
    data: DataSpec = field(default_factory=DataSpec)
    train_attack: AttackSpec = field(default_factory=_default_train_attack)
    eval_attacks: tuple[AttackSpec, ...] = field(default_factory=_default_eval_attacks)
    pruner: PrunerSpec = field(default_factory=PrunerSpec)
    optim: OptimSpec = field(default_factory=OptimSpec)
    seed: int = 0
    out_dir: str = "runs/exp"

    def validate(self) -> "ExperimentConfig":
        if self.model.family not in MODEL_FAMILIES:
            raise ValidationError(f"unknown model family {self.model.family!r}")
        if self.data.family not in DATA_FAMILIES:
            raise ValidationError(f"unknown data family {self.data.family!r}")
        if self.pruner.algorithm not in ALGORITHMS:
            raise ValidationError(f"unknown pruner algorithm {self.pruner.algorithm!r}")
        if self.pruner.prox not in PROX_KINDS:
            raise ValidationError(f"unknown prox {self.pruner.prox!r}")
        if min(self.pruner.beta, self.pruner.lam, self.pruner.lam1, self.pruner.lam2) < 0:
            raise ValidationError("pruner hyperparameters must be >= 0")
        if self.optim.eta0 <= 0:
            raise ValidationError(f"eta0 must be > 0, got {self.optim.eta0}")
        if self.optim.epochs < 1 or self.optim.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if any(e >= self.optim.epochs for e in self.optim.decay_epochs):
            raise ValidationError(
                f"decay epochs {self.optim.decay_epochs} must all be < epochs {self.optim.epochs}"
            )
        if not 0 < self.data.val_fraction < 1 or not 0 < self.data.test_fraction < 1:
            raise ValidationError("val and test fractions must be in (0, 1)")
        try:
            self.train_attack.validate()
            for spec in self.eval_attacks:
                spec.validate()
        except ParameterError as exc:
            raise ValidationError(str(exc)) from None
        if len(self.eval_attacks) > 2:
            raise ValidationError("at most two evaluation attacks map onto the A2/A3 columns")
        return self


# ---------------------------------------------------------------------------
# flat key=value codec; every field is listed explicitly with its converters


def _enc_bool(v):
    return "true" if v else "false"


def _dec_bool(s):
    if s not in ("true", "false"):
        raise ParseError(f"expected true/false, got {s!r}")
    return s == "true"


def _enc_tuple(conv):
    return lambda v: ",".join(conv(x) for x in v)


def _dec_tuple(conv):
    return lambda s: tuple(conv(x) for x in s.split(",")) if s else ()


_INT = (str, int)
_FLOAT = (repr, float)
_STR = (str, str)
_BOOL = (_enc_bool, _dec_bool)
_INTS = (_enc_tuple(str), _dec_tuple(int))
_FLOATS = (_enc_tuple(repr), _dec_tuple(float))

_MODEL_SCHEMA = {
    "family": _STR, "widths": _INTS, "activation": _STR, "conv_input": _INTS,
    "conv_channels": _INTS, "kernel": _INT, "classes": _INT, "in_dim": _INT,
    "width": _INT, "blocks": _INT, "out_dim": _INT, "n": _INT, "sigma": _FLOAT,
    "skip": _BOOL,
}
_DATA_SCHEMA = {
    "family": _STR, "n": _INT, "classes": _INT, "dim": _INT, "spread": _FLOAT,
    "turns": _FLOAT, "noise": _FLOAT, "h": _INT, "w": _INT, "path": _STR,
    "labels_path": _STR, "val_fraction": _FLOAT, "test_fraction": _FLOAT,
}
_ATTACK_SCHEMA = {
    "family": _STR, "eps": _FLOAT, "alpha": _FLOAT, "steps": _INT,
    "random_init": _BOOL, "clamp": _FLOATS,
}
_PRUNER_SCHEMA = {
    "algorithm": _STR, "beta": _FLOAT, "lam": _FLOAT, "lam1": _FLOAT,
    "lam2": _FLOAT, "prox": _STR,
}
_OPTIM_SCHEMA = {
    "eta0": _FLOAT, "momentum": _FLOAT, "epochs": _INT, "batch_size": _INT,
    "decay_epochs": _INTS, "decay_factor": _FLOAT,
}
_TOP_SCHEMA = {"seed": _INT, "out_dir": _STR}


def _emit(lines, prefix, obj, schema):
    for name, (enc, _dec) in schema.items():
        lines.append(f"{prefix}.{name}={enc(getattr(obj, name))}")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; ``parse_config`` inverts it exactly."""
    lines = ["# advprune-config v1"]
    _emit(lines, "model", cfg.model, _MODEL_SCHEMA)
    _emit(lines, "data", cfg.data, _DATA_SCHEMA)
    _emit(lines, "train_attack", cfg.train_attack, _ATTACK_SCHEMA)
    lines.append(f"eval_attacks.count={len(cfg.eval_attacks)}")
    for i, spec in enumerate(cfg.eval_attacks):
        _emit(lines, f"eval_attacks.{i}", spec, _ATTACK_SCHEMA)
    _emit(lines, "pruner", cfg.pruner, _PRUNER_SCHEMA)
    _emit(lines, "optim", cfg.optim, _OPTIM_SCHEMA)
    for name, (enc, _dec) in _TOP_SCHEMA.items():
        lines.append(f"{name}={enc(getattr(cfg, name))}")
    return "\n".join(lines) + "\n"


def _collect(pairs, prefix, schema, where):
    kwargs = {}
    for name, (_enc, dec) in schema.items():
        key = f"{prefix}.{name}" if prefix else name
        if key in pairs:
            try:
                kwargs[name] = dec(pairs.pop(key))
            except (ValueError, ParseError) as exc:
                raise ParseError(f"{where}: bad value for {key}: {exc}") from None
    return kwargs


def parse_config(text: str, where: str = "<config>") -> ExperimentConfig:
    """Parse the key=value form; unknown keys are errors, missing keys default."""
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"{where}:{lineno}: expected key=value, got {raw!r}")
        if key in pairs:
            raise ParseError(f"{where}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    model = ModelSpec(**_collect(pairs, "model", _MODEL_SCHEMA, where))
    data = DataSpec(**_collect(pairs, "data", _DATA_SCHEMA, where))
    train_attack = AttackSpec(**{
        k: (tuple(v) if k == "clamp" else v)
        for k, v in _collect(pairs, "train_attack", _ATTACK_SCHEMA, where).items()
    })
    count = int(pairs.pop("eval_attacks.count", "0"))
    evals = []
    for i in range(count):
        kwargs = _collect(pairs, f"eval_attacks.{i}", _ATTACK_SCHEMA, where)
        if "clamp" in kwargs:
            kwargs["clamp"] = tuple(kwargs["clamp"])
        evals.append(AttackSpec(**kwargs))
    pruner = PrunerSpec(**_collect(pairs, "pruner", _PRUNER_SCHEMA, where))
    optim = OptimSpec(**_collect(pairs, "optim", _OPTIM_SCHEMA, where))
    top = _collect(pairs, "", _TOP_SCHEMA, where)
    if pairs:
        raise ParseError(f"{where}: unknown keys: {sorted(pairs)}")
    return ExperimentConfig(
        model=model, data=data, train_attack=train_attack, eval_attacks=tuple(evals),
        pruner=pruner, optim=optim, **top,
    )


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable 16-hex-digit digest of the canonical serialization."""
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]


def parse_attack_string(text: str) -> AttackSpec:
    """Compact CLI form: 'ifgsm:eps=0.1,alpha=0.025,steps=20,random_init=true'."""
    family, _, rest = text.partition(":")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            key, sep, value = item.partition("=")
            if not sep or key not in _ATTACK_SCHEMA or key == "family":
                raise ParseError(f"bad attack option {item!r}")
            if key == "clamp":
                kwargs["clamp"] = tuple(float(v) for v in value.split(":"))
            else:
                _enc, dec = _ATTACK_SCHEMA[key]
                kwargs[key] = dec(value)
    return AttackSpec(family=family, **kwargs).validate()


def with_overrides(cfg: ExperimentConfig, seed=None, out_dir=None) -> ExperimentConfig:
    """CLI-level overrides that leave the rest of the config intact."""
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    if out_dir is not None:
        cfg = replace(cfg, out_dir=str(out_dir))
    return cfg
