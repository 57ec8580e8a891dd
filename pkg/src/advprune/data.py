"""Dataset ingestion and desk-scale synthetic generators.

All inputs live in [0, 1] so an attack radius keeps one meaning across
sources: CSV rows are validated against that range, IDX pixel bytes are
rescaled by /255, and the generators emit pre-scaled data. Generators are
pure functions of their arguments.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ParseError, ValidationError

__all__ = [
    "Dataset",
    "load_csv",
    "write_csv",
    "load_idx",
    "make_blobs",
    "make_spirals",
    "make_tiny_images",
    "split_train_val",
]

CLAMP_RANGE = (0.0, 1.0)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Immutable inputs/labels pair with class count and provenance."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    provenance: str

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if x.ndim < 2 or x.shape[0] < 1:
            raise ValidationError(f"inputs must be (n, features...), n >= 1, got {x.shape}")
        if y.shape != (x.shape[0],):
            raise ValidationError(f"labels shape {y.shape} does not match {x.shape[0]} examples")
        if not np.all(np.isfinite(x)):
            raise ValidationError("inputs contain non-finite values")
        if x.min() < CLAMP_RANGE[0] or x.max() > CLAMP_RANGE[1]:
            raise ValidationError(f"inputs must lie in {CLAMP_RANGE}")
        if self.num_classes < 1:
            raise ValidationError(f"need at least one class, got {self.num_classes}")
        if y.min() < 0 or y.max() >= self.num_classes:
            bad = int(y[(y < 0) | (y >= self.num_classes)][0])
            raise ValidationError(f"label {bad} out of range [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def subset(self, indices, provenance_suffix: str) -> "Dataset":
        return Dataset(
            self.inputs[indices],
            self.labels[indices],
            self.num_classes,
            f"{self.provenance}/{provenance_suffix}",
        )


def load_csv(path, num_classes: int | None = None, has_header: bool = False) -> Dataset:
    """One example per row, features first, integer label in the last column."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 1 if has_header else 0
    width = None
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        cells = line.split(",")
        if width is None:
            width = len(cells)
            if width < 2:
                raise ParseError(f"{path}:{lineno}: need at least one feature and a label")
        elif len(cells) != width:
            raise ParseError(f"{path}:{lineno}: expected {width} columns, got {len(cells)}")
        try:
            values = [float(c) for c in cells]
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
        if values[-1] != int(values[-1]):
            raise ParseError(f"{path}:{lineno}: label {values[-1]} is not an integer")
        rows.append(values)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    arr = np.asarray(rows, dtype=np.float64)
    labels = arr[:, -1].astype(np.int64)
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(arr[:, :-1], labels, c, f"csv:{path}")


def write_csv(path, dataset: Dataset, header: bool = False) -> None:
    """Inverse of load_csv; float repr preserves values exactly."""
    x = dataset.inputs.reshape(len(dataset), -1)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        if header:
            cols = [f"f{i}" for i in range(x.shape[1])] + ["label"]
            fh.write(",".join(cols) + "\n")
        for row, label in zip(x, dataset.labels):
            fh.write(",".join(repr(float(v)) for v in row) + f",{int(label)}\n")


def _read_idx_header(blob: bytes, path, magic_expected: int, ndim: int):
    need = 4 * (1 + ndim)
    if len(blob) < need:
        raise ParseError(f"{path}: truncated header at byte {len(blob)}")
    magic = struct.unpack(">I", blob[:4])[0]
    if magic != magic_expected:
        raise ParseError(f"{path}: bad magic 0x{magic:08x} at byte 0, expected 0x{magic_expected:08x}")
    dims = struct.unpack(f">{ndim}I", blob[4:need])
    return dims, need


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Big-endian IDX image/label pair; pixels rescaled to [0, 1] by /255."""
    with open(images_path, "rb") as fh:
        img_blob = fh.read()
    with open(labels_path, "rb") as fh:
        lab_blob = fh.read()
    (n, h, w), offset = _read_idx_header(img_blob, images_path, IDX_IMAGES_MAGIC, 3)
    expected = offset + n * h * w
    if len(img_blob) != expected:
        raise ParseError(f"{images_path}: expected {expected} bytes, got {len(img_blob)}")
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=offset).reshape(n, 1, h, w)
    (n_lab,), lab_offset = _read_idx_header(lab_blob, labels_path, IDX_LABELS_MAGIC, 1)
    if len(lab_blob) != lab_offset + n_lab:
        raise ParseError(f"{labels_path}: expected {lab_offset + n_lab} bytes, got {len(lab_blob)}")
    if n_lab != n:
        raise ValidationError(f"{n} images but {n_lab} labels")
    labels = np.frombuffer(lab_blob, dtype=np.uint8, offset=lab_offset).astype(np.int64)
    c = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels, c, f"idx:{images_path}")


def _check_positive(**kwargs):
    for name, value in kwargs.items():
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")


def _class_centers(classes: int, dim: int) -> np.ndarray:
    """Well-separated deterministic centers: a circle in the first two dims."""
    centers = np.full((classes, dim), 0.5)
    if dim == 1:
        centers[:, 0] = np.linspace(0.2, 0.8, classes)
        return centers
    angles = 2.0 * np.pi * np.arange(classes) / classes
    centers[:, 0] = 0.5 + 0.3 * np.cos(angles)
    centers[:, 1] = 0.5 + 0.3 * np.sin(angles)
    return centers


def make_blobs(n_per_class: int, classes: int, dim: int, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around fixed class centers, clipped into [0, 1]."""
    _check_positive(n_per_class=n_per_class, classes=classes, dim=dim)
    if spread < 0:
        raise ParameterError(f"spread must be >= 0, got {spread}")
    rng = np.random.default_rng(seed)
    centers = _class_centers(classes, dim)
    xs, ys = [], []
    for c in range(classes):
        xs.append(centers[c] + spread * rng.normal(size=(n_per_class, dim)))
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    inputs = np.clip(np.concatenate(xs), *CLAMP_RANGE)
    prov = f"blobs(n={n_per_class},c={classes},dim={dim},spread={spread},seed={seed})"
    return Dataset(inputs, np.concatenate(ys), classes, prov)


def make_spirals(n_per_arm: int, turns: float, noise: float, seed: int) -> Dataset:
    """Two interleaved spiral arms in the unit square."""
    _check_positive(n_per_arm=n_per_arm)
    if turns <= 0 or noise < 0:
        raise ParameterError("turns must be > 0 and noise >= 0")
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for arm in range(2):
        t = np.linspace(0.25, 1.0, n_per_arm) * turns * 2.0 * np.pi
        r = 0.42 * t / t.max()
        phase = t + arm * np.pi
        pts = np.stack([0.5 + r * np.cos(phase), 0.5 + r * np.sin(phase)], axis=1)
        pts += noise * rng.normal(size=pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_arm, arm, dtype=np.int64))
    inputs = np.clip(np.concatenate(xs), *CLAMP_RANGE)
    prov = f"spirals(n={n_per_arm},turns={turns},noise={noise},seed={seed})"
    return Dataset(inputs, np.concatenate(ys), 2, prov)


def make_tiny_images(n_per_class: int, classes: int, h: int, w: int, seed: int) -> Dataset:
    """Single-channel (n, 1, h, w) images: a smooth per-class prototype plus noise."""
    _check_positive(n_per_class=n_per_class, classes=classes, h=h, w=w)
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    xs, ys = [], []
    for c in range(classes):
        fx, fy = rng.uniform(1.0, 3.0, size=2)
        px, py = rng.uniform(0.0, 2.0 * np.pi, size=2)
        proto = 0.5 + 0.3 * np.sin(2 * np.pi * fx * xx + px) * np.cos(2 * np.pi * fy * yy + py)
        batch = proto[np.newaxis, np.newaxis] + 0.1 * rng.normal(size=(n_per_class, 1, h, w))
        xs.append(batch)
        ys.append(np.full(n_per_class, c, dtype=np.int64))
    inputs = np.clip(np.concatenate(xs), *CLAMP_RANGE)
    prov = f"tiny_images(n={n_per_class},c={classes},h={h},w={w},seed={seed})"
    return Dataset(inputs, np.concatenate(ys), classes, prov)


def split_train_val(dataset: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive, seeded shuffle split; returns (train, val)."""
    if not 0.0 < val_fraction < 1.0:
        raise ParameterError(f"val fraction must be in (0, 1), got {val_fraction}")
    n = len(dataset)
    n_val = int(round(n * val_fraction))
    n_val = min(max(n_val, 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return (
        dataset.subset(perm[n_val:], "train"),
        dataset.subset(perm[:n_val], "val"),
    )
