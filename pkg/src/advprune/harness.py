"""Experiment runner: adversarial training with a splitting-method pruner in
the back-propagation stage, per-epoch metrics on the finalized (u-substituted)
model, best-validation tracking, and deterministic CSV/SVG artifacts.

Everything downstream of (config, seed) is reproducible bit-for-bit: random
streams are derived per purpose and counter, wall-clock time never reaches
the CSV, and the SVG emitter is plain string formatting.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .attacks import AttackSpec, perturb
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash, serialize_config
from .data import (
    Dataset,
    load_csv,
    load_idx,
    make_blobs,
    make_spirals,
    make_tiny_images,
    split_train_val,
)
from .errors import FormatError, ValidationError
from .metrics import (
    MetricsRecord,
    accuracy,
    channel_sparsity,
    sparsity,
    weight_histogram,
)
from .models import BlockSpec, Model, build_convnet, build_mlp, build_residual_ensemble, forward
from .pruners import finalize_epoch, init_pruner_state, pruner_step
from .seeding import derive_rng, derive_seed
from .tensor import backward, softmax_cross_entropy

__all__ = [
    "ReportRow",
    "RunResult",
    "run_experiment",
    "emit_histogram_svg",
    "compare_runs",
    "build_dataset",
    "build_model",
    "learning_rate_at",
]

CSV_SCHEMA = "# advprune-results v1"
CSV_COLUMNS = (
    "config_hash", "pruner", "split", "epoch", "best",
    "a1", "a2", "a3", "sparsity", "channel_sparsity", "lagrangian",
)
DESCENT_SLACK = 1e-8


@dataclass(frozen=True)
class ReportRow:
    """One CSV row: a metrics record tied to a config and split."""

    config_hash: str
    pruner: str
    split: str
    epoch: int
    best: bool
    a1: float
    a2: float
    a3: float
    sparsity: float
    channel_sparsity: float
    lagrangian: float

    def to_csv(self) -> str:
        return ",".join([
            self.config_hash, self.pruner, self.split, str(self.epoch),
            "1" if self.best else "0",
            repr(self.a1), repr(self.a2), repr(self.a3),
            repr(self.sparsity), repr(self.channel_sparsity), repr(self.lagrangian),
        ])

    @classmethod
    def from_csv(cls, line: str) -> "ReportRow":
        cells = line.split(",")
        if len(cells) != len(CSV_COLUMNS):
            raise FormatError(f"expected {len(CSV_COLUMNS)} columns, got {len(cells)}")
        return cls(
            cells[0], cells[1], cells[2], int(cells[3]), cells[4] == "1",
            float(cells[5]), float(cells[6]), float(cells[7]),
            float(cells[8]), float(cells[9]), float(cells[10]),
        )


@dataclass
class RunResult:
    rows: list[ReportRow]
    records: list[MetricsRecord]
    csv_path: Path
    best_checkpoint: Path
    final_checkpoint: Path
    best_epoch: int


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    """Materialize the configured data source (generator seeds derive from the run seed)."""
    d = cfg.data
    seed = derive_seed(cfg.seed, "data")
    if d.family == "blobs":
        return make_blobs(d.n, d.classes, d.dim, d.spread, seed)
    if d.family == "spirals":
        return make_spirals(d.n, d.turns, d.noise, seed)
    if d.family == "tiny_images":
        return make_tiny_images(d.n, d.classes, d.h, d.w, seed)
    if d.family == "csv":
        return load_csv(d.path, num_classes=d.classes if d.classes > 0 else None)
    return load_idx(d.path, d.labels_path)


def build_model(cfg: ExperimentConfig) -> Model:
    m = cfg.model
    seed = derive_seed(cfg.seed, "init")
    if m.family == "mlp":
        return build_mlp(m.widths, m.activation, seed=seed)
    if m.family == "conv":
        return build_convnet(m.conv_input, m.conv_channels, m.kernel, m.classes,
                             seed=seed, activation=m.activation)
    block = BlockSpec(m.in_dim, m.width, m.blocks, m.out_dim, m.activation)
    model = build_residual_ensemble(m.n, block, m.sigma, seed=seed)
    return model if m.skip else replace_skip(model, False)


def replace_skip(model: Model, skip: bool) -> Model:
    out = model.copy()
    out.skip = skip
    return out


def learning_rate_at(epoch: int, eta0: float, decay_epochs, factor: float) -> float:
    """eta0 times factor for every decay epoch already reached."""
    return eta0 * factor ** sum(1 for e in decay_epochs if e <= epoch)


def _split_three_way(ds: Dataset, cfg: ExperimentConfig):
    rest, test = split_train_val(ds, cfg.data.test_fraction, derive_seed(cfg.seed, "split-test"))
    train, val = split_train_val(rest, cfg.data.val_fraction, derive_seed(cfg.seed, "split-val"))
    return train, val, test


def _epoch_metrics(cfg, model, dataset, epoch):
    specs = list(cfg.eval_attacks) + [AttackSpec(), AttackSpec()]
    a1 = accuracy(model, dataset, AttackSpec(), seed=cfg.seed, epoch=epoch)
    a2 = accuracy(model, dataset, specs[0], seed=cfg.seed, epoch=epoch) if cfg.eval_attacks else float("nan")
    a3 = (
        accuracy(model, dataset, specs[1], seed=cfg.seed, epoch=epoch)
        if len(cfg.eval_attacks) > 1
        else float("nan")
    )
    return a1, a2, a3


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    """Train with the configured attack and pruner; emit rows and artifacts.

    Per batch: adversarial examples from the training attack, stochastic
    (noise-injected) forward, backward, one pruner step. Per epoch: metrics
    on the finalized model over the validation split, best tracked by clean
    validation accuracy. At the end the best checkpoint is re-evaluated on
    the held-out test split.
    """
    cfg.validate()
    out = Path(out_dir) if out_dir is not None else Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(cfg)
    tag = cfg.pruner.algorithm

    dataset = build_dataset(cfg)
    train, val, test = _split_three_way(dataset, cfg)
    if cfg.optim.batch_size > len(train):
        raise ValidationError(
            f"batch size {cfg.optim.batch_size} exceeds training set size {len(train)}"
        )
    model = build_model(cfg)
    state = init_pruner_state(
        model, tag, beta=cfg.pruner.beta, lam=cfg.pruner.lam, lam1=cfg.pruner.lam1,
        lam2=cfg.pruner.lam2, eta=cfg.optim.eta0, prox=cfg.pruner.prox,
    )
    velocity = None
    if cfg.optim.momentum > 0:
        velocity = {pid: np.zeros_like(a) for pid, a in model.params.items()}

    lines = [CSV_SCHEMA, ",".join(CSV_COLUMNS)]
    rows: list[ReportRow] = []
    records: list[MetricsRecord] = []
    best_epoch, best_a1 = -1, -np.inf
    best_path = out / "best.ckpt"
    n_batches = (len(train) + cfg.optim.batch_size - 1) // cfg.optim.batch_size

    for epoch in range(cfg.optim.epochs):
        t0 = time.monotonic()
        state.eta = learning_rate_at(
            epoch, cfg.optim.eta0, cfg.optim.decay_epochs, cfg.optim.decay_factor
        )
        order = derive_rng(cfg.seed, "shuffle", epoch).permutation(len(train))
        hist_start = len(state.history)
        for bi in range(n_batches):
            idx = order[bi * cfg.optim.batch_size : (bi + 1) * cfg.optim.batch_size]
            x, y = train.inputs[idx], train.labels[idx]
            attack_rng = derive_rng(cfg.seed, "attack", epoch, bi)
            noise_rng = derive_rng(cfg.seed, "noise", epoch, bi)
            x_adv = perturb(model, x, y, cfg.train_attack, rng=attack_rng, stochastic=True)
            logits = forward(model, x_adv, "train", rng=noise_rng)
            loss = softmax_cross_entropy(logits, y)
            f_val = float(loss.data)
            grads = backward(loss)
            garrs = {pid: grads[pid].data for pid in model.params}
            if velocity is not None:
                mu = cfg.optim.momentum
                for pid in garrs:
                    velocity[pid] = mu * velocity[pid] + garrs[pid]
                garrs = velocity
            pruner_step(state, garrs, f_val)

        eval_model = finalize_epoch(state, model)
        a1, a2, a3 = _epoch_metrics(cfg, eval_model, val, epoch)
        sp = sparsity(eval_model)
        csp = channel_sparsity(eval_model)
        lag = state.history[-1] if state.history else float("nan")
        records.append(MetricsRecord(epoch, a1, a2, a3, sp, csp, lag, time.monotonic() - t0))
        rows.append(ReportRow(chash, tag, "val", epoch, False, a1, a2, a3, sp, csp, lag))
        lines.append(rows[-1].to_csv())
        if tag == "rvsm":
            seg = state.history[hist_start:]
            bumps = [d for d in np.diff(seg) if d > DESCENT_SLACK]
            if bumps:
                lines.append(
                    f"# warning: epoch {epoch}: descent violated in {len(bumps)} of "
                    f"{max(len(seg) - 1, 0)} monitored steps (max excess {max(bumps):.3e})"
                )
        # ties keep the latest epoch: equally accurate but further down the
        # Lagrangian descent, hence sparser
        if a1 >= best_a1:
            best_a1, best_epoch = a1, epoch
            save_checkpoint(best_path, eval_model, state)

    save_checkpoint(out / "final.ckpt", finalize_epoch(state, model), state)
    best_model, _ = load_checkpoint(best_path)
    a1, a2, a3 = _epoch_metrics(cfg, best_model, test, best_epoch)
    test_row = ReportRow(
        chash, tag, "test", best_epoch, True,
        a1, a2, a3, sparsity(best_model), channel_sparsity(best_model),
        rows[best_epoch].lagrangian,
    )
    rows[best_epoch] = replace(rows[best_epoch], best=True)
    lines[2 + _line_offset(lines, best_epoch)] = rows[best_epoch].to_csv()
    rows.append(test_row)
    lines.append(test_row.to_csv())

    csv_path = out / "run.csv"
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    return RunResult(rows, records, csv_path, best_path, out / "final.ckpt", best_epoch)


def _line_offset(lines: list[str], epoch: int) -> int:
    """Index (after schema+header) of the val row for ``epoch`` among lines."""
    seen = 0
    for i, line in enumerate(lines[2:]):
        if line.startswith("#"):
            continue
        if seen == epoch:
            return i
        seen += 1
    raise FormatError(f"no CSV line for epoch {epoch}")


def read_rows(path) -> list[ReportRow]:
    """Parse a results CSV, checking the schema line."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0] != CSV_SCHEMA:
        raise FormatError(f"{path}: missing schema line {CSV_SCHEMA!r}")
    if len(lines) < 2 or lines[1] != ",".join(CSV_COLUMNS):
        raise FormatError(f"{path}: missing column header")
    return [ReportRow.from_csv(line) for line in lines[2:] if line and not line.startswith("#")]


# ---------------------------------------------------------------------------
# figures and comparisons


def emit_histogram_svg(model: Model, path, bins) -> None:
    """Standalone SVG bar chart of the weight histogram; byte-deterministic."""
    hist = weight_histogram(model, bins)
    width, height = 640.0, 360.0
    ml, mr, mt, mb = 50.0, 15.0, 15.0, 35.0
    plot_w, plot_h = width - ml - mr, height - mt - mb
    top = max(int(hist.counts.max()), 1)
    lo, hi = float(hist.edges[0]), float(hist.edges[-1])
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}">',
        f'<rect width="{width:.0f}" height="{height:.0f}" fill="white"/>',
    ]
    span = hi - lo
    for i, count in enumerate(hist.counts):
        x0 = ml + plot_w * (float(hist.edges[i]) - lo) / span
        x1 = ml + plot_w * (float(hist.edges[i + 1]) - lo) / span
        h = plot_h * (int(count) / top)
        parts.append(
            f'<rect x="{x0:.3f}" y="{mt + plot_h - h:.3f}" width="{max(x1 - x0, 0.0):.3f}" '
            f'height="{h:.3f}" fill="#4878a8" stroke="none"/>'
        )
    axis_y = mt + plot_h
    parts.append(
        f'<line x1="{ml:.3f}" y1="{axis_y:.3f}" x2="{ml + plot_w:.3f}" y2="{axis_y:.3f}" '
        'stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<line x1="{ml:.3f}" y1="{mt:.3f}" x2="{ml:.3f}" y2="{axis_y:.3f}" '
        'stroke="black" stroke-width="1"/>'
    )

    def label(x, y, text, anchor="middle"):
        parts.append(
            f'<text x="{x:.3f}" y="{y:.3f}" font-family="monospace" font-size="12" '
            f'text-anchor="{anchor}">{text}</text>'
        )

    label(ml, axis_y + 16, f"{lo:.6g}")
    label(ml + plot_w, axis_y + 16, f"{hi:.6g}")
    if lo < 0.0 < hi:
        label(ml + plot_w * (0.0 - lo) / span, axis_y + 16, "0")
    label(ml - 6, mt + 10, str(top), anchor="end")
    label(ml - 6, axis_y, "0", anchor="end")
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class Comparison:
    text: str
    csv: str


_NUMERIC = ("a1", "a2", "a3", "sparsity", "channel_sparsity", "lagrangian")


def compare_runs(paths) -> Comparison:
    """Align the best-validation rows of several runs and report deltas.

    The first run is the baseline; every later column carries metric minus
    baseline. Output comes as an aligned text table and as CSV.
    """
    paths = list(paths)
    if len(paths) < 2:
        raise FormatError("compare needs at least two result files")
    best_rows = []
    for p in paths:
        rows = [r for r in read_rows(p) if r.split == "val" and r.best]
        if len(rows) != 1:
            raise FormatError(f"{p}: expected exactly one best validation row, got {len(rows)}")
        best_rows.append(rows[0])
    names = [f"run{i}[{row.pruner}]" for i, row in enumerate(best_rows)]
    header = ["metric"] + names + [f"delta{i}" for i in range(1, len(best_rows))]
    table = [header]
    for metric in ("epoch",) + _NUMERIC:
        values = [getattr(r, metric) for r in best_rows]
        deltas = [v - values[0] for v in values[1:]]
        table.append(
            [metric]
            + [f"{v:.6g}" if isinstance(v, float) else str(v) for v in values]
            + [f"{d:+.6g}" for d in deltas]
        )
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    text_lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
                  for row in table]
    csv_lines = [",".join(row) for row in table]
    return Comparison("\n".join(text_lines) + "\n", "\n".join(csv_lines) + "\n")
