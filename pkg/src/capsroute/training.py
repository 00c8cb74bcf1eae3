"""Training harness: Adam, epoch loop, evaluation, loss ablation, metrics files.

Outputs per run directory: ``metrics.csv`` (one row per epoch),
``run_record.json`` (config snapshot, per-epoch components, wall clock),
``best.caps`` / ``final.caps`` checkpoints, and for evaluation runs a
``confusion.csv`` plus an aligned text rendering.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import apply_parameters, load_checkpoint, save_checkpoint
from .config import Config
from .errors import CheckpointError, ConfigError, ContractError, TrainingDiverged
from .losses import LossBreakdown, LossConfig
from .model import SequenceClassifier, breakdown_is_finite, build_model
from .pipeline import load_dataset, load_manifest
from .tensor import Tape

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Per-parameter moment estimates plus the shared step counter."""

    learning_rate: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    epsilon: float = ADAM_EPSILON
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def init_adam(params: dict, learning_rate: float) -> AdamState:
    state = AdamState(learning_rate=learning_rate)
    for name, p in params.items():
        state.first_moment[name] = np.zeros_like(p.data)
        state.second_moment[name] = np.zeros_like(p.data)
    return state


def adam_step(params: dict, state: AdamState) -> None:
    """One bias-corrected Adam update; every parameter must carry a gradient."""
    for name, p in params.items():
        if p.grad is None:
            raise ContractError(f"adam_step: missing gradient for parameter {name!r}")
    state.step_count += 1
    t = state.step_count
    correction1 = 1.0 - state.beta1**t
    correction2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name] = state.beta1 * state.first_moment[name] + (1 - state.beta1) * g
        v = state.second_moment[name] = state.beta2 * state.second_moment[name] + (1 - state.beta2) * g * g
        update = (m / correction1) / (np.sqrt(v / correction2) + state.epsilon)
        p.data = p.data - state.learning_rate * update


def zero_gradients(params: dict) -> None:
    for p in params.values():
        p.zero_grad()


# ---------------------------------------------------------------------------
# evaluation artifacts
# ---------------------------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Counts indexed [true, predicted]."""

    counts: np.ndarray
    class_names: tuple

    @staticmethod
    def empty(class_names) -> "ConfusionMatrix":
        n = len(class_names)
        return ConfusionMatrix(np.zeros((n, n), dtype=np.int64), tuple(class_names))

    def add(self, true_label: int, predicted: int) -> None:
        self.counts[true_label, predicted] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts) / total) if total else 0.0

    def row_normalized(self) -> np.ndarray:
        sums = self.counts.sum(axis=1, keepdims=True)
        safe = np.where(sums > 0, sums, 1)
        return self.counts / safe

    def to_csv(self) -> str:
        lines = ["true\\predicted," + ",".join(self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(name + "," + ",".join(str(int(v)) for v in row))
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        """Aligned text table of row-normalized percentages."""
        width = max(9, max(len(n) for n in self.class_names) + 1)
        head = " " * width + "".join(f"{n:>{width}}" for n in self.class_names)
        lines = [head]
        for name, row in zip(self.class_names, self.row_normalized()):
            cells = "".join(f"{100.0 * v:>{width - 1}.1f}%" for v in row)
            lines.append(f"{name:<{width}}" + cells)
        return "\n".join(lines)


@dataclass
class EpochRecord:
    epoch: int
    margin: float
    reconstruction: float
    lstm_ce: float
    total: float
    train_accuracy: float
    test_accuracy: float


@dataclass
class RunRecord:
    """Append-only trace of one training run, serialized after every epoch."""

    config_text: str
    seed: int
    epochs: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0

    def to_json(self) -> str:
        return json.dumps({
            "config": self.config_text,
            "seed": self.seed,
            "wall_clock_seconds": self.wall_clock_seconds,
            "epochs": [vars(e) for e in self.epochs],
        }, indent=2)


METRICS_HEADER = "epoch,margin,reconstruction,lstm_ce,total,train_acc,test_acc"


def write_metrics_csv(path, records: list) -> None:
    lines = [METRICS_HEADER]
    for r in records:
        lines.append(",".join([str(r.epoch), repr(r.margin), repr(r.reconstruction),
                               repr(r.lstm_ce), repr(r.total), repr(r.train_accuracy),
                               repr(r.test_accuracy)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _mean_breakdown(parts: list) -> LossBreakdown:
    return LossBreakdown(
        margin=float(np.mean([p.margin for p in parts])),
        reconstruction=float(np.mean([p.reconstruction for p in parts])),
        lstm_ce=float(np.mean([p.lstm_ce for p in parts])),
        total=float(np.mean([p.total for p in parts])),
    )


def _clip_accuracy(model: SequenceClassifier, clips: list) -> float:
    if not clips:
        return 0.0
    hits = sum(1 for clip in clips if model.predict(clip.frames) == clip.label)
    return hits / len(clips)


def train(cfg: Config, manifest_path, out_dir, progress=None) -> RunRecord:
    """Full training run; returns the run record and writes all artifacts.

    Per batch member: forward through encoder, decoder and temporal head on
    its own tape, backward accumulates into shared parameter gradients; the
    accumulated mean feeds one Adam step. The best-test-accuracy parameters
    land in ``best.caps``, the last state in ``final.caps``. ``progress``,
    when given, is called with each finished EpochRecord.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = load_manifest(manifest_path)
    if manifest.num_classes != cfg.num_classes:
        raise ConfigError(
            f"config num_classes={cfg.num_classes} but manifest defines {manifest.num_classes}")
    loss_cfg = LossConfig.from_name(cfg.loss_config)
    data_args = dict(side=cfg.frame_size, window=cfg.sequence_length,
                     split_seed=cfg.split_seed, test_fraction=cfg.test_fraction,
                     by_subject=cfg.split_by_subject,
                     data_root=None if cfg.data_root == "." else cfg.data_root)
    train_clips = list(load_dataset(manifest_path, "train", augment=cfg.augment, **data_args))
    test_clips = list(load_dataset(manifest_path, "test", augment=False, **data_args))
    if not train_clips:
        raise ConfigError("training split is empty; check the manifest and test_fraction")

    model = build_model(cfg, cfg.seed)
    optimizer = init_adam(model.params, cfg.learning_rate)
    record = RunRecord(config_text=cfg.to_text(), seed=cfg.seed)
    started = time.perf_counter()
    best_accuracy = -1.0
    stale_epochs = 0
    steps_taken = 0
    out_of_steps = False

    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_clips))
        breakdowns = []
        correct = 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_clips[i] for i in order[start : start + cfg.batch_size]]
            zero_gradients(model.params)
            for clip in batch:
                with Tape() as tape:
                    total, breakdown, clip_probs = model.sequence_loss(
                        clip.frames, clip.label, loss_cfg)
                bad = breakdown_is_finite(breakdown)
                if bad is not None:
                    raise TrainingDiverged(f"epoch {epoch}: non-finite {bad} component")
                tape.backward(total)
                breakdowns.append(breakdown)
                if int(np.argmax(clip_probs.data)) == clip.label:
                    correct += 1
            for p in model.params.values():
                if p.grad is not None:
                    p.grad = p.grad / len(batch)
                else:  # parameter unused under this loss config (e.g. decoder without recon)
                    p.grad = np.zeros_like(p.data)
            adam_step(model.params, optimizer)
            steps_taken += 1
            if cfg.max_steps and steps_taken >= cfg.max_steps:
                out_of_steps = True
                break

        train_accuracy = correct / len(train_clips) if train_clips else 0.0
        test_accuracy = _clip_accuracy(model, test_clips)
        mean = _mean_breakdown(breakdowns)
        record.epochs.append(EpochRecord(
            epoch=epoch, margin=mean.margin, reconstruction=mean.reconstruction,
            lstm_ce=mean.lstm_ce, total=mean.total,
            train_accuracy=train_accuracy, test_accuracy=test_accuracy))
        record.wall_clock_seconds = time.perf_counter() - started
        write_metrics_csv(out_dir / "metrics.csv", record.epochs)
        (out_dir / "run_record.json").write_text(record.to_json(), encoding="utf-8")
        if progress is not None:
            progress(record.epochs[-1])

        if test_accuracy > best_accuracy:
            best_accuracy = test_accuracy
            stale_epochs = 0
            save_checkpoint(out_dir / "best.caps", model.params, cfg)
        else:
            stale_epochs += 1
        if out_of_steps or stale_epochs >= cfg.early_stop_patience:
            break

    save_checkpoint(out_dir / "final.caps", model.params, cfg)
    return record


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def evaluate(checkpoint_path, manifest_path, split: str = "test", out_dir=None):
    """Deterministic accuracy plus confusion matrix for one split.

    The model is rebuilt from the checkpoint's own config snapshot, so the
    stored dims must match exactly; differing dims raise CheckpointError.
    """
    cfg, _extras, arrays = load_checkpoint(checkpoint_path)
    manifest = load_manifest(manifest_path)
    if manifest.num_classes != cfg.num_classes:
        raise CheckpointError(
            f"checkpoint expects {cfg.num_classes} classes, manifest has {manifest.num_classes}")
    model = build_model(cfg, cfg.seed)
    apply_parameters(model.params, arrays, source=str(checkpoint_path))
    clips = list(load_dataset(manifest_path, split, augment=False, side=cfg.frame_size,
                              window=cfg.sequence_length, split_seed=cfg.split_seed,
                              test_fraction=cfg.test_fraction, by_subject=cfg.split_by_subject,
                              data_root=None if cfg.data_root == "." else cfg.data_root))
    matrix = ConfusionMatrix.empty(manifest.labels)
    for clip in clips:
        matrix.add(clip.label, model.predict(clip.frames))
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "confusion.csv").write_text(matrix.to_csv(), encoding="utf-8")
    return matrix.accuracy(), matrix


# ---------------------------------------------------------------------------
# loss ablation
# ---------------------------------------------------------------------------

ABLATION_ORDER = ("mm", "mrm", "mrc", "mc")


def run_ablation(cfg: Config, manifest_path, out_dir) -> list:
    """Train all four loss configurations on identical seeds and data.

    Returns [(name, accuracy or None)] and writes ``ablation.csv``; a failed
    row is recorded and the remaining configurations still run.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name in ABLATION_ORDER:
        sub_cfg = replace(cfg, loss_config=name)
        sub_dir = out_dir / name
        try:
            record = train(sub_cfg, manifest_path, sub_dir)
            accuracy = max(e.test_accuracy for e in record.epochs)
            rows.append((name, accuracy))
        except Exception as exc:  # keep remaining configurations running
            (sub_dir / "error.txt").parent.mkdir(parents=True, exist_ok=True)
            (sub_dir / "error.txt").write_text(f"{type(exc).__name__}: {exc}\n", encoding="utf-8")
            rows.append((name, None))
    lines = ["loss_config,accuracy"]
    for name, accuracy in rows:
        lines.append(f"{name},{'' if accuracy is None else repr(accuracy)}")
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
