"""End-to-end training loop: Adam over the dual projections under a chosen
loss-weight schedule, with per-epoch weight commits, validation-based model
selection, and checkpointing.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import encoder, evaluate
from . import loss as loss_mod
from .encoder import DualEncoderParams, EncoderGradients
from .scheduler import SchedulerState, Strategy, batch_statistics, equal_weights


class TrainingError(RuntimeError):
    """Raised when a run must abort (non-finite loss or gradient)."""


class CheckpointError(Exception):
    """Raised for unreadable, corrupted, or version-mismatched checkpoints."""


CHECKPOINT_MAGIC = "ALIGNCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 30
    tau: float = 0.05
    embed_dim: int = 256
    strategy: Strategy = Strategy.FIXED
    seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.embed_dim < 2:
            raise ValueError("embed_dim must be >= 2")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_epsilon <= 0:
            raise ValueError("adam_epsilon must be positive")


@dataclass
class AdamState:
    m_img: np.ndarray
    v_img: np.ndarray
    m_txt: np.ndarray
    v_txt: np.ndarray
    step_count: int = 0

    @classmethod
    def zeros_like(cls, params: DualEncoderParams) -> "AdamState":
        return cls(
            np.zeros_like(params.w_img),
            np.zeros_like(params.w_img),
            np.zeros_like(params.w_txt),
            np.zeros_like(params.w_txt),
        )


def _adam_update(w, g, m, v, t, config):
    b1, b2 = config.adam_beta1, config.adam_beta2
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return w - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon), m, v


def adam_step(
    params: DualEncoderParams,
    grads: EncoderGradients,
    state: AdamState,
    config: TrainConfig,
) -> tuple[DualEncoderParams, AdamState]:
    """One bias-corrected Adam update; returns fresh params and state."""
    for name, g in (("image", grads.g_img), ("text", grads.g_txt)):
        if not np.isfinite(g).all():
            bad = int((~np.isfinite(g)).sum())
            raise TrainingError(
                f"non-finite gradient: {bad} bad entries in the {name} projection "
                f"at optimizer step {state.step_count + 1}"
            )
    t = state.step_count + 1
    w_img, m_img, v_img = _adam_update(
        params.w_img, grads.g_img, state.m_img, state.v_img, t, config
    )
    w_txt, m_txt, v_txt = _adam_update(
        params.w_txt, grads.g_txt, state.m_txt, state.v_txt, t, config
    )
    return DualEncoderParams(w_img, w_txt), AdamState(m_img, v_img, m_txt, v_txt, t)


@dataclass
class EpochRecord:
    epoch: int
    w_i: float  # weights active during this epoch
    w_t: float
    mean_l_i2t: float
    mean_l_t2i: float
    mean_total: float
    val_r1_i2t: float
    val_r1_t2i: float
    val_r1_sum: float
    val_r5_i2t: float
    val_r5_t2i: float
    # scheduler signals observed during the epoch
    sigma_i: float
    sigma_t: float
    entropy_i: float
    entropy_t: float
    margin_i: float
    margin_t: float
    first_batch: list[int] = field(default_factory=list)


@dataclass
class TrainRecord:
    strategy: Strategy
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_r1_sum: float = -math.inf


@dataclass
class TrainResult:
    params: DualEncoderParams  # parameters from the best validation epoch
    record: TrainRecord
    config: TrainConfig


def epoch_batch_seed(seed: int, epoch: int) -> int:
    """Deterministic per-epoch shuffle seed; strategy-independent so every
    schedule sees the same mini-batch sequence."""
    return seed * 1_000_003 + epoch


def _val_recall(params, val_ds):
    emb_i, emb_t = encoder.embed(params, val_ds.img, val_ds.txt)
    ks = tuple(k for k in (1, 5) if k <= val_ds.n_pairs)
    report = evaluate.recall_at_k(emb_i, emb_t, ks)
    r5_i2t = report.get("i2t", 5) if 5 in report.ks else math.nan
    r5_t2i = report.get("t2i", 5) if 5 in report.ks else math.nan
    return report.get("i2t", 1), report.get("t2i", 1), r5_i2t, r5_t2i


def train(
    train_ds: data_mod.FeatureDataset,
    val_ds: data_mod.FeatureDataset,
    config: TrainConfig,
    scheduler: SchedulerState | None = None,
) -> TrainResult:
    """Run the full protocol and return the best-validation parameters.

    Per epoch: iterate seeded batches; each batch feeds one forward pass to
    both the weighted loss and the scheduler statistics, then one Adam step.
    At epoch end the scheduler commits the next epoch's weights and the model
    is scored by validation R@1 in both directions; the best sum wins, ties
    broken by the earliest epoch.
    """
    if train_ds.n_pairs == 0 or val_ds.n_pairs == 0:
        raise ValueError("datasets must be non-empty")
    if train_ds.d_img != val_ds.d_img or train_ds.d_txt != val_ds.d_txt:
        raise ValueError("train and val feature dimensions disagree")
    if scheduler is None:
        scheduler = SchedulerState(strategy=config.strategy)
    params = encoder.init_params(config.embed_dim, train_ds.d_img, train_ds.d_txt, config.seed)
    adam = AdamState.zeros_like(params)
    weights = equal_weights()
    record = TrainRecord(strategy=config.strategy, seed=config.seed)
    best_params = params.copy()

    for epoch in range(config.epochs):
        idx_batches = data_mod.batches(
            train_ds, config.batch_size, epoch_batch_seed(config.seed, epoch)
        )
        sum_i2t = sum_t2i = sum_total = 0.0
        for batch_no, idx in enumerate(idx_batches):
            raw_i = train_ds.img[idx]
            raw_t = train_ds.txt[idx]
            emb_i, emb_t = encoder.embed(params, raw_i, raw_t)
            sim = loss_mod.similarity_matrix(emb_i, emb_t, config.tau)
            scheduler.observe(batch_statistics(sim), len(idx))
            l_i2t, l_t2i = loss_mod.infonce_components(sim)
            breakdown = loss_mod.weighted_total(l_i2t, l_t2i, weights)
            if not math.isfinite(breakdown.total):
                raise TrainingError(
                    f"non-finite loss {breakdown.total!r} at epoch {epoch}, batch {batch_no}"
                )
            d_s = loss_mod.loss_gradient(sim, weights)
            d_emb_i, d_emb_t = loss_mod.chain_to_embeddings(d_s, emb_i, emb_t)
            grads = encoder.backward(params, raw_i, raw_t, d_emb_i, d_emb_t)
            params, adam = adam_step(params, grads, adam, config)
            sum_i2t += breakdown.l_i2t
            sum_t2i += breakdown.l_t2i
            sum_total += breakdown.total

        stats = scheduler.epoch_statistics()
        committed = scheduler.commit_epoch()
        r1_i, r1_t, r5_i, r5_t = _val_recall(params, val_ds)
        n_batches = len(idx_batches)
        record.epochs.append(
            EpochRecord(
                epoch=epoch,
                w_i=weights.w_i,
                w_t=weights.w_t,
                mean_l_i2t=sum_i2t / n_batches,
                mean_l_t2i=sum_t2i / n_batches,
                mean_total=sum_total / n_batches,
                val_r1_i2t=r1_i,
                val_r1_t2i=r1_t,
                val_r1_sum=r1_i + r1_t,
                val_r5_i2t=r5_i,
                val_r5_t2i=r5_t,
                sigma_i=stats.sigma_i,
                sigma_t=stats.sigma_t,
                entropy_i=stats.entropy_i,
                entropy_t=stats.entropy_t,
                margin_i=stats.margin_i,
                margin_t=stats.margin_t,
                first_batch=[int(i) for i in idx_batches[0]],
            )
        )
        if r1_i + r1_t > record.best_val_r1_sum:
            record.best_val_r1_sum = r1_i + r1_t
            record.best_epoch = epoch
            best_params = params.copy()
        weights = committed

    return TrainResult(best_params, record, config)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------


def _config_to_lines(config: TrainConfig) -> list[str]:
    out = []
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, Strategy):
            text = value.value
        elif isinstance(value, float):
            text = format(value, ".17g")
        else:
            text = str(value)
        out.append(f"{f.name} {text}")
    return out


def _config_from_lines(lines: list[str]) -> TrainConfig:
    raw: dict[str, str] = {}
    for ln in lines:
        key, _, value = ln.partition(" ")
        raw[key] = value
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name not in raw:
            raise CheckpointError(f"config block is missing {f.name!r}")
        text = raw[f.name]
        if f.name == "strategy":
            kwargs[f.name] = Strategy(text)
        elif f.type in ("int", int):
            kwargs[f.name] = int(text)
        else:
            kwargs[f.name] = float(text)
    try:
        return TrainConfig(**kwargs)
    except ValueError as exc:
        raise CheckpointError(f"invalid config in checkpoint: {exc}") from exc


def save_checkpoint(
    params: DualEncoderParams,
    config: TrainConfig,
    record: TrainRecord,
    path: str | Path,
) -> None:
    """Versioned text checkpoint: config block plus both projection matrices."""
    lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}"]
    lines.append("[config]")
    lines.extend(_config_to_lines(config))
    lines.append(f"[meta] best_epoch {record.best_epoch} best_val_r1_sum "
                 f"{format(record.best_val_r1_sum, '.17g')}")
    for name, w in (("w_img", params.w_img), ("w_txt", params.w_txt)):
        lines.append(f"[{name}] {w.shape[0]} {w.shape[1]}")
        for row in w:
            lines.append(" ".join(format(v, ".17g") for v in row))
    lines.append("[end]")
    Path(path).write_text("\n".join(lines) + "\n")


def _read_matrix(lines: list[str], pos: int, name: str) -> tuple[np.ndarray, int]:
    header = lines[pos].split()
    if len(header) != 3 or header[0] != f"[{name}]":
        raise CheckpointError(f"expected [{name}] section at line {pos + 1}")
    try:
        rows, cols = int(header[1]), int(header[2])
    except ValueError as exc:
        raise CheckpointError(f"bad {name} dimensions") from exc
    if rows < 1 or cols < 1 or pos + rows >= len(lines):
        raise CheckpointError(f"{name} section truncated or malformed")
    w = np.empty((rows, cols))
    for r in range(rows):
        parts = lines[pos + 1 + r].split()
        if len(parts) != cols:
            raise CheckpointError(
                f"{name} row {r} has {len(parts)} values, expected {cols}"
            )
        try:
            w[r] = [float(v) for v in parts]
        except ValueError as exc:
            raise CheckpointError(f"{name} row {r} unparseable") from exc
    if not np.isfinite(w).all():
        raise CheckpointError(f"{name} contains non-finite entries")
    return w, pos + 1 + rows


def load_checkpoint(path: str | Path) -> tuple[DualEncoderParams, TrainConfig, dict]:
    """Read a checkpoint back; returns (params, config, meta)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise CheckpointError(f"{path}: empty checkpoint")
    magic = lines[0].split()
    if len(magic) != 2 or magic[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic line {lines[0]!r}")
    if magic[1] != str(CHECKPOINT_VERSION):
        raise CheckpointError(f"{path}: unsupported checkpoint version {magic[1]}")
    if len(lines) < 3 or lines[1] != "[config]":
        raise CheckpointError(f"{path}: missing [config] section")
    pos = 2
    config_lines = []
    while pos < len(lines) and not lines[pos].startswith("["):
        config_lines.append(lines[pos])
        pos += 1
    config = _config_from_lines(config_lines)
    meta: dict = {}
    if pos < len(lines) and lines[pos].startswith("[meta]"):
        parts = lines[pos].split()[1:]
        meta = {parts[i]: parts[i + 1] for i in range(0, len(parts) - 1, 2)}
        pos += 1
    w_img, pos = _read_matrix(lines, pos, "w_img")
    w_txt, pos = _read_matrix(lines, pos, "w_txt")
    if pos >= len(lines) or lines[pos] != "[end]":
        raise CheckpointError(f"{path}: missing [end] marker")
    if w_img.shape[0] != config.embed_dim or w_txt.shape[0] != config.embed_dim:
        raise CheckpointError(
            f"{path}: matrix rows disagree with embed_dim {config.embed_dim}"
        )
    return DualEncoderParams(w_img, w_txt), config, meta


# ---------------------------------------------------------------------------
# Training-log CSV
# ---------------------------------------------------------------------------

TRAINING_LOG_FIELDS = [
    "epoch",
    "strategy",
    "w_i",
    "w_t",
    "mean_l_i2t",
    "mean_l_t2i",
    "mean_total",
    "val_r1_i2t",
    "val_r1_t2i",
    "val_r1_sum",
    "val_r5_i2t",
    "val_r5_t2i",
    "sigma_i",
    "sigma_t",
    "entropy_i",
    "entropy_t",
    "margin_i",
    "margin_t",
]


def write_training_log(path: str | Path, record: TrainRecord) -> None:
    """One CSV row per epoch: losses, weights, validation recall, signals."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRAINING_LOG_FIELDS)
        for e in record.epochs:
            writer.writerow(
                [
                    e.epoch,
                    record.strategy.value,
                    repr(e.w_i),
                    repr(e.w_t),
                    repr(e.mean_l_i2t),
                    repr(e.mean_l_t2i),
                    repr(e.mean_total),
                    repr(e.val_r1_i2t),
                    repr(e.val_r1_t2i),
                    repr(e.val_r1_sum),
                    repr(e.val_r5_i2t),
                    repr(e.val_r5_t2i),
                    repr(e.sigma_i),
                    repr(e.sigma_t),
                    repr(e.entropy_i),
                    repr(e.entropy_t),
                    repr(e.margin_i),
                    repr(e.margin_t),
                ]
            )


def write_batch_log(path: str | Path, record: TrainRecord) -> None:
    """First mini-batch index list per epoch; lets runs prove they saw the
    same batch sequence."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "first_batch_indices"])
        for e in record.epochs:
            writer.writerow([e.epoch, " ".join(str(i) for i in e.first_batch)])
