"""Adaptive loss-weight schedules for the two retrieval directions.

Four strategies produce the convex pair (w_i, w_t) multiplying the
image-to-text and text-to-image loss components:

* ``fixed``         -- constant (0.5, 0.5).
* ``variance``      -- w_i = sigma_t / (sigma_i + sigma_t) and symmetrically,
  where sigma is the square root of an EMA-smoothed per-direction score
  variance; the direction with the flatter (less differentiated) score
  distribution receives more weight.
* ``entropy``       -- weights proportional to the mean entropy of each
  direction's contrastive softmax, with each entropy clipped just below the
  uniform ceiling so the schedule starts near equal weighting.
* ``cosine_spread`` -- weights proportional to each direction's shortfall of
  the mean (positive minus hardest-negative) margin below a target margin;
  the side with the smaller average gap is up-weighted.

Weights are committed once per epoch: the raw strategy output is clamped to a
multiplicative band of +/- ``cap_fraction`` around the previously committed
value, then the pair is renormalized to sum 1.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .loss import SimilarityMatrix, log_softmax_rows


class Strategy(enum.Enum):
    FIXED = "fixed"
    VARIANCE = "variance"
    ENTROPY = "entropy"
    COSINE_SPREAD = "cosine_spread"

    def __str__(self) -> str:  # flag/CSV friendly
        return self.value


@dataclass(frozen=True)
class LossWeights:
    """Convex weight pair for the two loss directions at a given epoch."""

    w_i: float
    w_t: float
    epoch: int = 0

    def __post_init__(self):
        if not (0.0 <= self.w_i <= 1.0 and 0.0 <= self.w_t <= 1.0):
            raise ValueError(f"weights must lie in [0, 1], got ({self.w_i}, {self.w_t})")
        if abs(self.w_i + self.w_t - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {self.w_i + self.w_t!r}")


def equal_weights(epoch: int = 0) -> LossWeights:
    return LossWeights(0.5, 0.5, epoch)


@dataclass(frozen=True)
class BatchStatistics:
    """Per-batch signals observed on the similarity matrix.

    var/entropy/margin come in row (image-query) and column (text-query)
    flavors: var_* is the mean within-row/column population variance of the
    scores, entropy_* the mean entropy of the row/column softmax of s/tau,
    margin_bar_* the mean diagonal-minus-hardest-negative gap.
    """

    var_i: float
    var_t: float
    entropy_i: float
    entropy_t: float
    margin_bar_i: float
    margin_bar_t: float

    def __post_init__(self):
        if self.var_i < 0 or self.var_t < 0:
            raise ValueError("variances must be non-negative")
        if self.entropy_i < 0 or self.entropy_t < 0:
            raise ValueError("entropies must be non-negative")


@dataclass(frozen=True)
class EpochStatistics:
    """Epoch-level scheduler signals: EMA sigmas plus epoch means."""

    sigma_i: float
    sigma_t: float
    entropy_i: float
    entropy_t: float
    margin_i: float
    margin_t: float


def batch_statistics(sim: SimilarityMatrix) -> BatchStatistics:
    """Score spread, softmax entropy, and hardest-negative margin per direction."""
    s = sim.s
    n = sim.n
    if n < 2:
        raise ValueError("hardest negative undefined: batch statistics need N >= 2")

    var_i = float(s.var(axis=1).mean())
    var_t = float(s.var(axis=0).mean())

    z = s / sim.tau
    logp_rows = log_softmax_rows(z)
    logp_cols = log_softmax_rows(z.T)
    entropy_i = float(-(np.exp(logp_rows) * logp_rows).sum(axis=1).mean())
    entropy_t = float(-(np.exp(logp_cols) * logp_cols).sum(axis=1).mean())

    diag = np.diag(s)
    masked = np.where(np.eye(n, dtype=bool), -np.inf, s)
    margin_bar_i = float((diag - masked.max(axis=1)).mean())
    margin_bar_t = float((diag - masked.max(axis=0)).mean())

    return BatchStatistics(var_i, var_t, entropy_i, entropy_t, margin_bar_i, margin_bar_t)


def raw_weights_variance(sigma_i: float, sigma_t: float) -> tuple[float, float]:
    """Cross-ratio of per-direction score spreads; falls back to equal weights
    when both spreads vanish."""
    if sigma_i < 0 or sigma_t < 0:
        raise ValueError("standard deviations must be non-negative")
    total = sigma_i + sigma_t
    if total < 1e-12:
        return 0.5, 0.5
    return sigma_t / total, sigma_i / total


def raw_weights_entropy(
    entropy_i: float, entropy_t: float, batch_size: int, clip_fraction: float = 0.9
) -> tuple[float, float]:
    """Entropy-proportional weights, each entropy clipped at
    clip_fraction * ln(batch_size)."""
    ceiling = clip_fraction * math.log(batch_size)
    h_i = min(entropy_i, ceiling)
    h_t = min(entropy_t, ceiling)
    total = h_i + h_t
    if total <= 0:
        return 0.5, 0.5
    return h_i / total, h_t / total


def raw_weights_cosine_spread(
    margin_bar_i: float, margin_bar_t: float, target_margin: float = 0.2
) -> tuple[float, float]:
    """Weights proportional to each direction's margin shortfall below the target.

    Shortfalls are absolute gaps, so unlike the other rules this one is not
    invariant to rescaling all similarity scores.
    """
    if target_margin <= 0:
        raise ValueError(f"target margin must be positive, got {target_margin}")
    short_i = max(0.0, target_margin - margin_bar_i)
    short_t = max(0.0, target_margin - margin_bar_t)
    total = short_i + short_t
    if total <= 0:
        return 0.5, 0.5
    return short_i / total, short_t / total


def apply_cap(prev: LossWeights, raw_w_i: float, raw_w_t: float, cap_fraction: float) -> tuple[float, float]:
    """Clamp each raw weight to prev * [1 - cap, 1 + cap], then renormalize to sum 1."""
    c_i = min(max(raw_w_i, prev.w_i * (1 - cap_fraction)), prev.w_i * (1 + cap_fraction))
    c_t = min(max(raw_w_t, prev.w_t * (1 - cap_fraction)), prev.w_t * (1 + cap_fraction))
    total = c_i + c_t
    return c_i / total, c_t / total


@dataclass
class SchedulerState:
    """Owns the EMA statistics, epoch accumulators, and committed weights.

    The training loop calls :meth:`observe` once per batch and
    :meth:`commit_epoch` once at the end of each epoch; the returned weights
    apply to the following epoch. Weights start at (0.5, 0.5).
    """

    strategy: Strategy
    ema_decay: float = 0.9
    cap_fraction: float = 0.20
    target_margin: float = 0.2
    entropy_clip_fraction: float = 0.9
    prev_weights: LossWeights = field(default_factory=equal_weights)
    ema_var_i: float = 0.0
    ema_var_t: float = 0.0
    ema_seeded: bool = False
    _batch_count: int = field(default=0, init=False, repr=False)
    _batch_size: int = field(default=0, init=False, repr=False)
    _sum_entropy_i: float = field(default=0.0, init=False, repr=False)
    _sum_entropy_t: float = field(default=0.0, init=False, repr=False)
    _sum_margin_i: float = field(default=0.0, init=False, repr=False)
    _sum_margin_t: float = field(default=0.0, init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.cap_fraction <= 1.0:
            raise ValueError(f"cap_fraction must lie in (0, 1], got {self.cap_fraction}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")

    @property
    def weights(self) -> LossWeights:
        return self.prev_weights

    def observe(self, stats: BatchStatistics, batch_size: int) -> None:
        """Fold one batch's statistics into the EMA and epoch accumulators."""
        if self.ema_seeded:
            self.ema_var_i = self.ema_decay * self.ema_var_i + (1 - self.ema_decay) * stats.var_i
            self.ema_var_t = self.ema_decay * self.ema_var_t + (1 - self.ema_decay) * stats.var_t
        else:
            self.ema_var_i = stats.var_i
            self.ema_var_t = stats.var_t
            self.ema_seeded = True
        self._batch_count += 1
        self._batch_size = max(self._batch_size, batch_size)
        self._sum_entropy_i += stats.entropy_i
        self._sum_entropy_t += stats.entropy_t
        self._sum_margin_i += stats.margin_bar_i
        self._sum_margin_t += stats.margin_bar_t

    def epoch_statistics(self) -> EpochStatistics:
        if self._batch_count == 0:
            raise RuntimeError("no batches observed this epoch")
        k = self._batch_count
        return EpochStatistics(
            sigma_i=math.sqrt(self.ema_var_i),
            sigma_t=math.sqrt(self.ema_var_t),
            entropy_i=self._sum_entropy_i / k,
            entropy_t=self._sum_entropy_t / k,
            margin_i=self._sum_margin_i / k,
            margin_t=self._sum_margin_t / k,
        )

    def commit_epoch(self) -> LossWeights:
        """Dispatch to the strategy's raw rule, cap against the previous
        commit, renormalize, and store the result for the next epoch."""
        stats = self.epoch_statistics()  # raises when no batches were observed
        if self.strategy is Strategy.FIXED:
            raw = (0.5, 0.5)
        elif self.strategy is Strategy.VARIANCE:
            raw = raw_weights_variance(stats.sigma_i, stats.sigma_t)
        elif self.strategy is Strategy.ENTROPY:
            raw = raw_weights_entropy(
                stats.entropy_i, stats.entropy_t, self._batch_size, self.entropy_clip_fraction
            )
        elif self.strategy is Strategy.COSINE_SPREAD:
            raw = raw_weights_cosine_spread(stats.margin_i, stats.margin_t, self.target_margin)
        else:  # pragma: no cover
            raise ValueError(f"unknown strategy {self.strategy}")
        w_i, w_t = apply_cap(self.prev_weights, raw[0], raw[1], self.cap_fraction)
        committed = LossWeights(w_i, w_t, self.prev_weights.epoch + 1)
        self.prev_weights = committed
        self._batch_count = 0
        self._batch_size = 0
        self._sum_entropy_i = self._sum_entropy_t = 0.0
        self._sum_margin_i = self._sum_margin_t = 0.0
        return committed


TRAJECTORY_FIELDS = [
    "epoch",
    "strategy",
    "w_i",
    "w_t",
    "sigma_i",
    "sigma_t",
    "entropy_i",
    "entropy_t",
    "margin_i",
    "margin_t",
]


def write_weight_trajectory(path: str | Path, rows: list[dict]) -> None:
    """One CSV row per epoch with the weights used and the signals observed."""
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRAJECTORY_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in TRAJECTORY_FIELDS})
