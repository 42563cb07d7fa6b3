"""Normalization, date splitting, sliding windows, and batching.

Two scalers exist for two different jobs: a z-score fitted on the training
split normalizes model inputs/targets, and a robust quantile min-max maps
physical values into [0, 1] for error reporting. Neither clips.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import (
    AlignmentError,
    DataError,
    DegenerateScaleError,
    RangeError,
    SizeError,
)
from .grid_data import STEP, FeatureFrame, PowerSeries, as_utc

LOOKBACK_STEPS = 96     # 24 h of 15-minute inputs
HORIZON_STEPS = 192     # 48 h forecast horizon
DEFAULT_BATCH_SIZE = 192
QUANTILE_LEVELS = (0.003, 0.997)


# ---------------------------------------------------------------------------
# Scalers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ZScoreParams:
    """Per-feature mean/std fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))
        object.__setattr__(self, "std", np.atleast_1d(np.asarray(self.std, dtype=np.float64)))
        if self.mean.shape != self.std.shape:
            raise AlignmentError("mean and std shapes differ")
        if np.any(self.std <= 0):
            raise DegenerateScaleError("std must be positive (fit_zscore substitutes 1 for constants)")


def fit_zscore(train_data: np.ndarray) -> ZScoreParams:
    """Fit mean/std column-wise; constant columns get std 1 with a warning."""
    x = np.asarray(train_data, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    degenerate = std == 0.0
    if degenerate.any():
        warnings.warn(f"{int(degenerate.sum())} constant feature(s); using std=1", stacklevel=2)
        std = np.where(degenerate, 1.0, std)
    return ZScoreParams(mean, std)


def apply_zscore(x, params: ZScoreParams) -> np.ndarray:
    return (np.asarray(x, dtype=np.float64) - params.mean) / params.std


def invert_zscore(xs, params: ZScoreParams) -> np.ndarray:
    return np.asarray(xs, dtype=np.float64) * params.std + params.mean


@dataclass(frozen=True)
class QuantileScaler:
    """Robust min-max: maps [q_low, q_high] to [0, 1] without clipping."""

    q_low: float
    q_high: float
    levels: tuple = QUANTILE_LEVELS

    def __post_init__(self):
        if not self.q_high > self.q_low:
            raise DegenerateScaleError(f"q_high ({self.q_high}) must exceed q_low ({self.q_low})")

    def apply(self, x) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.q_low) / (self.q_high - self.q_low)

    def invert(self, xs) -> np.ndarray:
        return np.asarray(xs, dtype=np.float64) * (self.q_high - self.q_low) + self.q_low


def fit_quantile_scaler(series, levels: tuple = QUANTILE_LEVELS) -> QuantileScaler:
    """Fit the robust scaler on a value series (length >= 100).

    Quantiles are sorted-order statistics with linear interpolation between
    closest ranks (numpy's default estimator).
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 100:
        raise SizeError(f"need at least 100 values to fit quantiles, got {x.size}")
    lo, hi = levels
    if not (0.0 < lo < hi < 1.0):
        raise DegenerateScaleError(f"levels must be strictly ordered in (0,1), got {levels}")
    q_low, q_high = np.quantile(x, [lo, hi])
    if q_high == q_low:
        raise DegenerateScaleError("quantiles coincide (constant series)")
    return QuantileScaler(float(q_low), float(q_high), (lo, hi))


def scalers_to_json(power: ZScoreParams, features: ZScoreParams,
                    reporting: QuantileScaler | None = None) -> str:
    """Portable text form of the fitted scalers (exact decimal round-trip)."""
    doc = {
        "version": 1,
        "power_zscore": {"mean": power.mean.tolist(), "std": power.std.tolist()},
        "feature_zscore": {"mean": features.mean.tolist(), "std": features.std.tolist()},
    }
    if reporting is not None:
        doc["reporting_quantile"] = {
            "q_low": reporting.q_low, "q_high": reporting.q_high, "levels": list(reporting.levels),
        }
    return json.dumps(doc, indent=2, sort_keys=True)


def scalers_from_json(text: str):
    doc = json.loads(text)
    power = ZScoreParams(np.array(doc["power_zscore"]["mean"]), np.array(doc["power_zscore"]["std"]))
    feats = ZScoreParams(np.array(doc["feature_zscore"]["mean"]), np.array(doc["feature_zscore"]["std"]))
    reporting = None
    if "reporting_quantile" in doc:
        q = doc["reporting_quantile"]
        reporting = QuantileScaler(q["q_low"], q["q_high"], tuple(q["levels"]))
    return power, feats, reporting


# ---------------------------------------------------------------------------
# Date split
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """Date boundaries: train < train_end <= val < val_end <= test."""

    train_end: datetime
    val_end: datetime

    def __post_init__(self):
        object.__setattr__(self, "train_end", as_utc(self.train_end))
        object.__setattr__(self, "val_end", as_utc(self.val_end))
        if not self.train_end < self.val_end:
            raise RangeError("split boundaries must be strictly ordered")


def split_by_dates(power: PowerSeries, features: FeatureFrame, spec: SplitSpec):
    """Partition (power, features) into (train, val, test) pairs.

    Boundary timestamps fall at the start of val/test respectively;
    concatenating the three segments reproduces the original series.
    """
    _check_aligned(power, features)
    i_val = power.index_of(spec.train_end)
    i_test = power.index_of(spec.val_end)
    if not 0 < i_val < i_test < len(power):
        raise RangeError("split boundaries must fall strictly inside the series")
    pieces = []
    for a, b in ((0, i_val), (i_val, i_test), (i_test, len(power))):
        pieces.append((power.slice(a, b), features.slice(a, b)))
    return tuple(pieces)


def _check_aligned(power: PowerSeries, features: FeatureFrame) -> None:
    if power.start_time != features.start_time or len(power) != len(features):
        raise AlignmentError(
            f"power [{power.start_time} x{len(power)}] and features "
            f"[{features.start_time} x{len(features)}] do not share an axis"
        )


# ---------------------------------------------------------------------------
# Windows
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WindowSample:
    """One training sample: lookback windows, target vector, target mask."""

    x_power: np.ndarray     # (lookback,)
    x_feat: np.ndarray      # (lookback, n_features)
    y: np.ndarray           # (horizon,)
    y_mask: np.ndarray      # (horizon,) 1 = usable target
    origin_time: datetime   # time of the last lookback step


class WindowSet:
    """Sliding-window view over an aligned (power, features) pair.

    Stores the base arrays once; indexing materializes zero-copy views, so
    a six-month series costs megabytes, not gigabytes. Sample i has its
    lookback end (forecast origin) at ``origin_times[i]`` and targets
    covering the ``horizon`` steps after it. The target mask is 0 exactly
    where the measurement status flags the value unreliable.
    """

    def __init__(self, power_values, status, feat_data, start_time, lookback=LOOKBACK_STEPS,
                 horizon=HORIZON_STEPS, stride=1, start_offsets=None):
        self.power = np.asarray(power_values, dtype=np.float64)
        self.status = np.asarray(status, dtype=np.uint8)
        self.feat = np.asarray(feat_data, dtype=np.float64)
        self.start_time = as_utc(start_time)
        self.lookback = lookback
        self.horizon = horizon
        n = len(self.power)
        if start_offsets is None:
            if n < lookback + horizon:
                raise SizeError(f"series length {n} < lookback+horizon ({lookback + horizon})")
            start_offsets = np.arange(0, n - lookback - horizon + 1, stride)
        self.starts = np.asarray(start_offsets, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.starts)

    def __getitem__(self, i: int) -> WindowSample:
        s = int(self.starts[i])
        lb, h = self.lookback, self.horizon
        return WindowSample(
            x_power=self.power[s:s + lb],
            x_feat=self.feat[s:s + lb],
            y=self.power[s + lb:s + lb + h],
            y_mask=(self.status[s + lb:s + lb + h] == 0).astype(np.float64),
            origin_time=self.start_time + (s + lb - 1) * STEP,
        )

    def __iter__(self) -> Iterator[WindowSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def origin_times(self) -> list[datetime]:
        return [self.start_time + (int(s) + self.lookback - 1) * STEP for s in self.starts]

    def origin_posix(self) -> np.ndarray:
        t0 = self.start_time.timestamp()
        return t0 + (self.starts + self.lookback - 1) * STEP.total_seconds()

    def subset_by_origin(self, start: datetime | None = None, end: datetime | None = None) -> "WindowSet":
        """Samples whose forecast origin lies in [start, end)."""
        t = self.origin_posix()
        keep = np.ones(len(self), dtype=bool)
        if start is not None:
            keep &= t >= as_utc(start).timestamp()
        if end is not None:
            keep &= t < as_utc(end).timestamp()
        return WindowSet(self.power, self.status, self.feat, self.start_time,
                         self.lookback, self.horizon, start_offsets=self.starts[keep])

    def subset_by_target_span(self, start: datetime, end: datetime) -> "WindowSet":
        """Samples whose full target window lies inside [start, end)."""
        t = self.origin_posix()
        step_s = STEP.total_seconds()
        first_target = t + step_s
        last_target = t + self.horizon * step_s
        keep = (first_target >= as_utc(start).timestamp()) & (last_target < as_utc(end).timestamp())
        return WindowSet(self.power, self.status, self.feat, self.start_time,
                         self.lookback, self.horizon, start_offsets=self.starts[keep])

    def stacked(self, indices=None):
        """Materialize (x_power, x_feat, y, y_mask) arrays for a batch."""
        idx = np.arange(len(self)) if indices is None else np.asarray(indices)
        lb, h = self.lookback, self.horizon
        gather = self.starts[idx][:, None]
        lb_idx = gather + np.arange(lb)[None, :]
        y_idx = gather + lb + np.arange(h)[None, :]
        return (
            self.power[lb_idx][:, :, None],
            self.feat[lb_idx],
            self.power[y_idx],
            (self.status[y_idx] == 0).astype(np.float64),
        )


def make_windows(power: PowerSeries, features: FeatureFrame, lookback: int = LOOKBACK_STEPS,
                 horizon: int = HORIZON_STEPS, stride: int = 1) -> WindowSet:
    """Build every sliding window over an aligned series pair.

    Sample count is N - lookback - horizon + 1 for stride 1; the lookback
    window ends at the forecast origin and targets cover the next
    ``horizon`` steps.
    """
    _check_aligned(power, features)
    return WindowSet(power.values, power.status, features.data, power.start_time,
                     lookback, horizon, stride)


@dataclass(frozen=True)
class Batch:
    x_power: np.ndarray  # (B, lookback, 1)
    x_feat: np.ndarray   # (B, lookback, n_features)
    y: np.ndarray        # (B, horizon)
    y_mask: np.ndarray   # (B, horizon)


def make_batches(samples: WindowSet, batch_size: int = DEFAULT_BATCH_SIZE,
                 shuffle_seed: int | None = None) -> list[Batch]:
    """Split samples into batches; deterministic order given the seed.

    The last partial batch is kept. ``shuffle_seed=None`` keeps the
    original order.
    """
    n = len(samples)
    if n == 0:
        raise DataError("no samples to batch")
    order = np.arange(n)
    if shuffle_seed is not None:
        np.random.default_rng(shuffle_seed).shuffle(order)
    batches = []
    for lo in range(0, n, batch_size):
        xp, xf, y, m = samples.stacked(order[lo:lo + batch_size])
        batches.append(Batch(xp, xf, y, m))
    return batches


def batch_cycler(samples: WindowSet, batch_size: int, rng: np.random.Generator) -> Iterator[Batch]:
    """Endless shuffled batch stream; reshuffles whenever an epoch of data runs out.

    Feeds fixed steps-per-epoch training loops regardless of dataset size.
    """
    n = len(samples)
    if n == 0:
        raise DataError("no samples to batch")
    while True:
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            xp, xf, y, m = samples.stacked(order[lo:lo + batch_size])
            yield Batch(xp, xf, y, m)


def normalized_copy(power: PowerSeries, features: FeatureFrame,
                    power_scaler: ZScoreParams, feat_scaler: ZScoreParams):
    """Apply the z-score scalers, preserving the time axis and status flags."""
    p = PowerSeries(power.start_time, apply_zscore(power.values[:, None], power_scaler)[:, 0],
                    power.status.copy())
    f = FeatureFrame(features.start_time, apply_zscore(features.data, feat_scaler))
    return p, f
