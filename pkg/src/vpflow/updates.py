"""Daily regular-retraining engine and the update-strategy grid.

Each simulated day the current model issues and archives forecasts, then
retrains on windows whose forecast origin lies in that day. Targets that
would require measurements at or after the update instant do not exist
yet and are masked out, which keeps every update strictly causal; the
audit in verify_run re-checks that property from the written artifacts
alone.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, RangeError
from .forecaster import (
    ForecastSet,
    ModelParams,
    model_forward,
    rolling_forecast,
    train_step,
)
from .grid_data import STEP, STEP_SECONDS, FeatureFrame, PowerSeries, as_utc, format_utc, parse_utc
from .neuralnet import LOSSES, adam_init
from .preprocess import Batch, normalized_copy
from .evaluation import (
    CANONICAL_HORIZONS_H,
    HorizonReport,
    QuantileScaler,
    build_reports,
)

DAY = timedelta(days=1)
DAY_STEPS = 96

CANONICAL_EPOCHS = (5, 10, 15, 20)
CANONICAL_LRS = (0.01, 0.001)
DEFAULT_CLIP_NORM = 5.0


@dataclass(frozen=True)
class UpdateStrategy:
    """One retraining regime: epochs x steps_per_epoch Adam steps per day."""

    epochs: int
    learning_rate: float
    steps_per_epoch: int = 1
    loss: str = "mse"
    reset_adam: bool = True
    clip_norm: float | None = DEFAULT_CLIP_NORM

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0 (0 = degenerate no-op strategy)")
        if self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.epochs > 0 and not self.is_canonical:
            warnings.warn(f"non-canonical update strategy {self.label}", stacklevel=2)

    @property
    def is_canonical(self) -> bool:
        return (self.epochs in CANONICAL_EPOCHS and self.learning_rate in CANONICAL_LRS
                and self.steps_per_epoch == 1 and self.loss == "mse")

    @property
    def label(self) -> str:
        return f"e{self.epochs}_lr{self.learning_rate:g}"

    def seed_key(self) -> int:
        return self.epochs * 1000003 + int(round(self.learning_rate * 1e6))


def canonical_strategies() -> list[UpdateStrategy]:
    """The eight production combinations: epochs {5,10,15,20} x lr {0.01, 0.001}."""
    return [UpdateStrategy(epochs=e, learning_rate=lr)
            for e in CANONICAL_EPOCHS for lr in CANONICAL_LRS]


@dataclass
class UpdateRunRecord:
    """Bookkeeping for one simulated day (forecasts first, then the update)."""

    day_index: int
    update_time: datetime
    max_measurement_time: datetime | None
    pre_loss: float
    post_loss: float
    n_forecasts: int
    skipped: bool
    wall_time_s: float


# ---------------------------------------------------------------------------
# Daily update
# ---------------------------------------------------------------------------

def _update_batch(power: PowerSeries, features: FeatureFrame, update_time: datetime,
                  lookback: int, horizon: int):
    """Training batch from windows with forecast origin in the previous day.

    Only measurements strictly before ``update_time`` exist at update
    time, so targets beyond the last available step are zero-padded with
    mask 0. Returns (Batch, max_measurement_time) or (None, None) when no
    window has a full lookback.
    """
    update_time = as_utc(update_time)
    i_last = power.index_of(update_time - STEP)
    origins = np.arange(i_last - DAY_STEPS + 1, i_last + 1)
    origins = origins[origins >= lookback - 1]
    if origins.size == 0:
        return None, None
    lb_rows = origins[:, None] + np.arange(-lookback + 1, 1)
    y_idx = origins[:, None] + np.arange(1, horizon + 1)
    avail = y_idx <= i_last
    y_safe = np.minimum(y_idx, i_last)
    y = np.where(avail, power.values[y_safe], 0.0)
    mask = (avail & (power.status[y_safe] == 0)).astype(np.float64)
    batch = Batch(power.values[lb_rows][:, :, None], features.data[lb_rows], y, mask)
    return batch, power.time_at(i_last)


def daily_update(model: ModelParams, power: PowerSeries, features: FeatureFrame,
                 strategy: UpdateStrategy, update_time: datetime,
                 rng: np.random.Generator, adam_state=None):
    """Retrain ``model`` in place on the day preceding ``update_time``.

    ``power``/``features`` must already be normalized with the model's own
    scalers. The architecture is never touched; only weights move. If the
    previous day is entirely unreliable the update is skipped and the
    model left bit-identical. Returns (pre_loss, post_loss,
    max_measurement_time, skipped, adam_state).
    """
    batch, max_meas = _update_batch(power, features, update_time,
                                    model.arch.lookback, model.arch.output_dim)
    if batch is None or batch.y_mask.sum() == 0:
        warnings.warn(f"update at {update_time} skipped: no usable targets", stacklevel=2)
        return float("nan"), float("nan"), max_meas, True, adam_state

    loss_fn = LOSSES[strategy.loss]
    y_hat, _ = model_forward(model, batch.x_power, batch.x_feat)
    pre_loss, _ = loss_fn(y_hat, batch.y, batch.y_mask)
    if strategy.epochs == 0:
        return pre_loss, pre_loss, max_meas, False, adam_state

    if adam_state is None or strategy.reset_adam:
        adam_state = adam_init(model.named_parameters(), strategy.learning_rate)
    for _ in range(strategy.epochs):
        for _ in range(strategy.steps_per_epoch):
            train_step(model, batch, strategy.loss, adam_state, rng, strategy.clip_norm)
    y_hat, _ = model_forward(model, batch.x_power, batch.x_feat)
    post_loss, _ = loss_fn(y_hat, batch.y, batch.y_mask)
    return pre_loss, post_loss, max_meas, False, adam_state


# ---------------------------------------------------------------------------
# Day-by-day simulation
# ---------------------------------------------------------------------------

def day_origins(day_start: datetime, origins_per_day: int) -> list[datetime]:
    if origins_per_day < 1 or DAY_STEPS % origins_per_day != 0:
        raise ConfigError(f"origins_per_day must divide {DAY_STEPS}, got {origins_per_day}")
    stride = DAY_STEPS // origins_per_day
    return [day_start + k * stride * STEP for k in range(origins_per_day)]


def run_update_simulation(model: ModelParams, power: PowerSeries, features: FeatureFrame,
                          sim_start: datetime, sim_end: datetime, strategy: UpdateStrategy,
                          origins_per_day: int = 6, seed: int = 0,
                          model_id: str | None = None):
    """Chronological forecast-then-retrain loop over [sim_start, sim_end).

    Mutates a private copy of the model. Every simulated day: issue and
    archive forecasts at the configured origins with the current weights,
    then retrain on that day's windows. Returns (ForecastSet,
    UpdateRunRecord list, final model).
    """
    sim_start, sim_end = as_utc(sim_start), as_utc(sim_end)
    n_days = int((sim_end - sim_start) / DAY)
    if n_days < 2 or sim_start + n_days * DAY != sim_end:
        raise RangeError("simulation span must be a whole number of days, at least 2")
    model = model.copy()
    model_id = model_id or f"lstm_updated[{strategy.label}]"
    power_n, features_n = normalized_copy(power, features, model.power_scaler, model.feat_scaler)

    all_origins: list[datetime] = []
    values = []
    records: list[UpdateRunRecord] = []
    adam_state = None
    for d in range(n_days):
        t0 = time.perf_counter()
        day_start = sim_start + d * DAY
        fs, _skipped = rolling_forecast(model, power, features,
                                        day_origins(day_start, origins_per_day), model_id)
        all_origins.extend(fs.origins)
        values.append(fs.values)

        update_time = day_start + DAY
        rng = np.random.default_rng(np.random.SeedSequence([seed, strategy.seed_key(), d]))
        pre, post, max_meas, skipped, adam_state = daily_update(
            model, power_n, features_n, strategy, update_time, rng, adam_state)
        records.append(UpdateRunRecord(d, update_time, max_meas, pre, post,
                                       len(fs.origins), skipped,
                                       time.perf_counter() - t0))
    forecasts = ForecastSet(model_id, all_origins,
                            np.vstack(values) if values else np.empty((0, model.arch.output_dim)))
    return forecasts, records, model


def subset_forecasts(fs: ForecastSet, start: datetime, end: datetime) -> ForecastSet:
    """Forecasts whose origin lies in [start, end)."""
    start, end = as_utc(start), as_utc(end)
    keep = [i for i, o in enumerate(fs.origins) if start <= o < end]
    return ForecastSet(fs.model_id, [fs.origins[i] for i in keep], fs.values[keep])


# ---------------------------------------------------------------------------
# Strategy grid
# ---------------------------------------------------------------------------

@dataclass
class GridRun:
    strategy: UpdateStrategy
    forecasts: ForecastSet
    records: list
    reports: list


def run_strategy_grid(model: ModelParams, power: PowerSeries, features: FeatureFrame,
                      sim_start: datetime, sim_end: datetime, test_start: datetime,
                      scaler: QuantileScaler, transformer_id: str,
                      strategies: list[UpdateStrategy] | None = None,
                      horizons_h=CANONICAL_HORIZONS_H, origins_per_day: int = 6,
                      seed: int = 0):
    """Run every strategy from the same starting weights, fully isolated.

    Each strategy gets a fresh copy of ``model``; evaluation uses only
    forecasts with origins in the test period. Returns a GridRun per
    strategy, in the given order.
    """
    strategies = canonical_strategies() if strategies is None else strategies
    runs = []
    for strat in strategies:
        fs, records, _ = run_update_simulation(model, power, features, sim_start, sim_end,
                                               strat, origins_per_day, seed)
        test_fs = subset_forecasts(fs, test_start, sim_end)
        reports = build_reports(fs.model_id, transformer_id, test_fs, power, scaler, horizons_h)
        runs.append(GridRun(strat, fs, records, reports))
    return runs


def best_strategy_per_horizon(runs: list[GridRun]) -> dict[float, UpdateStrategy]:
    """argmin strategy by nRMSE at each horizon."""
    best: dict[float, tuple[float, UpdateStrategy]] = {}
    for run in runs:
        for rep in run.reports:
            cur = best.get(rep.horizon_h)
            if cur is None or rep.nrmse < cur[0]:
                best[rep.horizon_h] = (rep.nrmse, run.strategy)
    return {h: s for h, (_, s) in sorted(best.items())}


def write_grid_report_csv(path, runs: list[GridRun]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["strategy_epochs", "strategy_lr", "horizon_h", "nrmse", "pearson"])
        for run in runs:
            for rep in run.reports:
                w.writerow([run.strategy.epochs, repr(run.strategy.learning_rate),
                            repr(rep.horizon_h), repr(rep.nrmse), repr(rep.pearson)])


# ---------------------------------------------------------------------------
# Update records and the causality audit
# ---------------------------------------------------------------------------

def write_update_records_csv(path, records: list[UpdateRunRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["day_index", "update_time", "max_measurement_time", "pre_loss",
                    "post_loss", "n_forecasts", "skipped", "wall_time_s"])
        for r in records:
            w.writerow([r.day_index, format_utc(r.update_time),
                        format_utc(r.max_measurement_time) if r.max_measurement_time else "",
                        repr(r.pre_loss), repr(r.post_loss), r.n_forecasts,
                        int(r.skipped), repr(r.wall_time_s)])


def read_update_records_csv(path) -> list[UpdateRunRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            records.append(UpdateRunRecord(
                int(row["day_index"]), parse_utc(row["update_time"]),
                parse_utc(row["max_measurement_time"]) if row["max_measurement_time"] else None,
                float(row["pre_loss"]), float(row["post_loss"]),
                int(row["n_forecasts"]), bool(int(row["skipped"])), float(row["wall_time_s"])))
    return records


def verify_run(archive_path, updates_path, truth: PowerSeries | None = None) -> list[str]:
    """Causality audit of one run's written artifacts.

    Checks, from the files alone: forecasts never contain hindcast rows;
    no update consumed a measurement at or after its own application
    time; and every forecast origin is strictly after the newest
    measurement of every update applied before it. With ``truth``
    provided, archived actuals are re-checked against the measurement
    series. Returns a list of violation descriptions (empty = pass).
    """
    violations: list[str] = []
    origins: set[str] = set()
    with Path(archive_path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            k = int(row["horizon_step"])
            if k < 1:
                violations.append(f"forecast at {row['origin']} has hindcast step {k}")
            origins.add(row["origin"])
            if truth is not None and row["actual_mw"]:
                t = parse_utc(row["origin"]) + k * STEP
                try:
                    idx = truth.index_of(t)
                except Exception:
                    violations.append(f"archived actual at {t} outside the truth series")
                    continue
                if float(row["actual_mw"]) != truth.values[idx] or int(row["status"]) != truth.status[idx]:
                    violations.append(f"archived actual at {t} disagrees with the truth series")

    records = read_update_records_csv(updates_path)
    for r in records:
        if r.max_measurement_time is not None and r.max_measurement_time >= r.update_time:
            violations.append(
                f"update {r.day_index} at {r.update_time} used measurement "
                f"{r.max_measurement_time} from its own future")

    origin_times = sorted(parse_utc(o) for o in origins)
    for r in records:
        if r.max_measurement_time is None:
            continue
        for o in origin_times:
            if o >= r.update_time and r.max_measurement_time >= o:
                violations.append(
                    f"forecast origin {o} saw update {r.day_index} trained on "
                    f"measurement {r.max_measurement_time} at/after the origin")
    return violations
