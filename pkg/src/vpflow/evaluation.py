"""Per-horizon error metrics, model comparison, and improvement deltas.

Errors are reported as normalized RMSE: both forecast and truth pass
through the robust quantile min-max scaler fitted on the transformer's
measurement series, so errors are comparable across transformers of very
different magnitudes. Unreliable truth samples never enter a metric.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DataError, RangeError, UndefinedCorrelationError
from .forecaster import ForecastSet
from .grid_data import STEP_SECONDS, PowerSeries, format_utc, parse_utc, posix_seconds
from .preprocess import QuantileScaler

CANONICAL_HORIZONS_H = (1, 4, 8, 16, 24, 32, 48)


def horizon_to_steps(horizon_h: float) -> int:
    k = round(horizon_h * 3600 / STEP_SECONDS)
    if k < 1 or abs(k * STEP_SECONDS - horizon_h * 3600) > 1e-9:
        raise RangeError(f"horizon {horizon_h} h is not a positive multiple of 15 minutes")
    return k


@dataclass(frozen=True)
class HorizonReport:
    """Error metrics of one model on one transformer at one horizon."""

    model_id: str
    transformer_id: str
    horizon_h: float
    nrmse: float
    pearson: float
    n_samples: int


@dataclass(frozen=True)
class ImprovementRecord:
    """nRMSE delta gained by the updated model; positive = update helps."""

    transformer_id: str
    horizon_h: float
    delta: float
    ratio: float


# ---------------------------------------------------------------------------
# Pair extraction and core metrics
# ---------------------------------------------------------------------------

def pairs_at_horizon(forecasts: ForecastSet, truth: PowerSeries, horizon_steps: int):
    """(predicted, actual, reliable) arrays for one horizon step.

    Origins whose target time falls outside the truth series are dropped.
    """
    t0 = posix_seconds(truth.start_time)
    pred, actual, reliable = [], [], []
    for i, origin in enumerate(forecasts.origins):
        pos = (posix_seconds(origin) - t0) / STEP_SECONDS
        idx = int(round(pos)) + horizon_steps
        if pos != int(pos):
            raise AlignmentError(f"forecast origin {origin} off the truth grid")
        if not 0 <= idx < len(truth):
            continue
        pred.append(forecasts.values[i, horizon_steps - 1])
        actual.append(truth.values[idx])
        reliable.append(truth.status[idx] == 0)
    return np.asarray(pred), np.asarray(actual), np.asarray(reliable, dtype=bool)


def nrmse_from_pairs(pred: np.ndarray, actual: np.ndarray, scaler: QuantileScaler) -> float:
    if pred.size == 0:
        raise DataError("no usable forecast/truth pairs")
    err = scaler.apply(pred) - scaler.apply(actual)
    return float(np.sqrt(np.mean(err * err)))


def pearson_from_pairs(pred: np.ndarray, actual: np.ndarray) -> float:
    if pred.size < 2:
        raise DataError("need at least two pairs for a correlation")
    p = pred - pred.mean()
    a = actual - actual.mean()
    denom = np.sqrt((p * p).sum() * (a * a).sum())
    if denom == 0.0:
        raise UndefinedCorrelationError("zero variance in forecasts or truth")
    return float((p * a).sum() / denom)


def nrmse(forecasts: ForecastSet, truth: PowerSeries, scaler: QuantileScaler,
          horizon_h: float) -> float:
    """Normalized RMSE at one forecast horizon (hours)."""
    k = horizon_to_steps(horizon_h)
    pred, actual, reliable = pairs_at_horizon(forecasts, truth, k)
    return nrmse_from_pairs(pred[reliable], actual[reliable], scaler)


def pearson(forecasts: ForecastSet, truth: PowerSeries, horizon_h: float) -> float:
    """Sample Pearson correlation at one forecast horizon (hours)."""
    k = horizon_to_steps(horizon_h)
    pred, actual, reliable = pairs_at_horizon(forecasts, truth, k)
    return pearson_from_pairs(pred[reliable], actual[reliable])


def n_usable_pairs(forecasts: ForecastSet, truth: PowerSeries, horizon_h: float) -> int:
    k = horizon_to_steps(horizon_h)
    _, _, reliable = pairs_at_horizon(forecasts, truth, k)
    return int(reliable.sum())


def build_reports(model_id: str, transformer_id: str, forecasts: ForecastSet,
                  truth: PowerSeries, scaler: QuantileScaler,
                  horizons_h=CANONICAL_HORIZONS_H) -> list[HorizonReport]:
    """One HorizonReport per requested horizon."""
    reports = []
    for h in horizons_h:
        k = horizon_to_steps(h)
        pred, actual, reliable = pairs_at_horizon(forecasts, truth, k)
        pred, actual = pred[reliable], actual[reliable]
        try:
            r = pearson_from_pairs(pred, actual)
        except (DataError, UndefinedCorrelationError):
            r = float("nan")
        reports.append(HorizonReport(model_id, transformer_id, float(h),
                                     nrmse_from_pairs(pred, actual, scaler), r, pred.size))
    return reports


# ---------------------------------------------------------------------------
# Cross-model comparison and improvement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxplotRow:
    model_id: str
    horizon_h: float
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


def compare_models(reports: list[HorizonReport]):
    """Aggregate reports into per-(model, horizon) nRMSE distributions.

    All models must cover the same (transformer, horizon) grid; returns
    boxplot rows sorted by (model, horizon).
    """
    by_model: dict[str, dict] = {}
    for r in reports:
        by_model.setdefault(r.model_id, {})[(r.transformer_id, r.horizon_h)] = r
    keys = None
    for model_id, table in sorted(by_model.items()):
        if keys is None:
            keys = set(table)
        elif set(table) != keys:
            raise AlignmentError(f"model {model_id} evaluated on a different grid")
    rows = []
    for model_id, table in sorted(by_model.items()):
        horizons = sorted({h for (_, h) in table})
        for h in horizons:
            vals = np.sort(np.array([table[k].nrmse for k in table if k[1] == h]))
            q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
            rows.append(BoxplotRow(model_id, h, float(vals[0]), float(q1), float(med),
                                   float(q3), float(vals[-1])))
    return rows


def improvement(frozen_reports: list[HorizonReport],
                updated_reports: list[HorizonReport]) -> list[ImprovementRecord]:
    """Per-(transformer, horizon) nRMSE deltas, frozen minus updated.

    ``delta`` is in percentage points of the normalized scale; ``ratio``
    is the relative reduction against the frozen model.
    """
    frozen = {(r.transformer_id, r.horizon_h): r for r in frozen_reports}
    updated = {(r.transformer_id, r.horizon_h): r for r in updated_reports}
    if frozen.keys() != updated.keys():
        missing = frozen.keys() ^ updated.keys()
        raise AlignmentError(f"mismatched (transformer, horizon) keys: {sorted(missing)}")
    records = []
    for key in sorted(frozen):
        f, u = frozen[key], updated[key]
        delta = f.nrmse - u.nrmse
        ratio = delta / f.nrmse if f.nrmse > 0 else float("nan")
        records.append(ImprovementRecord(key[0], key[1], delta, ratio))
    return records


def mean_improvement(records: list[ImprovementRecord]) -> float:
    return float(np.mean([r.delta for r in records]))


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def write_report_csv(path, reports: list[HorizonReport]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "transformer", "horizon_h", "nrmse", "pearson", "n"])
        for r in reports:
            w.writerow([r.model_id, r.transformer_id, repr(r.horizon_h),
                        repr(r.nrmse), repr(r.pearson), r.n_samples])


def read_report_csv(path) -> list[HorizonReport]:
    reports = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            reports.append(HorizonReport(row["model"], row["transformer"],
                                         float(row["horizon_h"]), float(row["nrmse"]),
                                         float(row["pearson"]), int(row["n"])))
    return reports


def write_boxplot_csv(path, rows: list[BoxplotRow]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "horizon_h", "min", "q1", "median", "q3", "max"])
        for r in rows:
            w.writerow([r.model_id, repr(r.horizon_h), repr(r.minimum), repr(r.q1),
                        repr(r.median), repr(r.q3), repr(r.maximum)])


def write_improvement_csv(path, records: list[ImprovementRecord]) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transformer", "horizon_h", "delta", "ratio"])
        for r in records:
            w.writerow([r.transformer_id, repr(r.horizon_h), repr(r.delta), repr(r.ratio)])


def write_forecast_archive(path, forecasts: ForecastSet, truth: PowerSeries) -> None:
    """Long-format archive: origin, horizon_step, predicted, actual, status.

    Targets beyond the end of the truth series get an empty actual and
    status 1 so the file stays rectangular and self-contained.
    """
    t0 = posix_seconds(truth.start_time)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["origin", "horizon_step", "predicted_mw", "actual_mw", "status"])
        for i, origin in enumerate(forecasts.origins):
            base = int(round((posix_seconds(origin) - t0) / STEP_SECONDS))
            stamp = format_utc(origin)
            for k in range(1, forecasts.horizon + 1):
                idx = base + k
                if 0 <= idx < len(truth):
                    actual, status = repr(float(truth.values[idx])), int(truth.status[idx])
                else:
                    actual, status = "", 1
                w.writerow([stamp, k, repr(float(forecasts.values[i, k - 1])), actual, status])


def read_forecast_archive(path, model_id: str = "archived"):
    """Read an archive back into (ForecastSet, actual, status) arrays.

    ``actual`` entries missing in the file are NaN with status 1.
    """
    rows: dict[str, dict[int, tuple]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            entry = rows.setdefault(row["origin"], {})
            actual = float(row["actual_mw"]) if row["actual_mw"] else float("nan")
            entry[int(row["horizon_step"])] = (float(row["predicted_mw"]), actual, int(row["status"]))
    if not rows:
        raise DataError(f"{path}: empty forecast archive")
    horizon = max(max(e) for e in rows.values())
    origins = sorted(rows, key=parse_utc)
    pred = np.full((len(origins), horizon), np.nan)
    actual = np.full((len(origins), horizon), np.nan)
    status = np.ones((len(origins), horizon), dtype=np.uint8)
    for i, o in enumerate(origins):
        for k, (p, a, s) in rows[o].items():
            pred[i, k - 1] = p
            actual[i, k - 1] = a
            status[i, k - 1] = s
    fs = ForecastSet(model_id, [parse_utc(o) for o in origins], pred)
    return fs, actual, status


def reports_from_archive(model_id: str, transformer_id: str, archive_path,
                         scaler: QuantileScaler, horizons_h=CANONICAL_HORIZONS_H) -> list[HorizonReport]:
    """Compute HorizonReports directly from an archive file."""
    fs, actual, status = read_forecast_archive(archive_path, model_id)
    reports = []
    for h in horizons_h:
        k = horizon_to_steps(h)
        pred_k = fs.values[:, k - 1]
        actual_k = actual[:, k - 1]
        ok = (status[:, k - 1] == 0) & np.isfinite(actual_k) & np.isfinite(pred_k)
        try:
            r = pearson_from_pairs(pred_k[ok], actual_k[ok])
        except (DataError, UndefinedCorrelationError):
            r = float("nan")
        reports.append(HorizonReport(model_id, transformer_id, float(h),
                                     nrmse_from_pairs(pred_k[ok], actual_k[ok], scaler),
                                     r, int(ok.sum())))
    return reports
