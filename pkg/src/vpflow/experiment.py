"""Per-scenario pipeline steps shared by the CLI commands.

Directory layout under the experiment output directory:

    scenarios/<id>/power.csv, weather.csv, meta.txt, manifest.yaml
    scenarios/<id>/checkpoint.bin, history.csv, scalers.json
    scenarios/<id>/runs/<model_id>/forecasts.csv, updates.csv
    reports/        cross-scenario CSVs
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from datetime import timedelta
from pathlib import Path

import numpy as np

from .baselines import persistence_last, persistence_last_day
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig
from .errors import DataError
from .evaluation import (
    HorizonReport,
    build_reports,
    reports_from_archive,
    write_forecast_archive,
    write_report_csv,
)
from .forecaster import (
    ForecastSet,
    build_model,
    rolling_forecast,
    train_initial,
    write_history_csv,
)
from .grid_data import (
    FeatureFrame,
    PowerSeries,
    build_feature_frame,
    load_power_csv,
    load_transformer_meta,
    load_weather_csv,
)
from .preprocess import (
    fit_quantile_scaler,
    fit_zscore,
    make_windows,
    normalized_copy,
    scalers_to_json,
)
from .synthgrid import canonical_fleet, generate_and_write
from .updates import (
    GridRun,
    UpdateStrategy,
    day_origins,
    run_update_simulation,
    subset_forecasts,
    write_grid_report_csv,
    write_update_records_csv,
)

FROZEN_ID = "lstm"
UPDATED_ID = "lstm_updated"
BASELINE_IDS = ("persistence_24h", "persistence_last")
MAIN_MODELS = (FROZEN_ID, UPDATED_ID) + BASELINE_IDS


def scenario_seed(cfg: ExperimentConfig, transformer_id: str) -> int:
    """Stable per-transformer seed derived from the experiment seed."""
    return int(np.random.SeedSequence([cfg.seed, zlib.crc32(transformer_id.encode())])
               .generate_state(1)[0])


@dataclass
class ScenarioData:
    directory: Path
    transformer_id: str
    power: PowerSeries
    features: FeatureFrame


def scenario_dirs(cfg: ExperimentConfig) -> list[Path]:
    root = cfg.out_dir() / "scenarios"
    if not root.is_dir():
        raise DataError(f"no scenarios directory under {cfg.out}; run `generate` first")
    dirs = sorted(p for p in root.iterdir() if (p / "power.csv").is_file())
    if not dirs:
        raise DataError(f"no scenario data under {root}; run `generate` first")
    return dirs


def generate_scenarios(cfg: ExperimentConfig) -> list[Path]:
    """Write the canonical fleet (or the single configured scenario) to disk."""
    specs = canonical_fleet(cfg.seed) if cfg.fleet else [cfg.scenario]
    dirs = []
    for spec in specs:
        directory = cfg.out_dir() / "scenarios" / spec.transformer_id
        generate_and_write(directory, spec)
        dirs.append(directory)
    return dirs


def load_scenario(directory) -> ScenarioData:
    directory = Path(directory)
    power = load_power_csv(directory / "power.csv")
    records = load_weather_csv(directory / "weather.csv")
    meta = load_transformer_meta(directory / "meta.txt")
    features = build_feature_frame(records, meta.lat, meta.lon, power.start_time, len(power))
    return ScenarioData(directory, meta.id, power, features)


def train_scenario(data: ScenarioData, cfg: ExperimentConfig) -> Path:
    """Fit scalers on the train split, train the model, write the checkpoint."""
    from .preprocess import split_by_dates

    (train_p, train_f), _, _ = split_by_dates(data.power, data.features, cfg.split)
    power_scaler = fit_zscore(train_p.values[:, None])
    feat_scaler = fit_zscore(train_f.data)

    seed = scenario_seed(cfg, data.transformer_id)
    model = build_model(cfg.arch, seed, power_scaler, feat_scaler)

    power_n, features_n = normalized_copy(data.power, data.features, power_scaler, feat_scaler)
    windows = make_windows(power_n, features_n, cfg.arch.lookback, cfg.arch.output_dim)
    train_windows = windows.subset_by_target_span(data.power.start_time, cfg.train_end)
    val_windows = windows.subset_by_target_span(cfg.train_end, cfg.val_end)

    training = replace(cfg.training, seed=seed)
    model, history = train_initial(model, train_windows, val_windows, training)
    if any(not np.isfinite(h.val_loss) for h in history):
        raise FloatingPointError("non-finite validation loss during training")

    ckpt = data.directory / "checkpoint.bin"
    save_checkpoint(ckpt, model, meta={"transformer_id": data.transformer_id,
                                       "preset": cfg.preset, "seed": seed})
    write_history_csv(data.directory / "history.csv", history)
    (data.directory / "scalers.json").write_text(scalers_to_json(power_scaler, feat_scaler))
    return ckpt


def _run_dir(data: ScenarioData, model_id: str) -> Path:
    d = data.directory / "runs" / model_id
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_run(data: ScenarioData, forecasts: ForecastSet, records=None) -> Path:
    d = _run_dir(data, forecasts.model_id)
    write_forecast_archive(d / "forecasts.csv", forecasts, data.power)
    write_update_records_csv(d / "updates.csv", records or [])
    return d


def test_span(cfg: ExperimentConfig, data: ScenarioData):
    test_start = cfg.val_end
    end = data.power.end_time + data.power.step
    return test_start, end


def frozen_and_baseline_runs(data: ScenarioData, cfg: ExperimentConfig) -> list[Path]:
    """Archive the frozen-model and persistence forecasts over the test period."""
    model, _, _ = load_checkpoint(data.directory / "checkpoint.bin")
    test_start, end = test_span(cfg, data)
    n_days = int((end - test_start).total_seconds() // 86400)
    origins = []
    for d in range(n_days):
        origins.extend(day_origins(test_start + timedelta(days=d), cfg.origins_per_day))

    written = []
    fs, _ = rolling_forecast(model, data.power, data.features, origins, FROZEN_ID)
    written.append(_write_run(data, fs))

    horizon = model.arch.output_dim
    last = np.stack([persistence_last(data.power, o, horizon) for o in origins])
    day = np.stack([persistence_last_day(data.power, o, horizon) for o in origins])
    written.append(_write_run(data, ForecastSet("persistence_last", origins, last)))
    written.append(_write_run(data, ForecastSet("persistence_24h", origins, day)))
    return written


def updated_run(data: ScenarioData, cfg: ExperimentConfig,
                strategy: UpdateStrategy | None = None,
                model_id: str = UPDATED_ID) -> Path:
    """Daily-retraining simulation from the validation start through the end."""
    model, _, _ = load_checkpoint(data.directory / "checkpoint.bin")
    sim_start = cfg.train_end  # validation start: data the model has not fitted
    _, end = test_span(cfg, data)
    strategy = strategy or cfg.update
    fs, records, _ = run_update_simulation(
        model, data.power, data.features, sim_start, end, strategy,
        cfg.origins_per_day, scenario_seed(cfg, data.transformer_id), model_id)
    return _write_run(data, fs, records)


def grid_runs(data: ScenarioData, cfg: ExperimentConfig) -> Path:
    """Run the full strategy grid; archives every run plus the grid report."""
    model, _, _ = load_checkpoint(data.directory / "checkpoint.bin")
    sim_start = cfg.train_end
    test_start, end = test_span(cfg, data)
    scaler = fit_quantile_scaler(data.power.values)
    seed = scenario_seed(cfg, data.transformer_id)

    runs = []
    for strat in cfg.grid_strategies():
        fs, records, _ = run_update_simulation(model, data.power, data.features,
                                               sim_start, end, strat,
                                               cfg.origins_per_day, seed)
        _write_run(data, fs, records)
        test_fs = subset_forecasts(fs, test_start, end)
        reports = build_reports(fs.model_id, data.transformer_id, test_fs, data.power,
                                scaler, cfg.horizons_h)
        runs.append(GridRun(strat, fs, records, reports))
    report_path = data.directory / "grid_report.csv"
    write_grid_report_csv(report_path, runs)
    return report_path


def evaluate_scenario(data: ScenarioData, cfg: ExperimentConfig) -> list[HorizonReport]:
    """Reports for every archived run of this scenario (test origins only)."""
    scaler = fit_quantile_scaler(data.power.values)
    runs_root = data.directory / "runs"
    if not runs_root.is_dir():
        raise DataError(f"no runs under {data.directory}; run `forecast`/`update-run` first")
    reports: list[HorizonReport] = []
    for run_dir in sorted(runs_root.iterdir()):
        archive = run_dir / "forecasts.csv"
        if not archive.is_file():
            continue
        reports.extend(reports_from_archive(run_dir.name, data.transformer_id, archive,
                                            scaler, cfg.horizons_h))
    if not reports:
        raise DataError(f"no forecast archives under {runs_root}")
    write_report_csv(data.directory / "reports.csv", reports)
    return reports
