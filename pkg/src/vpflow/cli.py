"""Command-line experiment driver.

Commands: generate, train, forecast, update-run, grid, evaluate, compare,
verify-archive. Every command takes --config/--seed/--preset/--out and is
reproducible: fixed config and seed give identical output files.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

from .config import ExperimentConfig, echo_config, load_config
from .errors import ConfigError, DataError, VpflowError
from .evaluation import (
    improvement,
    mean_improvement,
    compare_models,
    read_report_csv,
    write_boxplot_csv,
    write_improvement_csv,
    write_report_csv,
)
from .experiment import (
    BASELINE_IDS,
    FROZEN_ID,
    MAIN_MODELS,
    UPDATED_ID,
    evaluate_scenario,
    frozen_and_baseline_runs,
    generate_scenarios,
    grid_runs,
    load_scenario,
    scenario_dirs,
    train_scenario,
    updated_run,
)
from .grid_data import load_power_csv
from .updates import verify_run

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="vpflow", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("generate", "write synthetic scenario data"),
        ("train", "initial training per scenario"),
        ("forecast", "frozen-model and persistence forecasts over the test period"),
        ("update-run", "daily-retraining simulation with the configured strategy"),
        ("grid", "all update strategies from the same checkpoint"),
        ("evaluate", "per-horizon reports for every archived run"),
        ("compare", "cross-model comparison, boxplot data, improvement deltas"),
        ("verify-archive", "causality audit of every archived run"),
    ]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None, help="YAML experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the experiment seed")
        p.add_argument("--preset", choices=["paper", "desk"], default=None,
                       help="architecture preset override")
        p.add_argument("--out", type=str, default=None, help="output directory override")
        if name in ("train", "forecast", "update-run", "grid", "evaluate"):
            p.add_argument("--scenario", type=str, default=None,
                           help="restrict to one transformer id")
    return parser


def _config(args) -> ExperimentConfig:
    overrides = {"seed": args.seed, "preset": args.preset, "out": args.out}
    return load_config(args.config, overrides)


def _selected(cfg: ExperimentConfig, args):
    dirs = scenario_dirs(cfg)
    if getattr(args, "scenario", None):
        dirs = [d for d in dirs if d.name == args.scenario]
        if not dirs:
            raise DataError(f"scenario {args.scenario!r} not found under {cfg.out}")
    return dirs


def cmd_generate(cfg: ExperimentConfig, args) -> int:
    dirs = generate_scenarios(cfg)
    echo_config(cfg)
    for d in dirs:
        print(f"generated {d}")
    return EXIT_OK


def cmd_train(cfg: ExperimentConfig, args) -> int:
    echo_config(cfg)
    for d in _selected(cfg, args):
        data = load_scenario(d)
        ckpt = train_scenario(data, cfg)
        print(f"trained {data.transformer_id} -> {ckpt}")
    return EXIT_OK


def cmd_forecast(cfg: ExperimentConfig, args) -> int:
    for d in _selected(cfg, args):
        data = load_scenario(d)
        for run in frozen_and_baseline_runs(data, cfg):
            print(f"archived {run}")
    return EXIT_OK


def cmd_update_run(cfg: ExperimentConfig, args) -> int:
    for d in _selected(cfg, args):
        data = load_scenario(d)
        run = updated_run(data, cfg)
        print(f"archived {run}")
    return EXIT_OK


def cmd_grid(cfg: ExperimentConfig, args) -> int:
    for d in _selected(cfg, args):
        data = load_scenario(d)
        report = grid_runs(data, cfg)
        print(f"grid report {report}")
    return EXIT_OK


def cmd_evaluate(cfg: ExperimentConfig, args) -> int:
    for d in _selected(cfg, args):
        data = load_scenario(d)
        reports = evaluate_scenario(data, cfg)
        models = sorted({r.model_id for r in reports})
        print(f"{data.transformer_id}: {len(reports)} report rows over {models}")
    return EXIT_OK


def cmd_compare(cfg: ExperimentConfig, args) -> int:
    dirs = scenario_dirs(cfg)
    all_reports = []
    for d in dirs:
        path = d / "reports.csv"
        if not path.is_file():
            raise DataError(f"missing {path}; run `evaluate` first")
        all_reports.extend(read_report_csv(path))

    reports_dir = cfg.out_dir() / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    write_report_csv(reports_dir / "all_reports.csv", all_reports)

    main = [r for r in all_reports if r.model_id in MAIN_MODELS]
    present = {r.model_id for r in main}
    missing = set(MAIN_MODELS) - present
    if missing:
        raise DataError(f"missing archives for models: {sorted(missing)}; "
                        f"run `forecast` and `update-run` first")
    rows = compare_models(main)
    write_boxplot_csv(reports_dir / "boxplot.csv", rows)

    frozen = [r for r in main if r.model_id == FROZEN_ID]
    updated = [r for r in main if r.model_id == UPDATED_ID]
    records = improvement(frozen, updated)
    write_improvement_csv(reports_dir / "improvement.csv", records)

    by_horizon: dict[float, list] = defaultdict(list)
    for r in main:
        by_horizon[r.horizon_h].append(r)
    print("horizon_h  best_model            median_nrmse")
    for h in sorted(by_horizon):
        med = {}
        for model in sorted(present):
            vals = sorted(x.nrmse for x in by_horizon[h] if x.model_id == model)
            med[model] = vals[len(vals) // 2]
        best = min(med, key=med.get)
        print(f"{h:9g}  {best:20s}  {med[best]:.4f}")
    print(f"mean improvement (frozen - updated): {mean_improvement(records):+.4f} nRMSE")
    return EXIT_OK


def cmd_verify_archive(cfg: ExperimentConfig, args) -> int:
    n_runs = 0
    violations: list[str] = []
    for d in scenario_dirs(cfg):
        truth = load_power_csv(d / "power.csv")
        runs_root = d / "runs"
        if not runs_root.is_dir():
            continue
        for run_dir in sorted(runs_root.iterdir()):
            archive, updates = run_dir / "forecasts.csv", run_dir / "updates.csv"
            if not archive.is_file():
                continue
            n_runs += 1
            for v in verify_run(archive, updates, truth):
                violations.append(f"{run_dir}: {v}")
    if n_runs == 0:
        raise DataError("no archived runs to verify")
    for v in violations:
        print(f"VIOLATION {v}")
    print(f"verified {n_runs} runs: {len(violations)} look-ahead violations")
    return EXIT_OK if not violations else EXIT_DATA


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "forecast": cmd_forecast,
    "update-run": cmd_update_run,
    "grid": cmd_grid,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "verify-archive": cmd_verify_archive,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _config(args)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (VpflowError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
