"""Declarative experiment configuration.

A single YAML file drives every command; all production hyperparameters
appear as named keys with their default values, so an empty file is a
valid full-scale experiment. The resolved configuration is echoed into
the output directory and can be re-run verbatim.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from datetime import datetime
from pathlib import Path

import yaml

from .errors import ConfigError
from .forecaster import ARCH_PRESETS, ArchitectureSpec, TrainingConfig
from .grid_data import format_utc, parse_utc
from .preprocess import SplitSpec
from .synthgrid import FLEET_TRAIN_END, FLEET_VAL_END, ScenarioSpec, spec_from_dict, spec_to_dict
from .updates import CANONICAL_EPOCHS, CANONICAL_LRS, UpdateStrategy


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 42
    preset: str = "paper"
    out: str = "runs/experiment"
    jobs: int = 1
    fleet: bool = True
    scenario: ScenarioSpec | None = None
    train_end: datetime = FLEET_TRAIN_END
    val_end: datetime = FLEET_VAL_END
    training: TrainingConfig = field(default_factory=TrainingConfig)
    update: UpdateStrategy = field(default_factory=lambda: UpdateStrategy(5, 0.001))
    grid_epochs: tuple = CANONICAL_EPOCHS
    grid_learning_rates: tuple = CANONICAL_LRS
    horizons_h: tuple = (1, 4, 8, 16, 24, 32, 48)
    origins_per_day: int = 6

    def __post_init__(self):
        if self.preset not in ARCH_PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(ARCH_PRESETS)}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        if not self.fleet and self.scenario is None:
            raise ConfigError("either fleet: true or an explicit scenario is required")

    @property
    def arch(self) -> ArchitectureSpec:
        return ARCH_PRESETS[self.preset]

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_end, self.val_end)

    def grid_strategies(self) -> list[UpdateStrategy]:
        return [UpdateStrategy(epochs=e, learning_rate=lr)
                for e in self.grid_epochs for lr in self.grid_learning_rates]

    def out_dir(self) -> Path:
        return Path(self.out)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return {
        "seed": cfg.seed,
        "preset": cfg.preset,
        "out": cfg.out,
        "jobs": cfg.jobs,
        "fleet": cfg.fleet,
        "scenario": spec_to_dict(cfg.scenario) if cfg.scenario else None,
        "split": {"train_end": format_utc(cfg.train_end), "val_end": format_utc(cfg.val_end)},
        "training": {
            "epochs": cfg.training.epochs,
            "steps_per_epoch": cfg.training.steps_per_epoch,
            "batch_size": cfg.training.batch_size,
            "learning_rate": cfg.training.learning_rate,
            "loss": cfg.training.loss,
            "early_stopping_patience": cfg.training.early_stopping_patience,
            "clip_norm": cfg.training.clip_norm,
        },
        "update": {
            "epochs": cfg.update.epochs,
            "learning_rate": cfg.update.learning_rate,
            "steps_per_epoch": cfg.update.steps_per_epoch,
            "loss": cfg.update.loss,
            "reset_adam": cfg.update.reset_adam,
            "clip_norm": cfg.update.clip_norm,
        },
        "grid": {"epochs": list(cfg.grid_epochs), "learning_rates": list(cfg.grid_learning_rates)},
        "evaluation": {"horizons_h": list(cfg.horizons_h), "origins_per_day": cfg.origins_per_day},
    }


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc or {})
    kwargs: dict = {}
    for key in ("seed", "preset", "out", "jobs", "fleet"):
        if key in doc and doc[key] is not None:
            kwargs[key] = doc[key]
    if doc.get("scenario"):
        kwargs["scenario"] = spec_from_dict(doc["scenario"])
        kwargs.setdefault("fleet", False)
    split = doc.get("split") or {}
    if "train_end" in split:
        kwargs["train_end"] = parse_utc(split["train_end"])
    if "val_end" in split:
        kwargs["val_end"] = parse_utc(split["val_end"])
    training = doc.get("training") or {}
    base_training = TrainingConfig(seed=kwargs.get("seed", 42))
    if training:
        kwargs["training"] = replace(base_training, **training)
    else:
        kwargs["training"] = base_training
    update = doc.get("update") or {}
    if update:
        kwargs["update"] = UpdateStrategy(**update)
    grid = doc.get("grid") or {}
    if "epochs" in grid:
        kwargs["grid_epochs"] = tuple(grid["epochs"])
    if "learning_rates" in grid:
        kwargs["grid_learning_rates"] = tuple(grid["learning_rates"])
    evaluation = doc.get("evaluation") or {}
    if "horizons_h" in evaluation:
        kwargs["horizons_h"] = tuple(evaluation["horizons_h"])
    if "origins_per_day" in evaluation:
        kwargs["origins_per_day"] = evaluation["origins_per_day"]
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a YAML config file, then apply command-line overrides."""
    doc: dict = {}
    if path is not None:
        text = Path(path).read_text()
        loaded = yaml.safe_load(text)
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        doc = loaded
    for key, value in (overrides or {}).items():
        if value is not None:
            doc[key] = value
    return config_from_dict(doc)


def echo_config(cfg: ExperimentConfig) -> None:
    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_resolved.yaml").write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True))
