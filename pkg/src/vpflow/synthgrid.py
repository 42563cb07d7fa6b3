"""Synthetic drifting-transformer scenarios.

Each scenario composes a periodic consumption profile with photovoltaic
and wind generation driven by shared weather processes; the vertical flow
is load minus generation, so transformers can swing negative when
generation dominates. Capacity step events reproduce the
changed-characteristic regime that motivates daily retraining. Everything
is deterministic per seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError
from .grid_data import (
    STEP,
    STEP_SECONDS,
    SOLAR_CONSTANT_WM2,
    PowerSeries,
    TransformerMeta,
    WeatherRecord,
    as_utc,
    clear_sky_radiation,
    format_utc,
    parse_utc,
    sun_position_series,
    write_power_csv,
    write_transformer_meta,
    write_weather_csv,
)
from .preprocess import SplitSpec

ASSETS = ("pv", "wind", "load")
WEATHER_SUBSAMPLE = 12  # 3 h of 15-minute steps

CUT_IN_MS = 3.0
RATED_MS = 12.0
CUT_OUT_MS = 25.0


@dataclass(frozen=True)
class CapacityEvent:
    """Step change: the asset's scale becomes ``factor`` from ``date`` onward."""

    date: datetime
    asset: str
    factor: float

    def __post_init__(self):
        object.__setattr__(self, "date", as_utc(self.date))
        if self.asset not in ASSETS:
            raise ConfigError(f"event asset must be one of {ASSETS}, got {self.asset!r}")
        if self.factor < 0:
            raise ConfigError("event factor must be >= 0")


@dataclass(frozen=True)
class ScenarioSpec:
    """Full description of one synthetic transformer."""

    transformer_id: str
    lat: float
    lon: float
    start: datetime
    end: datetime
    base_load_mw: float
    daily_amplitude: float = 0.25
    weekend_factor: float = 0.85
    load_noise_mw: float = 0.5
    pv_capacity_mw: float = 0.0
    wind_capacity_mw: float = 0.0
    events: tuple = ()
    weather_noise: float = 1.0
    unreliable_fraction: float = 0.01
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "start", as_utc(self.start))
        object.__setattr__(self, "end", as_utc(self.end))
        object.__setattr__(self, "events", tuple(self.events))
        if self.end <= self.start:
            raise ConfigError("scenario end must come after start")
        if self.base_load_mw < 0 or self.pv_capacity_mw < 0 or self.wind_capacity_mw < 0:
            raise ConfigError("capacities must be >= 0")
        if not 0.0 <= self.unreliable_fraction < 1.0:
            raise ConfigError("unreliable_fraction must be in [0,1)")
        for ev in self.events:
            if not self.start <= ev.date < self.end:
                raise ConfigError(f"event date {ev.date} outside scenario span")

    @property
    def n_steps(self) -> int:
        return int((self.end - self.start).total_seconds() // STEP_SECONDS)


@dataclass
class SyntheticBundle:
    """Generated scenario: measurements, weather, and diagnostic components."""

    spec: ScenarioSpec
    power: PowerSeries
    weather: list
    load: np.ndarray
    pv_gen: np.ndarray
    wind_gen: np.ndarray


# ---------------------------------------------------------------------------
# Stochastic building blocks
# ---------------------------------------------------------------------------

def _ou_process(rng, n, mean, sigma, tau_steps, x0=None):
    """Ornstein-Uhlenbeck path sampled at unit steps."""
    rho = math.exp(-1.0 / tau_steps)
    innov = sigma * math.sqrt(1.0 - rho * rho)
    x = np.empty(n)
    x[0] = mean if x0 is None else x0
    eps = rng.standard_normal(n)
    for t in range(1, n):
        x[t] = mean + rho * (x[t - 1] - mean) + innov * eps[t]
    return x


def wind_power_curve(speed) -> np.ndarray:
    """Capacity factor of a generic turbine: cubic ramp between cut-in and rated."""
    v = np.asarray(speed, dtype=np.float64)
    cf = np.zeros_like(v)
    ramp = (v >= CUT_IN_MS) & (v < RATED_MS)
    cf[ramp] = (v[ramp] ** 3 - CUT_IN_MS ** 3) / (RATED_MS ** 3 - CUT_IN_MS ** 3)
    cf[(v >= RATED_MS) & (v <= CUT_OUT_MS)] = 1.0
    return cf if cf.ndim else float(cf)


def _scale_timeline(spec: ScenarioSpec, asset: str, n: int) -> np.ndarray:
    """Piecewise-constant scale factor for one asset (1.0 before any event)."""
    scale = np.ones(n)
    for ev in sorted((e for e in spec.events if e.asset == asset), key=lambda e: e.date):
        i = int((ev.date - spec.start).total_seconds() // STEP_SECONDS)
        scale[i:] = ev.factor
    return scale


def _daily_shape(hours: np.ndarray) -> np.ndarray:
    """Zero-mean consumption shape: morning/evening peaks, night trough."""
    return (0.7 * np.sin(2.0 * np.pi * (hours - 10.0) / 24.0)
            + 0.3 * np.sin(4.0 * np.pi * (hours - 8.5) / 24.0))


def generate_scenario(spec: ScenarioSpec) -> SyntheticBundle:
    """Generate measurements, 3-hourly weather records, and diagnostics.

    The weather records are the generation-driving truth plus white
    forecast noise, so model features are informative but imperfect.
    Status flags come out all-reliable; apply inject_status_noise for the
    unreliable fraction.
    """
    n = spec.n_steps
    n_pad = n + WEATHER_SUBSAMPLE  # cover the last measurement with a trailing record
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0xC0FFEE]))

    t_posix = spec.start.timestamp() + STEP_SECONDS * np.arange(n_pad)
    hours = (t_posix % 86400.0) / 3600.0
    epoch_day = t_posix // 86400.0
    weekday = np.mod(epoch_day + 3, 7)
    doy_angle = 2.0 * np.pi * (t_posix % (365.2425 * 86400.0)) / (365.2425 * 86400.0)

    # Weather truth processes (15-minute grid)
    wind_speed = np.clip(_ou_process(rng, n_pad, 8.0, 3.2, tau_steps=32), 0.0, None)
    wind_dir = _ou_process(rng, n_pad, 0.0, 1.6, tau_steps=96)
    cloud_raw = _ou_process(rng, n_pad, 0.0, 1.2, tau_steps=24)
    cloud = 0.2 + 0.8 / (1.0 + np.exp(-cloud_raw))
    temp = (283.0 + 8.0 * np.sin(doy_angle - 1.9) + 4.0 * np.sin(2.0 * np.pi * (hours - 9.0) / 24.0)
            + _ou_process(rng, n_pad, 0.0, 1.5, tau_steps=48))
    pressure = _ou_process(rng, n_pad, 101325.0, 800.0, tau_steps=192)
    albedo = np.clip(0.2 + _ou_process(rng, n_pad, 0.0, 0.03, tau_steps=192), 0.05, 0.95)

    sun = sun_position_series(spec.lat, spec.lon, spec.start, n_pad)
    clear_sky = sun[:, 2]
    pv_factor = (clear_sky / SOLAR_CONSTANT_WM2) * cloud

    # Consumption
    weekly = np.where(weekday < 5, 1.0, spec.weekend_factor)
    load_noise = _ou_process(rng, n_pad, 0.0, spec.load_noise_mw, tau_steps=12)
    load_scale = _scale_timeline(spec, "load", n_pad)
    load = np.maximum(
        0.0,
        load_scale * spec.base_load_mw * (1.0 + spec.daily_amplitude * _daily_shape(hours)) * weekly
        + load_noise,
    )

    pv_gen = spec.pv_capacity_mw * _scale_timeline(spec, "pv", n_pad) * pv_factor
    wind_gen = (spec.wind_capacity_mw * _scale_timeline(spec, "wind", n_pad)
                * wind_power_curve(wind_speed))

    flow = load - pv_gen - wind_gen

    weather = _weather_records(spec, rng, t_posix, wind_speed, wind_dir, cloud, temp,
                               pressure, albedo, clear_sky, n)

    power = PowerSeries(spec.start, flow[:n], np.zeros(n, dtype=np.uint8))
    return SyntheticBundle(spec, power, weather, load[:n], pv_gen[:n], wind_gen[:n])


def _weather_records(spec, rng, t_posix, wind_speed, wind_dir, cloud, temp, pressure,
                     albedo, clear_sky, n_measured):
    """Subsample the truth processes to 3 h and add forecast noise."""
    idx = np.arange(0, len(t_posix), WEATHER_SUBSAMPLE)
    # keep only records needed to cover the measurement axis, plus one beyond
    last_needed = np.searchsorted(idx, n_measured - 1, side="left")
    idx = idx[: last_needed + 1]
    m = len(idx)
    noise = spec.weather_noise

    speed100 = wind_speed[idx] + noise * 0.5 * rng.standard_normal(m)
    speed100 = np.clip(speed100, 0.0, None)
    direction = wind_dir[idx] + noise * 0.15 * rng.standard_normal(m)
    u100 = speed100 * np.cos(direction)
    v100 = speed100 * np.sin(direction)
    u10, v10 = u100 / 1.3, v100 / 1.3

    t2m = temp[idx] + noise * 0.8 * rng.standard_normal(m)
    spread = 2.0 + 6.0 * (1.0 - cloud[idx]) + np.abs(noise * 0.5 * rng.standard_normal(m))
    d2m = t2m - spread
    fal = np.clip(albedo[idx] + noise * 0.02 * rng.standard_normal(m), 0.0, 1.0)

    # ssrd: trailing 3 h accumulation of the global-radiation proxy (J/m^2)
    grad_inst = clear_sky * cloud
    ssrd = np.empty(m)
    for j, i in enumerate(idx):
        lo = max(0, i - WEATHER_SUBSAMPLE)
        window = grad_inst[lo:i] if i > 0 else grad_inst[:1]
        ssrd[j] = max(0.0, window.mean() * 3 * 3600.0 * (1.0 + noise * 0.05 * rng.standard_normal()))

    sp = np.clip(pressure[idx] + noise * 100.0 * rng.standard_normal(m), 1.0, None)
    tp = np.maximum(0.0, (cloud[idx] - 0.85) * 0.02 * np.abs(rng.standard_normal(m)))

    records = []
    for j, i in enumerate(idx):
        records.append(WeatherRecord(
            datetime.fromtimestamp(t_posix[i], tz=timezone.utc),
            float(u10[j]), float(v10[j]), float(u100[j]), float(v100[j]),
            float(t2m[j]), float(d2m[j]), float(fal[j]), float(ssrd[j]),
            float(sp[j]), float(tp[j]),
        ))
    return records


def inject_status_noise(series: PowerSeries, unreliable_fraction: float, seed: int) -> PowerSeries:
    """Flag random runs of 1-8 steps unreliable and corrupt their values.

    Corruption alternates randomly between holding the pre-run value and
    adding a large spike, so ignoring the status flag visibly hurts.
    """
    if not 0.0 <= unreliable_fraction < 1.0:
        raise ConfigError(f"unreliable_fraction must be in [0,1), got {unreliable_fraction}")
    values = series.values.copy()
    status = series.status.copy()
    n = len(series)
    target = int(unreliable_fraction * n)
    if target == 0:
        return PowerSeries(series.start_time, values, status)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x57A7]))
    sigma = float(series.values.std()) or 1.0
    flagged = int((status == 1).sum())
    guard = 0
    while flagged < target and guard < 100 * target:
        guard += 1
        start = int(rng.integers(0, n))
        length = int(rng.integers(1, 9))
        stop = min(start + length, n)
        newly = int((status[start:stop] == 0).sum())
        if rng.random() < 0.5:
            values[start:stop] = values[start - 1] if start > 0 else values[stop - 1]
        else:
            spike = (3.0 + 5.0 * rng.random()) * sigma * (1.0 if rng.random() < 0.5 else -1.0)
            values[start:stop] = values[start:stop] + spike
        status[start:stop] = 1
        flagged += newly
    return PowerSeries(series.start_time, values, status)


# ---------------------------------------------------------------------------
# Canonical fleet
# ---------------------------------------------------------------------------

FLEET_START = datetime(2017, 10, 1, tzinfo=timezone.utc)
FLEET_TRAIN_END = datetime(2018, 4, 1, tzinfo=timezone.utc)
FLEET_VAL_END = datetime(2018, 4, 15, tzinfo=timezone.utc)
FLEET_END = datetime(2018, 5, 27, tzinfo=timezone.utc)
FLEET_SPLIT = SplitSpec(FLEET_TRAIN_END, FLEET_VAL_END)
DRIFT_DATE = FLEET_VAL_END  # capacity steps land exactly at the test boundary


def canonical_fleet(seed: int) -> list[ScenarioSpec]:
    """Seven heterogeneous transformers; four carry a strong mid-test drift.

    The mix spans consumption-dominated, PV-heavy, wind-heavy and mixed
    regimes. Event sizes are tuned so the post-event mean shifts by at
    least three pre-event standard deviations (the drift-detectability
    bar for a meaningful update experiment).
    """
    def child_seed(i: int) -> int:
        return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])

    common = dict(start=FLEET_START, end=FLEET_END, lat=51.0, lon=9.0)
    return [
        ScenarioSpec("t1_residential", base_load_mw=12.0, daily_amplitude=0.30,
                     weekend_factor=0.85, load_noise_mw=0.6, seed=child_seed(1), **common),
        ScenarioSpec("t2_town_pv", base_load_mw=10.0, daily_amplitude=0.25,
                     load_noise_mw=0.5, pv_capacity_mw=4.0, seed=child_seed(2), **common),
        ScenarioSpec("t3_wind_region", base_load_mw=6.0, daily_amplitude=0.20,
                     load_noise_mw=0.5, wind_capacity_mw=10.0, seed=child_seed(3), **common),
        ScenarioSpec("t4_new_solar", base_load_mw=8.0, daily_amplitude=0.15,
                     load_noise_mw=0.5, pv_capacity_mw=2.0,
                     events=(CapacityEvent(DRIFT_DATE, "pv", 22.0),),
                     seed=child_seed(4), **common),
        ScenarioSpec("t5_new_wind", base_load_mw=7.0, daily_amplitude=0.15,
                     load_noise_mw=0.5, wind_capacity_mw=1.5,
                     events=(CapacityEvent(DRIFT_DATE, "wind", 12.0),),
                     seed=child_seed(5), **common),
        ScenarioSpec("t6_new_industry", base_load_mw=9.0, daily_amplitude=0.20,
                     load_noise_mw=0.5,
                     events=(CapacityEvent(DRIFT_DATE, "load", 2.1),),
                     seed=child_seed(6), **common),
        ScenarioSpec("t7_mixed_growth", base_load_mw=8.0, daily_amplitude=0.20,
                     load_noise_mw=0.5, pv_capacity_mw=2.0, wind_capacity_mw=2.0,
                     events=(CapacityEvent(DRIFT_DATE, "pv", 10.0),
                             CapacityEvent(DRIFT_DATE, "wind", 6.0)),
                     seed=child_seed(7), **common),
    ]


def drift_scenarios(fleet: list[ScenarioSpec]) -> list[ScenarioSpec]:
    return [s for s in fleet if s.events]


# ---------------------------------------------------------------------------
# Disk format
# ---------------------------------------------------------------------------

def spec_to_dict(spec: ScenarioSpec) -> dict:
    return {
        "transformer_id": spec.transformer_id,
        "lat": spec.lat, "lon": spec.lon,
        "start": format_utc(spec.start), "end": format_utc(spec.end),
        "base_load_mw": spec.base_load_mw,
        "daily_amplitude": spec.daily_amplitude,
        "weekend_factor": spec.weekend_factor,
        "load_noise_mw": spec.load_noise_mw,
        "pv_capacity_mw": spec.pv_capacity_mw,
        "wind_capacity_mw": spec.wind_capacity_mw,
        "events": [{"date": format_utc(e.date), "asset": e.asset, "factor": e.factor}
                   for e in spec.events],
        "weather_noise": spec.weather_noise,
        "unreliable_fraction": spec.unreliable_fraction,
        "seed": spec.seed,
    }


def spec_from_dict(doc: dict) -> ScenarioSpec:
    doc = dict(doc)
    doc["start"] = parse_utc(doc["start"])
    doc["end"] = parse_utc(doc["end"])
    doc["events"] = tuple(CapacityEvent(parse_utc(e["date"]), e["asset"], e["factor"])
                          for e in doc.get("events", ()))
    return ScenarioSpec(**doc)


def write_scenario(directory, bundle: SyntheticBundle) -> None:
    """Write power.csv, weather.csv, meta.txt, manifest.yaml into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_power_csv(directory / "power.csv", bundle.power)
    write_weather_csv(directory / "weather.csv", bundle.weather)
    write_transformer_meta(directory / "meta.txt",
                           TransformerMeta(bundle.spec.transformer_id, bundle.spec.lat,
                                           bundle.spec.lon))
    manifest = {"scenario": spec_to_dict(bundle.spec), "format": 1}
    (directory / "manifest.yaml").write_text(yaml.safe_dump(manifest, sort_keys=True))


def generate_and_write(directory, spec: ScenarioSpec) -> SyntheticBundle:
    """Generate (with status noise applied) and write a scenario directory."""
    bundle = generate_scenario(spec)
    noisy = inject_status_noise(bundle.power, spec.unreliable_fraction, spec.seed)
    bundle = SyntheticBundle(spec, noisy, bundle.weather, bundle.load, bundle.pv_gen,
                             bundle.wind_gen)
    write_scenario(directory, bundle)
    return bundle
