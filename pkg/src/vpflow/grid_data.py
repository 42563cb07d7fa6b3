"""Measurement and weather time-series types plus feature computation.

The measurement grid is fixed at 15 minutes. Weather arrives at 3-hour
cadence and is linearly interpolated onto the measurement grid. Sun
position and cyclical calendar encodings are computed, never loaded.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .errors import (
    CoverageError,
    DomainError,
    ParseError,
    RangeError,
    SchemaError,
)

STEP = timedelta(minutes=15)
STEP_SECONDS = 900
WEATHER_STEP = timedelta(hours=3)

SOLAR_CONSTANT_WM2 = 1361.0

WEATHER_COLUMNS = ("u10", "v10", "u100", "v100", "t2m", "d2m", "fal", "ssrd", "sp", "tp")
SUN_COLUMNS = ("sun_altitude", "sun_azimuth", "clear_sky_wm2")
CALENDAR_COLUMNS = ("hour_sin", "hour_cos", "weekday_sin", "weekday_cos")
FEATURE_COLUMNS = WEATHER_COLUMNS + SUN_COLUMNS + CALENDAR_COLUMNS


def as_utc(t: datetime) -> datetime:
    """Attach UTC to naive datetimes; convert aware ones."""
    if t.tzinfo is None:
        return t.replace(tzinfo=timezone.utc)
    return t.astimezone(timezone.utc)


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp as UTC (naive values are taken as UTC)."""
    return as_utc(datetime.fromisoformat(text.replace("Z", "+00:00")))


def format_utc(t: datetime) -> str:
    return as_utc(t).strftime("%Y-%m-%dT%H:%M:%SZ")


def posix_seconds(t: datetime) -> float:
    return as_utc(t).timestamp()


@dataclass(frozen=True)
class PowerSeries:
    """Regular 15-minute vertical power-flow series with reliability flags.

    Values are signed MW: positive when consumption dominates at the
    transformer, negative when generation dominates. ``status`` is 0 for a
    reliable measurement, 1 for unreliable. The time axis is implicit:
    sample ``i`` is at ``start_time + i * STEP`` with no gaps (loaders fill
    gaps with status=1 sentinels).
    """

    start_time: datetime
    values: np.ndarray
    status: np.ndarray
    step: timedelta = STEP

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "status", np.asarray(self.status, dtype=np.uint8))
        if self.values.shape != self.status.shape or self.values.ndim != 1:
            raise SchemaError("values and status must be equal-length 1-d arrays")
        if self.step != STEP:
            raise SchemaError(f"power series step must be 15 minutes, got {self.step}")
        if self.start_time.tzinfo is None:
            object.__setattr__(self, "start_time", self.start_time.replace(tzinfo=timezone.utc))
        self.values.setflags(write=False)
        self.status.setflags(write=False)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def end_time(self) -> datetime:
        """Time of the last sample."""
        return self.start_time + (len(self) - 1) * self.step

    def time_at(self, index: int) -> datetime:
        return self.start_time + index * self.step

    def times(self) -> list[datetime]:
        return [self.time_at(i) for i in range(len(self))]

    def index_of(self, t: datetime) -> int:
        """Exact grid index of timestamp ``t``; RangeError if off-grid or outside."""
        delta = (t - self.start_time).total_seconds()
        steps, rem = divmod(delta, STEP_SECONDS)
        if rem != 0.0:
            raise RangeError(f"{t} is not on the 15-minute grid starting {self.start_time}")
        i = int(steps)
        if not 0 <= i < len(self):
            raise RangeError(f"{t} outside series [{self.start_time}, {self.end_time}]")
        return i

    def slice(self, start: int, stop: int) -> "PowerSeries":
        if not (0 <= start <= stop <= len(self)):
            raise RangeError(f"slice [{start}:{stop}] outside series of length {len(self)}")
        return PowerSeries(self.time_at(start), self.values[start:stop].copy(), self.status[start:stop].copy())


@dataclass(frozen=True)
class WeatherRecord:
    """One numerical-weather-forecast sample (3-hour cadence)."""

    valid_time: datetime
    u10: float
    v10: float
    u100: float
    v100: float
    t2m: float
    d2m: float
    fal: float
    ssrd: float
    sp: float
    tp: float

    def __post_init__(self):
        if not 0.0 <= self.fal <= 1.0:
            raise SchemaError(f"fal must be in [0,1], got {self.fal}")
        if self.ssrd < 0.0:
            raise SchemaError(f"ssrd must be >= 0, got {self.ssrd}")
        if self.sp <= 0.0:
            raise SchemaError(f"sp must be > 0, got {self.sp}")
        if self.tp < 0.0:
            raise SchemaError(f"tp must be >= 0, got {self.tp}")

    def as_tuple(self) -> tuple:
        return (self.u10, self.v10, self.u100, self.v100, self.t2m,
                self.d2m, self.fal, self.ssrd, self.sp, self.tp)


@dataclass(frozen=True)
class SunPosition:
    """Solar altitude/azimuth (degrees) and a clear-sky irradiance estimate."""

    altitude: float
    azimuth: float
    clear_sky_radiation: float

    def __post_init__(self):
        if self.altitude <= 0.0 and self.clear_sky_radiation != 0.0:
            raise DomainError("clear-sky radiation must be 0 when the sun is below the horizon")


@dataclass(frozen=True)
class FeatureFrame:
    """Exogenous feature matrix on the 15-minute grid.

    Column set and order are fixed (17 columns): 10 weather variables,
    3 sun-position variables, 4 cyclical calendar encodings.
    """

    start_time: datetime
    data: np.ndarray
    columns: tuple = FEATURE_COLUMNS
    step: timedelta = STEP

    def __post_init__(self):
        object.__setattr__(self, "data", np.asarray(self.data, dtype=np.float64))
        if self.columns != FEATURE_COLUMNS:
            raise SchemaError("feature column set/order is fixed")
        if self.data.ndim != 2 or self.data.shape[1] != len(FEATURE_COLUMNS):
            raise SchemaError(f"feature data must be (n, {len(FEATURE_COLUMNS)}), got {self.data.shape}")
        if self.start_time.tzinfo is None:
            object.__setattr__(self, "start_time", self.start_time.replace(tzinfo=timezone.utc))
        self.data.setflags(write=False)

    def __len__(self) -> int:
        return self.data.shape[0]

    def time_at(self, index: int) -> datetime:
        return self.start_time + index * self.step

    def column(self, name: str) -> np.ndarray:
        return self.data[:, FEATURE_COLUMNS.index(name)]

    def slice(self, start: int, stop: int) -> "FeatureFrame":
        if not (0 <= start <= stop <= len(self)):
            raise RangeError(f"slice [{start}:{stop}] outside frame of length {len(self)}")
        return FeatureFrame(self.time_at(start), self.data[start:stop].copy())


@dataclass(frozen=True)
class TransformerMeta:
    """Location metadata used to pair a transformer with its weather point."""

    id: str
    lat: float
    lon: float


# ---------------------------------------------------------------------------
# Sun position
# ---------------------------------------------------------------------------

def _sun_angles(lat_deg: float, lon_deg: float, t_posix: np.ndarray):
    """Solar altitude and azimuth (degrees) from a Meeus-style approximation.

    Azimuth is measured clockwise from north in [0, 360). Accuracy is a few
    hundredths of a degree for contemporary dates, comfortably inside the
    0.5 degree budget for a feature input.
    """
    jd = t_posix / 86400.0 + 2440587.5
    T = (jd - 2451545.0) / 36525.0

    L0 = np.mod(280.46646 + T * (36000.76983 + T * 0.0003032), 360.0)
    M = 357.52911 + T * (35999.05029 - 0.0001537 * T)
    e = 0.016708634 - T * (0.000042037 + 0.0000001267 * T)
    Mr = np.radians(M)
    C = ((1.914602 - T * (0.004817 + 0.000014 * T)) * np.sin(Mr)
         + (0.019993 - 0.000101 * T) * np.sin(2 * Mr)
         + 0.000289 * np.sin(3 * Mr))
    true_long = L0 + C
    omega = np.radians(125.04 - 1934.136 * T)
    lam = np.radians(true_long - 0.00569 - 0.00478 * np.sin(omega))

    eps0 = 23.0 + (26.0 + (21.448 - T * (46.8150 + T * (0.00059 - T * 0.001813))) / 60.0) / 60.0
    eps = np.radians(eps0 + 0.00256 * np.cos(omega))

    decl = np.arcsin(np.sin(eps) * np.sin(lam))

    # Equation of time (minutes)
    y = np.tan(eps / 2.0) ** 2
    L0r = np.radians(L0)
    eot = 4.0 * np.degrees(
        y * np.sin(2 * L0r) - 2 * e * np.sin(Mr)
        + 4 * e * y * np.sin(Mr) * np.cos(2 * L0r)
        - 0.5 * y * y * np.sin(4 * L0r) - 1.25 * e * e * np.sin(2 * Mr)
    )

    minutes_utc = np.mod(t_posix, 86400.0) / 60.0
    true_solar_min = np.mod(minutes_utc + eot + 4.0 * lon_deg, 1440.0)
    H = np.radians(true_solar_min / 4.0 - 180.0)

    phi = math.radians(lat_deg)
    sin_alt = math.sin(phi) * np.sin(decl) + math.cos(phi) * np.cos(decl) * np.cos(H)
    alt = np.degrees(np.arcsin(np.clip(sin_alt, -1.0, 1.0)))
    az = np.degrees(np.arctan2(np.sin(H), np.cos(H) * math.sin(phi) - np.tan(decl) * math.cos(phi)))
    az = np.mod(az + 180.0, 360.0)
    return alt, az


def clear_sky_radiation(altitude_deg) -> np.ndarray:
    """Extraterrestrial irradiance projected on the horizontal plane (W/m^2)."""
    alt = np.asarray(altitude_deg, dtype=np.float64)
    return SOLAR_CONSTANT_WM2 * np.maximum(0.0, np.sin(np.radians(np.maximum(alt, 0.0))))


def compute_sun_position(lat: float, lon: float, t: datetime) -> SunPosition:
    """Solar altitude/azimuth and clear-sky irradiance for one UTC instant."""
    if not -90.0 <= lat <= 90.0:
        raise DomainError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise DomainError(f"longitude {lon} outside [-180, 180]")
    alt, az = _sun_angles(lat, lon, np.asarray([posix_seconds(t)]))
    return SunPosition(float(alt[0]), float(az[0]), float(clear_sky_radiation(alt[0])))


def sun_position_series(lat: float, lon: float, start_time: datetime, n_steps: int,
                        step: timedelta = STEP) -> np.ndarray:
    """Vectorized sun features, shape (n_steps, 3): altitude, azimuth, clear-sky W/m^2."""
    if not -90.0 <= lat <= 90.0:
        raise DomainError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise DomainError(f"longitude {lon} outside [-180, 180]")
    t0 = posix_seconds(start_time)
    t = t0 + step.total_seconds() * np.arange(n_steps, dtype=np.float64)
    alt, az = _sun_angles(lat, lon, t)
    return np.column_stack([alt, az, clear_sky_radiation(alt)])


# ---------------------------------------------------------------------------
# Calendar features
# ---------------------------------------------------------------------------

def calendar_features(t: datetime) -> tuple[float, float, float, float]:
    """Cyclical hour-of-day and weekday encoding (Monday = 0).

    Hour angle is 2*pi*(hour + minute/60)/24, so midnight maps to
    (sin, cos) = (0, 1) and 06:00 to (1, 0); the encoding removes the
    23h -> 0h discontinuity a plain integer hour would have.
    """
    t = as_utc(t)
    hour_angle = 2.0 * math.pi * (t.hour + t.minute / 60.0) / 24.0
    wd_angle = 2.0 * math.pi * t.weekday() / 7.0
    return (math.sin(hour_angle), math.cos(hour_angle), math.sin(wd_angle), math.cos(wd_angle))


def calendar_feature_series(start_time: datetime, n_steps: int, step: timedelta = STEP) -> np.ndarray:
    """Vectorized calendar features, shape (n_steps, 4)."""
    start = as_utc(start_time)
    sec = np.arange(n_steps, dtype=np.float64) * step.total_seconds()
    day_sec = (start.hour * 3600 + start.minute * 60 + start.second + sec) % 86400.0
    hour_angle = 2.0 * np.pi * (day_sec // 3600 + (day_sec % 3600 // 60) / 60.0) / 24.0
    # datetime.weekday(): Monday = 0. Day index advances on UTC midnights.
    epoch_day = (posix_seconds(start) + sec) // 86400.0
    weekday = np.mod(epoch_day + 3, 7)  # 1970-01-01 was a Thursday
    wd_angle = 2.0 * np.pi * weekday / 7.0
    return np.column_stack([np.sin(hour_angle), np.cos(hour_angle), np.sin(wd_angle), np.cos(wd_angle)])


# ---------------------------------------------------------------------------
# Weather alignment
# ---------------------------------------------------------------------------

def align_weather(records: list[WeatherRecord], start_time: datetime, n_steps: int) -> np.ndarray:
    """Interpolate 3-hourly weather linearly onto the 15-minute grid.

    Returns an (n_steps, 10) array in WEATHER_COLUMNS order. Values at
    record timestamps are reproduced exactly.
    """
    if len(records) < 2:
        raise CoverageError("need at least two weather records to interpolate")
    rec_t = np.array([posix_seconds(r.valid_time) for r in records])
    if np.any(np.diff(rec_t) != WEATHER_STEP.total_seconds()):
        raise SchemaError("weather records must be sorted at an exact 3-hour cadence")
    t0 = posix_seconds(start_time)
    target = t0 + STEP_SECONDS * np.arange(n_steps, dtype=np.float64)
    if target[0] < rec_t[0] or target[-1] > rec_t[-1]:
        raise CoverageError(
            f"target axis [{start_time} .. +{n_steps} steps] outside weather coverage "
            f"[{records[0].valid_time} .. {records[-1].valid_time}]"
        )
    table = np.array([r.as_tuple() for r in records], dtype=np.float64)
    out = np.empty((n_steps, table.shape[1]))
    for j in range(table.shape[1]):
        out[:, j] = np.interp(target, rec_t, table[:, j])
    return out


def build_feature_frame(records: list[WeatherRecord], lat: float, lon: float,
                        start_time: datetime, n_steps: int) -> FeatureFrame:
    """Assemble the full 17-column feature frame for a measurement axis."""
    weather = align_weather(records, start_time, n_steps)
    sun = sun_position_series(lat, lon, start_time, n_steps)
    cal = calendar_feature_series(start_time, n_steps)
    return FeatureFrame(start_time, np.hstack([weather, sun, cal]))


# ---------------------------------------------------------------------------
# CSV / metadata I/O
# ---------------------------------------------------------------------------

POWER_HEADER = ["timestamp", "value_mw", "status"]
WEATHER_HEADER = ["valid_time"] + list(WEATHER_COLUMNS)


def load_power_csv(path) -> PowerSeries:
    """Load a power CSV, filling 15-minute gaps with status=1 sentinels.

    Gap fills carry the last seen value so the series stays plausible for
    lookback windows; the status flag excludes them from any loss.
    """
    path = Path(path)
    times: list[datetime] = []
    values: list[float] = []
    status: list[int] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != POWER_HEADER:
            raise SchemaError(f"{path}: expected header {POWER_HEADER}, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", line_no)
            try:
                t = parse_utc(row[0])
                v = float(row[1])
                s = int(row[2])
            except ValueError as exc:
                raise ParseError(str(exc), line_no) from None
            if s not in (0, 1):
                raise ParseError(f"status must be 0 or 1, got {s}", line_no)
            if times:
                delta = (t - times[-1]).total_seconds()
                if delta <= 0:
                    raise SchemaError(f"{path} line {line_no}: non-increasing timestamp {row[0]}")
                if delta % STEP_SECONDS != 0:
                    raise SchemaError(f"{path} line {line_no}: timestamp {row[0]} off the 15-minute grid")
                n_missing = int(delta) // STEP_SECONDS - 1
                for k in range(n_missing):
                    times.append(times[-1] + STEP)
                    values.append(values[-1])
                    status.append(1)
            times.append(t)
            values.append(v)
            status.append(s)
    if not times:
        raise SchemaError(f"{path}: no data rows")
    return PowerSeries(times[0], np.array(values), np.array(status, dtype=np.uint8))


def write_power_csv(path, series: PowerSeries) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(POWER_HEADER)
        for i in range(len(series)):
            writer.writerow([format_utc(series.time_at(i)), repr(float(series.values[i])), int(series.status[i])])


def load_weather_csv(path) -> list[WeatherRecord]:
    path = Path(path)
    records: list[WeatherRecord] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != WEATHER_HEADER:
            raise SchemaError(f"{path}: expected header {WEATHER_HEADER}, got {header}")
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(WEATHER_HEADER):
                raise ParseError(f"expected {len(WEATHER_HEADER)} fields, got {len(row)}", line_no)
            try:
                t = parse_utc(row[0])
                vals = [float(x) for x in row[1:]]
                rec = WeatherRecord(t, *vals)
            except (ValueError, SchemaError) as exc:
                raise ParseError(str(exc), line_no) from None
            if records and rec.valid_time <= records[-1].valid_time:
                raise SchemaError(f"{path} line {line_no}: non-increasing valid_time {row[0]}")
            records.append(rec)
    if not records:
        raise SchemaError(f"{path}: no data rows")
    return records


def write_weather_csv(path, records: list[WeatherRecord]) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(WEATHER_HEADER)
        for r in records:
            writer.writerow([format_utc(r.valid_time)] + [repr(float(v)) for v in r.as_tuple()])


def load_transformer_meta(path) -> TransformerMeta:
    """Parse the key-value metadata file (keys: id, lat, lon)."""
    path = Path(path)
    kv = {}
    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {line!r}", line_no)
        key, _, value = line.partition("=")
        kv[key.strip()] = value.strip()
    missing = {"id", "lat", "lon"} - kv.keys()
    if missing:
        raise SchemaError(f"{path}: missing keys {sorted(missing)}")
    try:
        lat, lon = float(kv["lat"]), float(kv["lon"])
    except ValueError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    if not -90.0 <= lat <= 90.0 or not -180.0 <= lon <= 180.0:
        raise DomainError(f"{path}: coordinates ({lat}, {lon}) out of range")
    return TransformerMeta(kv["id"], lat, lon)


def write_transformer_meta(path, meta: TransformerMeta) -> None:
    Path(path).write_text(f"id={meta.id}\nlat={meta.lat!r}\nlon={meta.lon!r}\n")
