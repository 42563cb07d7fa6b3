"""Persistence reference forecasters.

Both models use nothing but the measurement series itself and are fully
deterministic. Unreliable measurements (status=1) are never repeated into
a forecast: the last-measurement model falls back to the most recent
reliable value, and the last-day model substitutes the same wall-clock
value from an earlier day.
"""

from __future__ import annotations

from datetime import datetime

import numpy as np

from .errors import DataError
from .grid_data import PowerSeries, as_utc
from .preprocess import HORIZON_STEPS

DAY_STEPS = 96


def persistence_last(history: PowerSeries, origin: datetime, horizon: int = HORIZON_STEPS) -> np.ndarray:
    """Repeat the most recent reliable measurement at or before the origin."""
    i = history.index_of(as_utc(origin))
    reliable = np.flatnonzero(history.status[: i + 1] == 0)
    if reliable.size == 0:
        raise DataError(f"no reliable measurement at or before {origin}")
    return np.full(horizon, history.values[reliable[-1]])


def persistence_last_day(history: PowerSeries, origin: datetime, horizon: int = HORIZON_STEPS) -> np.ndarray:
    """Repeat the previous day's profile; hours past 24 reuse the same day.

    Horizon step k in [1, 96] takes the measurement 24 h before the
    forecast target time; steps beyond one day wrap back onto the same
    source day, so step k and step k-96 always agree.
    """
    i = history.index_of(as_utc(origin))
    if i + 1 < DAY_STEPS:
        raise DataError(f"need {DAY_STEPS} steps of history before {origin}, have {i + 1}")
    out = np.empty(horizon)
    for k in range(1, min(horizon, DAY_STEPS) + 1):
        src = i + k - DAY_STEPS  # target time minus 24 h
        out[k - 1] = _reliable_at_wallclock(history, src)
    for k in range(DAY_STEPS + 1, horizon + 1):
        out[k - 1] = out[k - 1 - DAY_STEPS]
    return out


def _reliable_at_wallclock(history: PowerSeries, index: int) -> float:
    """Value at ``index``; if unreliable, walk back in whole days for a
    reliable value at the same wall-clock time, else fall back to the most
    recent reliable value before it."""
    j = index
    while j >= 0:
        if history.status[j] == 0:
            return float(history.values[j])
        j -= DAY_STEPS
    earlier = np.flatnonzero(history.status[:index] == 0)
    if earlier.size == 0:
        raise DataError("no reliable measurement available for persistence")
    return float(history.values[earlier[-1]])
