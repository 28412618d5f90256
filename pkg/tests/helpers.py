"""Shared test utilities: finite differences and tiny fixture builders."""

from __future__ import annotations

import numpy as np
import pandas as pd

from icurisk.ingest import StayEvents, StayMeta

UTC = "UTC"


def ts(hours: float, base: str = "2140-01-01 00:00:00") -> pd.Timestamp:
    """Timestamp `hours` after the fixture base time."""
    return pd.Timestamp(base, tz=UTC) + pd.Timedelta(seconds=round(hours * 3600))


def make_stay(stay_id="S1", subject_id="P1", los_hours=48.0, age=60.0,
              gender="F", death_hours=None, care_unit="medical") -> StayMeta:
    return StayMeta(
        stay_id=stay_id, subject_id=subject_id,
        intime=ts(0), outtime=ts(los_hours), age=age, gender=gender,
        death_time=None if death_hours is None else ts(death_hours),
        care_unit=care_unit)


def make_events(measurements=(), interventions=()) -> StayEvents:
    """measurements: (item_id, hours, value); interventions: (item_id, hours)."""
    meas = sorted(measurements, key=lambda r: r[1])
    interv = sorted(interventions, key=lambda r: r[1])
    return StayEvents(
        item_ids=np.array([m[0] for m in meas], np.int64),
        times=np.array([ts(m[1]).to_datetime64() for m in meas],
                       "datetime64[ns]"),
        values=np.array([m[2] for m in meas], np.float64),
        interv_item_ids=np.array([i[0] for i in interv], np.int64),
        interv_times=np.array([ts(i[1]).to_datetime64() for i in interv],
                              "datetime64[ns]"),
    )


def numerical_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. array x.

    Mutates x in place element by element and restores it, so f can close
    over x directly.
    """
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        f_plus = f()
        x[idx] = orig - h
        f_minus = f()
        x[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1e-6, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))
