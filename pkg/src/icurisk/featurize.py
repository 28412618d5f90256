"""Hourly 26-channel grids: aggregation, capped forward-fill, z-scoring.

Hour buckets are half-open [h, h+1) from intime; events exactly at outtime
are dropped. Missing cells hold NaN before normalization and exactly 0
after; the mask, not the value, is the source of truth for presence.
All operations are pure per stay.
"""

from __future__ import annotations

import json
import struct
import warnings
from dataclasses import dataclass, replace
from math import ceil
from pathlib import Path

import numpy as np

from .channels import (
    CHANNEL_NAMES,
    FILL_HOURS,
    ITEM_TO_CHANNEL,
    N_CHANNELS,
    TEMP_F_ITEM,
    fahrenheit_to_celsius,
)
from .ingest import StayEvents, StayMeta

STD_FLOOR = 1e-6
GRID_CACHE_VERSION = 1


@dataclass(frozen=True)
class HourlyGrid:
    """Per-stay [T_hours x 26] value matrix with an observation mask."""

    stay_id: str
    values: np.ndarray  # float64 [T, 26]; NaN where mask == 0 (pre-normalization)
    mask: np.ndarray  # uint8 [T, 26]; 1 = present (observed or carried)
    imputed: bool = False
    normalized: bool = False

    @property
    def n_hours(self) -> int:
        return self.values.shape[0]

    channel_names = CHANNEL_NAMES


@dataclass(frozen=True)
class NormalizationStats:
    """Per-channel mean/std over observed cells of training-split grids."""

    mean: np.ndarray  # float64 [26]
    std: np.ndarray  # float64 [26], floored at STD_FLOOR
    counts: np.ndarray  # int64 [26]

    def save(self, path: Path) -> None:
        payload = {
            "channels": list(CHANNEL_NAMES),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "counts": self.counts.tolist(),
        }
        Path(path).write_text(json.dumps(payload, indent=1))

    @classmethod
    def load(cls, path: Path) -> "NormalizationStats":
        payload = json.loads(Path(path).read_text())
        return cls(
            mean=np.asarray(payload["mean"], np.float64),
            std=np.asarray(payload["std"], np.float64),
            counts=np.asarray(payload["counts"], np.int64),
        )


def aggregate_hourly(events: StayEvents, stay: StayMeta) -> HourlyGrid:
    """Average each channel's observations within hourly buckets.

    Fahrenheit temperatures (item 223761) are converted to Celsius before
    merging into the unified temperature channel.
    """
    los = stay.los_hours
    n_hours = max(1, ceil(los))
    sums = np.zeros((n_hours, N_CHANNELS), np.float64)
    counts = np.zeros((n_hours, N_CHANNELS), np.int64)

    if len(events.item_ids):
        seconds = (events.times - stay.intime.to_datetime64()) / np.timedelta64(1, "s")
        hours_f = seconds / 3600.0
        chan = np.array([ITEM_TO_CHANNEL.get(int(i), -1) for i in events.item_ids])
        valid = (chan >= 0) & (hours_f >= 0.0) & (hours_f < los)
        if valid.any():
            hrs = np.floor(hours_f[valid]).astype(np.int64)
            ch = chan[valid]
            vals = events.values[valid].astype(np.float64).copy()
            is_f = events.item_ids[valid] == TEMP_F_ITEM
            vals[is_f] = fahrenheit_to_celsius(vals[is_f])
            np.add.at(sums, (hrs, ch), vals)
            np.add.at(counts, (hrs, ch), 1)

    mask = (counts > 0).astype(np.uint8)
    values = np.full((n_hours, N_CHANNELS), np.nan)
    observed = mask.astype(bool)
    values[observed] = sums[observed] / counts[observed]
    return HourlyGrid(stay_id=stay.stay_id, values=values, mask=mask)


def impute(grid: HourlyGrid) -> HourlyGrid:
    """Forward-fill each channel up to its per-channel window.

    Vitals carry 4h; lactate/pH/pCO2/pO2 6h; albumin 48h; remaining labs
    24h. Carried cells get mask=1; cells beyond the window stay missing.
    Imputation is causal: hour h depends only on observations at <= h.
    """
    if grid.imputed:
        raise ValueError(f"grid for stay {grid.stay_id} is already imputed")
    n_hours = grid.n_hours
    values = grid.values.copy()
    mask = grid.mask.copy()
    idx = np.arange(n_hours)
    for c in range(N_CHANNELS):
        observed = grid.mask[:, c].astype(bool)
        if not observed.any():
            continue
        # index of the most recent observation at or before each hour
        last = np.where(observed, idx, -1)
        last = np.maximum.accumulate(last)
        gap = idx - last
        carry = (last >= 0) & (gap > 0) & (gap <= FILL_HOURS[c])
        values[carry, c] = grid.values[last[carry], c]
        mask[carry, c] = 1
    return replace(grid, values=values, mask=mask, imputed=True)


def fit_normalizer(grids: list[HourlyGrid]) -> NormalizationStats:
    """Per-channel mean/std over observed cells, training split only.

    Accumulation is in float64 in the given grid order, so results are
    deterministic for a fixed ordering. Channels with zero observations
    get mean 0 / std 1 and a warning. Std is floored at STD_FLOOR.
    """
    if not grids:
        raise ValueError("fit_normalizer requires a non-empty training split")
    total = np.zeros(N_CHANNELS, np.float64)
    total_sq = np.zeros(N_CHANNELS, np.float64)
    counts = np.zeros(N_CHANNELS, np.int64)
    for grid in grids:
        observed = grid.mask.astype(bool)
        vals = np.where(observed, grid.values, 0.0)
        total += vals.sum(axis=0)
        total_sq += (vals * vals).sum(axis=0)
        counts += observed.sum(axis=0)

    mean = np.zeros(N_CHANNELS, np.float64)
    std = np.ones(N_CHANNELS, np.float64)
    seen = counts > 0
    mean[seen] = total[seen] / counts[seen]
    var = np.zeros(N_CHANNELS, np.float64)
    var[seen] = np.maximum(total_sq[seen] / counts[seen] - mean[seen] ** 2, 0.0)
    std[seen] = np.sqrt(var[seen])
    std = np.maximum(std, STD_FLOOR)
    if not seen.all():
        empty = [CHANNEL_NAMES[i] for i in np.flatnonzero(~seen)]
        warnings.warn(f"channels with no training observations: {empty}; "
                      "using mean 0 / std 1", stacklevel=2)
    return NormalizationStats(mean=mean, std=std, counts=counts)


def normalize(grid: HourlyGrid, stats: NormalizationStats) -> HourlyGrid:
    """Z-score observed cells; missing cells become exactly 0."""
    if grid.normalized:
        raise ValueError(f"grid for stay {grid.stay_id} is already normalized")
    observed = grid.mask.astype(bool)
    values = np.zeros_like(grid.values)
    zscored = (grid.values - stats.mean) / stats.std
    values[observed] = zscored[observed]
    return replace(grid, values=values, normalized=True)


def save_grid(grid: HourlyGrid, path: Path) -> None:
    """Cache layout: version byte, stay_id, T, C, f32 values, u8 mask (row-major)."""
    sid = grid.stay_id.encode()
    vals = np.where(grid.mask.astype(bool), grid.values, np.nan).astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<BH", GRID_CACHE_VERSION, len(sid)))
        fh.write(sid)
        fh.write(struct.pack("<IIBB", grid.n_hours, N_CHANNELS,
                             int(grid.imputed), int(grid.normalized)))
        fh.write(vals.tobytes(order="C"))
        fh.write(grid.mask.astype(np.uint8).tobytes(order="C"))


def load_grid(path: Path) -> HourlyGrid:
    with open(path, "rb") as fh:
        version, sid_len = struct.unpack("<BH", fh.read(3))
        if version != GRID_CACHE_VERSION:
            raise ValueError(f"{path}: unsupported grid cache version {version}")
        stay_id = fh.read(sid_len).decode()
        n_hours, n_chan, imputed, normalized = struct.unpack("<IIBB", fh.read(10))
        vals = np.frombuffer(fh.read(n_hours * n_chan * 4), np.float32)
        mask = np.frombuffer(fh.read(n_hours * n_chan), np.uint8)
    values = vals.reshape(n_hours, n_chan).astype(np.float64)
    mask = mask.reshape(n_hours, n_chan).copy()
    if normalized:
        values = np.where(mask.astype(bool), values, 0.0)
    return HourlyGrid(stay_id=stay_id, values=values, mask=mask,
                      imputed=bool(imputed), normalized=bool(normalized))
