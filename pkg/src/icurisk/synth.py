"""Seeded generator of MIMIC-shaped cohorts with plantable signal.

Every stay gets a structured risk driver d ~ N(0,1) (surfaced in the data
as heart-rate drift and lactate elevation) and an independent binary text
indicator x (surfaced only through note embeddings as a planted linear
risk direction). A deterioration event is drawn per stay with probability
sigmoid(b + structured_strength*d + text_strength*x); when target_rate is
set, the intercept b is solved by bisection so the expected per-sample
positive rate matches, and a deterministic trim pass nudges event hours
(never mortality ones) so the realized rate lands on the target. With
target_rate=None the configured base_logit is used directly, so prevalence
scales monotonically with the hazard strengths.

Mortality events truncate the stay (outtime = death time). Baselines and
variances are hard-coded plausible adult values; they are test fixtures,
not clinical claims. Generation is a single deterministic RNG stream per
seed, so identical configs produce byte-identical bundles.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, floor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .channels import TEMP_C_ITEM, TEMP_F_ITEM
from .errors import ConfigError
from .metrics import ScoredSet, auroc
from .errors import UndefinedMetricError

FIRST_HOUR = 6
HORIZON = 24
LAST_HOUR = 48
EVENT_OFFSETS = (0.0, 0.25, 0.5, 0.75)  # fractional event hours, exact in seconds
VASO_ITEMS = (221906, 221289, 221662, 221749, 222315)
VENT_ITEMS = (224385, 225792)
KINDS = ("vasopressor_start", "ventilation_start", "mortality")
KIND_PROBS = (0.5, 0.3, 0.2)
BASE_TIME = pd.Timestamp("2140-01-01 00:00:00", tz="UTC")
EMBED_DIM = 768
EMBED_NOISE = 0.05


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    n_patients: int = 500
    stays_per_patient: tuple[float, ...] = (0.85, 0.12, 0.03)
    los_median_hours: float = 52.0
    los_sigma: float = 0.45
    los_min_hours: float = 25.0
    los_max_hours: float = 168.0
    target_rate: Optional[float] = 0.028
    base_logit: float = -4.5  # used when target_rate is None
    structured_strength: float = 1.0
    text_strength: float = 1.0
    note_coverage: float = 0.664
    already_on_frac: float = 0.02  # pre-existing vasopressor, never positive
    post_icu_death_frac: float = 0.03  # death after discharge, not an outcome

    def __post_init__(self):
        probs = (self.note_coverage, self.already_on_frac,
                 self.post_icu_death_frac) + tuple(self.stays_per_patient)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if abs(sum(self.stays_per_patient) - 1.0) > 1e-9:
            raise ConfigError("stays_per_patient must sum to 1")
        if self.structured_strength < 0 or self.text_strength < 0:
            raise ConfigError("signal strengths must be >= 0")
        if self.target_rate is not None and not 0.0 < self.target_rate < 0.5:
            raise ConfigError("target_rate must be in (0, 0.5) or None")
        if self.los_min_hours < 25.0:
            raise ConfigError("los_min_hours below 25 would break cohort inclusion")


@dataclass
class _Stay:
    stay_id: str
    subject_id: str
    age: int
    gender: str
    care_unit: str
    intime_sec: int  # seconds since BASE_TIME
    los_sec: int
    d: float  # structured driver
    x: int  # text indicator
    has_note: bool
    kind: str  # candidate event kind (used only if an event is drawn)
    q: float = 0.0
    event_hour: Optional[float] = None  # hours since intime
    event_kind: str = "none"
    pre_existing_hour: Optional[float] = None
    post_icu_death_hour: Optional[float] = None

    @property
    def los_hours(self) -> float:
        return self.los_sec / 3600.0

    @property
    def t_max(self) -> int:
        return min(LAST_HOUR, floor(self.los_hours))

    @property
    def n_samples(self) -> int:
        return self.t_max - FIRST_HOUR + 1


@dataclass
class GroundTruth:
    manifest: pd.DataFrame
    labels: pd.DataFrame
    risk_direction: np.ndarray


@dataclass
class SignalReport:
    n_samples: int
    n_pos: int
    rate: float
    oracle_auroc: Optional[float]
    driver_correlation: Optional[float]
    note_coverage: float


def _positives_for(event_hour: float, t_max: int) -> int:
    """Count prediction hours t in [6, t_max] with t < event_hour <= t+24."""
    lo_t = max(FIRST_HOUR, ceil(event_hour - HORIZON))
    hi_t = min(t_max, ceil(event_hour) - 1)
    return max(0, hi_t - lo_t + 1)


def _candidates(kind: str, los_hours: float):
    """(event_hour, positives, samples_after) triples for one stay/kind."""
    out = []
    if kind == "mortality":
        # death truncates the stay; keep LOS >= 25h so the cohort retains it
        for e in range(25, min(floor(los_hours), LAST_HOUR + HORIZON) + 1):
            t_max = min(LAST_HOUR, e)
            out.append((float(e), _positives_for(float(e), t_max),
                        t_max - FIRST_HOUR + 1))
    else:
        t_max = min(LAST_HOUR, floor(los_hours))
        n = t_max - FIRST_HOUR + 1
        for e in range(7, min(floor(los_hours), LAST_HOUR + HORIZON) + 1):
            for off in EVENT_OFFSETS:
                hour = e + off
                if hour <= los_hours:
                    out.append((hour, _positives_for(hour, t_max), n))
    return out


def _solve_intercept(u: np.ndarray, mean_pos: np.ndarray, n_full: np.ndarray,
                     mean_n_event: np.ndarray, target: float) -> float:
    """Bisect b so expected positives / expected samples = target."""

    def gap(b: float) -> float:
        q = 1.0 / (1.0 + np.exp(-(b + u)))
        expected_pos = float((q * mean_pos).sum())
        expected_n = float(((1.0 - q) * n_full + q * mean_n_event).sum())
        return expected_pos - target * expected_n

    max_rate = float(mean_pos.sum()) / float(mean_n_event.sum())
    if target >= 0.95 * max_rate:
        raise ConfigError(
            f"target_rate {target} infeasible: ceiling {max_rate:.4f} "
            "for this cohort/strength configuration")
    lo, hi = -30.0, 10.0
    if gap(lo) > 0:
        raise ConfigError("target_rate infeasible: rate floor above target")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gap(mid) <= 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _plan_stays(cfg: SynthConfig, rng: np.random.Generator) -> list[_Stay]:
    stays: list[_Stay] = []
    stay_counter = 0
    mu = np.log(cfg.los_median_hours)
    for p in range(cfg.n_patients):
        subject_id = str(10_000_000 + p)
        age = int(rng.integers(18, 91))
        gender = "M" if rng.random() < 0.563 else "F"
        n_stays = 1 + int(rng.choice(len(cfg.stays_per_patient),
                                     p=cfg.stays_per_patient))
        intime_sec = int(rng.integers(0, 3650 * 24 * 3600 // 60)) * 60
        for _ in range(n_stays):
            los_hours = float(np.clip(
                np.exp(mu + cfg.los_sigma * rng.standard_normal()),
                cfg.los_min_hours, cfg.los_max_hours))
            los_sec = int(round(los_hours * 3600.0 / 60.0)) * 60  # whole minutes
            care_unit = str(rng.choice(
                ["medical", "surgical", "cardiac"], p=[0.42, 0.333, 0.247]))
            d = float(rng.standard_normal())
            x = int(rng.random() < 0.5)
            has_note = bool(rng.random() < cfg.note_coverage)
            kind = str(rng.choice(KINDS, p=KIND_PROBS))
            stays.append(_Stay(
                stay_id=str(30_000_000 + stay_counter),
                subject_id=subject_id, age=age, gender=gender,
                care_unit=care_unit, intime_sec=intime_sec, los_sec=los_sec,
                d=d, x=x, has_note=has_note, kind=kind))
            stay_counter += 1
            # next stay of the same patient starts 5-60 days after discharge
            intime_sec += los_sec + int(rng.integers(5 * 24, 60 * 24)) * 3600
    return stays


def _draw_events(cfg: SynthConfig, stays: list[_Stay],
                 rng: np.random.Generator) -> None:
    """Assign event probabilities, systematic event draw, hour pick, trim."""
    cand_lists = [_candidates(s.kind, s.los_hours) for s in stays]
    mean_pos = np.array([np.mean([c[1] for c in cand]) for cand in cand_lists])
    mean_n_event = np.array([np.mean([c[2] for c in cand]) for cand in cand_lists])
    n_full = np.array([s.n_samples for s in stays], np.float64)
    u = np.array([cfg.structured_strength * s.d + cfg.text_strength * s.x
                  for s in stays])

    if cfg.target_rate is not None:
        b = _solve_intercept(u, mean_pos, n_full, mean_n_event, cfg.target_rate)
    else:
        b = cfg.base_logit
    q = 1.0 / (1.0 + np.exp(-(b + u)))
    for stay, q_s in zip(stays, q):
        stay.q = float(q_s)

    # systematic PPS sampling keeps the event count within 1 of sum(q)
    cum = np.cumsum(q)
    points = rng.random() + np.arange(int(np.floor(cum[-1])) + 1)
    points = points[points < cum[-1]]
    chosen = np.searchsorted(cum, points, side="left")

    for idx in chosen:
        stay = stays[int(idx)]
        cand = cand_lists[int(idx)]
        pick = cand[int(rng.integers(len(cand)))]
        stay.event_hour = pick[0]
        stay.event_kind = stay.kind
        if stay.kind == "mortality":
            stay.los_sec = int(pick[0] * 3600)

    # non-event decorations
    for stay in stays:
        if stay.event_kind != "none":
            continue
        if rng.random() < cfg.already_on_frac:
            stay.pre_existing_hour = float(
                int(rng.uniform(0.5, 3.0) * 4) / 4.0)  # quarter-hour grid
        elif rng.random() < cfg.post_icu_death_frac:
            stay.post_icu_death_hour = stay.los_hours + float(
                rng.integers(1, 200))

    if cfg.target_rate is not None:
        _trim_to_target(cfg, stays, cand_lists)


def _realized_positives(stays: list[_Stay]) -> int:
    total = 0
    for s in stays:
        if s.event_kind != "none" and s.event_hour is not None:
            total += _positives_for(s.event_hour, s.t_max)
    return total


def _trim_to_target(cfg: SynthConfig, stays: list[_Stay], cand_lists) -> None:
    """Nudge vaso/vent event hours so realized positives hit the target."""
    n_total = sum(s.n_samples for s in stays)
    target = int(round(cfg.target_rate * n_total))
    realized = _realized_positives(stays)
    for _ in range(5):
        if realized == target:
            break
        for i, stay in enumerate(stays):
            if realized == target:
                break
            if stay.event_kind in ("none", "mortality"):
                continue
            current = _positives_for(stay.event_hour, stay.t_max)
            best = None
            for hour, pos, _ in cand_lists[i]:
                gap_new = abs(realized - current + pos - target)
                if gap_new < abs(realized - target) and (
                        best is None or gap_new < best[1]):
                    best = ((hour, pos), gap_new)
            if best is not None:
                (hour, pos), _gap = best
                realized += pos - current
                stay.event_hour = hour


# ---------------------------------------------------------------------------
# time-series synthesis
# ---------------------------------------------------------------------------

_LAB_SPECS = {
    # item, cadence hours, generator key
    "lactate": (50813, 8.0),
    "creatinine": (50912, 16.0),
    "bun": (51006, 16.0),
    "potassium": (50971, 12.0),
    "sodium": (50983, 12.0),
    "glucose": (50931, 8.0),
    "wbc": (51301, 16.0),
    "hemoglobin": (51222, 16.0),
    "hematocrit": (51221, 16.0),
    "platelets": (51265, 20.0),
    "bilirubin": (50885, 24.0),
    "albumin": (50862, 30.0),
    "ph": (50820, 10.0),
    "pco2": (50818, 10.0),
    "po2": (50821, 10.0),
    "bicarbonate": (50882, 14.0),
}


def _ramp(tau: np.ndarray, event_hour: Optional[float]) -> np.ndarray:
    """Pre-event build-up and post-event recovery, peaking at the event."""
    if event_hour is None:
        return np.zeros_like(tau)
    gap = event_hour - tau
    return np.where(gap >= 0.0, np.exp(-gap / 8.0), np.exp(gap / 6.0))


def _stay_series(stay: _Stay, rng: np.random.Generator):
    """(chart_rows, lab_rows) for one stay: (item, sec, value) arrays."""
    los_h = stay.los_hours
    sat = lambda tau: 1.0 - np.exp(-tau / 18.0)  # noqa: E731
    d, e = stay.d, stay.event_hour
    shift = rng.standard_normal(8)

    # vitals share an hourly presence pattern; hour 0 is always recorded
    hours = np.arange(0, floor(los_h) + 1)
    present = rng.random(len(hours)) < 0.88
    present[0] = True
    minutes = rng.integers(0, 60, len(hours))
    tau = hours + minutes / 60.0
    keep = present & (tau < los_h)
    tau = tau[keep]
    secs = (tau * 3600.0).round().astype(np.int64)
    r = _ramp(tau, e)
    s = sat(tau)
    n = len(tau)

    def noise(scale):
        return rng.standard_normal(n) * scale

    hr = 78.0 + 6.0 * shift[0] + 7.0 * d * s + 16.0 * r + noise(2.5)
    sbp = 118.0 + 10.0 * shift[1] - 6.0 * d * s - 14.0 * r + noise(4.0)
    dbp = 68.0 + 7.0 * shift[2] - 4.0 * d * s - 8.0 * r + noise(3.0)
    mp = (sbp + 2.0 * dbp) / 3.0 + noise(2.0)
    rr = 17.0 + 2.0 * shift[3] + 1.8 * d * s + 6.0 * r + noise(1.2)
    spo2 = np.clip(97.5 - 1.2 * max(d, 0.0) * s - 3.5 * r + noise(0.8), 70.0, 100.0)
    temp_c = 36.8 + 0.3 * shift[4] + noise(0.2)

    chart_items, chart_secs, chart_vals = [], [], []

    def emit(item, vals, drop=0.03):
        kept = rng.random(n) >= drop
        chart_items.append(np.full(kept.sum(), item, np.int64))
        chart_secs.append(secs[kept])
        chart_vals.append(vals[kept])

    emit(220045, hr)
    emit(220050, sbp + noise(2.0))
    emit(220179, sbp + 3.0 + noise(4.0))
    emit(220051, dbp + noise(1.5))
    emit(220180, dbp + 2.0 + noise(3.0))
    emit(220052, mp)
    emit(220181, mp + 2.0 + noise(2.5))
    emit(220210, rr)
    emit(220277, spo2)
    # temperature alternates between the Fahrenheit and Celsius items
    as_f = rng.random(n) < 0.5
    keep_t = rng.random(n) >= 0.03
    t_items = np.where(as_f, TEMP_F_ITEM, TEMP_C_ITEM)[keep_t]
    t_vals = np.where(as_f, temp_c * 9.0 / 5.0 + 32.0, temp_c)[keep_t]
    chart_items.append(t_items.astype(np.int64))
    chart_secs.append(secs[keep_t])
    chart_vals.append(t_vals)

    lab_items, lab_secs, lab_vals = [], [], []
    for name, (item, cadence) in _LAB_SPECS.items():
        times = []
        t = rng.uniform(0.5, 2.0)
        while t < los_h:
            times.append(t)
            t += float(np.clip(rng.exponential(cadence), 2.0, cadence * 3.0))
        if not times:
            continue
        lt = np.asarray(times)
        lr = _ramp(lt, e)
        ls = sat(lt)
        m = len(lt)
        lnoise = lambda scale: rng.standard_normal(m) * scale  # noqa: E731
        dpos = max(d, 0.0)
        if name == "lactate":
            vals = np.maximum(0.4, 1.7 + 0.9 * d + 2.2 * lr + lnoise(0.25))
        elif name == "creatinine":
            vals = np.maximum(0.3, 0.9 + 0.3 * shift[5] + 0.2 * dpos + lnoise(0.1))
        elif name == "bun":
            vals = np.maximum(3.0, 17.0 + 5.0 * shift[5] + lnoise(1.5))
        elif name == "potassium":
            vals = 4.1 + 0.3 * shift[6] + lnoise(0.15)
        elif name == "sodium":
            vals = 139.0 + 2.5 * shift[6] + lnoise(1.0)
        elif name == "glucose":
            vals = np.maximum(50.0, 126.0 + 20.0 * shift[7] + lnoise(10.0))
        elif name == "wbc":
            vals = np.maximum(1.0, 9.5 + 2.0 * shift[7] + 1.5 * dpos * ls
                              + 2.0 * lr + lnoise(0.7))
        elif name == "hemoglobin":
            vals = np.maximum(4.0, 11.3 + 1.4 * shift[5] + lnoise(0.3))
        elif name == "hematocrit":
            vals = np.maximum(12.0, (11.3 + 1.4 * shift[5]) * 3.0 + lnoise(0.8))
        elif name == "platelets":
            vals = np.maximum(10.0, 230.0 + 60.0 * shift[6] + lnoise(12.0))
        elif name == "bilirubin":
            vals = np.maximum(0.1, 0.8 + 0.3 * shift[7] + lnoise(0.1))
        elif name == "albumin":
            vals = np.maximum(1.0, 3.4 + 0.4 * shift[5] + lnoise(0.12))
        elif name == "ph":
            vals = 7.38 - 0.03 * dpos * ls - 0.05 * lr + lnoise(0.015)
        elif name == "pco2":
            vals = 40.0 + 4.0 * shift[6] + lnoise(2.0)
        elif name == "po2":
            vals = np.maximum(40.0, 92.0 + 12.0 * shift[7] - 8.0 * lr + lnoise(6.0))
        else:  # bicarbonate
            vals = 24.0 - 1.5 * dpos * ls - 2.0 * lr + lnoise(0.8)
        lab_items.append(np.full(m, item, np.int64))
        lab_secs.append((lt * 3600.0).round().astype(np.int64))
        lab_vals.append(vals)

    def cat(parts):
        return (np.concatenate(parts) if parts
                else np.empty(0, np.int64))

    return ((cat(chart_items), cat(chart_secs),
             np.concatenate(chart_vals) if chart_vals else np.empty(0)),
            (cat(lab_items), cat(lab_secs),
             np.concatenate(lab_vals) if lab_vals else np.empty(0)))


_BASE_EPOCH_SEC = int(BASE_TIME.timestamp())


def _format_times(base_secs: np.ndarray) -> pd.Series:
    stamps = pd.to_datetime(np.asarray(base_secs, np.int64) + _BASE_EPOCH_SEC,
                            unit="s", utc=True)
    return pd.Series(stamps).dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def _manifest_labels(stays: list[_Stay]) -> pd.DataFrame:
    """Ground-truth labels via the horizon rule on exact event seconds."""
    rows_stay, rows_t, rows_label = [], [], []
    for stay in stays:
        event_secs = []
        if stay.event_kind != "none" and stay.event_hour is not None:
            event_secs.append(int(round(stay.event_hour * 3600)))
        if stay.pre_existing_hour is not None:
            event_secs.append(int(round(stay.pre_existing_hour * 3600)))
        for t in range(FIRST_HOUR, stay.t_max + 1):
            label = int(any(t * 3600 < sec <= (t + HORIZON) * 3600
                            for sec in event_secs))
            rows_stay.append(stay.stay_id)
            rows_t.append(t)
            rows_label.append(label)
    return pd.DataFrame({"stay_id": rows_stay, "t": rows_t, "label": rows_label})


def generate(cfg: SynthConfig, out_dir: Path) -> GroundTruth:
    """Write the full CSV bundle plus embeddings and ground-truth manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)

    stays = _plan_stays(cfg, rng)
    _draw_events(cfg, stays, rng)
    risk_direction = rng.standard_normal(EMBED_DIM)
    risk_direction /= np.linalg.norm(risk_direction)

    # stay-level tables
    intimes = np.array([s.intime_sec for s in stays], np.int64)
    outtimes = np.array([s.intime_sec + s.los_sec for s in stays], np.int64)
    icustays = pd.DataFrame({
        "subject_id": [s.subject_id for s in stays],
        "stay_id": [s.stay_id for s in stays],
        "intime": _format_times(intimes),
        "outtime": _format_times(outtimes),
        "first_careunit": [s.care_unit for s in stays],
    })
    by_subject = sorted({s.subject_id: (s.gender, s.age) for s in stays}.items())
    patients = pd.DataFrame({
        "subject_id": [sid for sid, _ in by_subject],
        "gender": [pair[0] for _, pair in by_subject],
        "anchor_age": [pair[1] for _, pair in by_subject],
    })

    death_secs = np.full(len(stays), -1, np.int64)
    for i, (stay, out_sec) in enumerate(zip(stays, outtimes)):
        if stay.event_kind == "mortality":
            death_secs[i] = out_sec
        elif stay.post_icu_death_hour is not None:
            death_secs[i] = stay.intime_sec + int(
                round(stay.post_icu_death_hour * 3600))
    death_strings = np.where(
        death_secs < 0, "",
        _format_times(np.where(death_secs < 0, 0, death_secs)).to_numpy(object))
    admissions = pd.DataFrame({
        "subject_id": [s.subject_id for s in stays],
        "stay_id": [s.stay_id for s in stays],
        "deathtime": death_strings,
    })

    # event tables, accumulated as flat arrays and framed once
    chart_acc = {"sid": [], "item": [], "sec": [], "val": []}
    lab_acc = {"sid": [], "item": [], "sec": [], "val": []}
    input_rows, proc_rows = [], []
    note_rows = []
    emb_vectors = []
    note_counter = 0
    for stay in stays:
        (ci, cs, cv), (li, lsec, lv) = _stay_series(stay, rng)
        chart_acc["sid"].append(np.repeat(stay.stay_id, len(ci)))
        chart_acc["item"].append(ci)
        chart_acc["sec"].append(cs + stay.intime_sec)
        chart_acc["val"].append(cv)
        lab_acc["sid"].append(np.repeat(stay.stay_id, len(li)))
        lab_acc["item"].append(li)
        lab_acc["sec"].append(lsec + stay.intime_sec)
        lab_acc["val"].append(lv)

        event_sec = (None if stay.event_hour is None
                     else stay.intime_sec + int(round(stay.event_hour * 3600)))
        if stay.event_kind == "vasopressor_start":
            item = int(rng.choice(VASO_ITEMS))
            input_rows.append((stay.stay_id, item, event_sec))
            if rng.random() < 0.3:  # later same-kind row; first extraction wins
                extra = event_sec + int(rng.integers(2, 10)) * 3600
                if extra <= stay.intime_sec + stay.los_sec:
                    input_rows.append((stay.stay_id, int(rng.choice(VASO_ITEMS)),
                                       extra))
        elif stay.event_kind == "ventilation_start":
            proc_rows.append((stay.stay_id, int(rng.choice(VENT_ITEMS)), event_sec))
        if stay.pre_existing_hour is not None:
            sec = stay.intime_sec + int(round(stay.pre_existing_hour * 3600))
            input_rows.append((stay.stay_id, int(rng.choice(VASO_ITEMS)), sec))

        if stay.has_note:
            n_notes = int(np.clip(1 + rng.poisson(1.5), 1, 6))
            first = rng.uniform(0.5, 6.0)
            note_taus = np.sort(np.concatenate(
                [[first], rng.uniform(first, max(first + 0.1, stay.los_hours - 0.5),
                                      n_notes - 1)]))
            for tau in note_taus:
                sec = stay.intime_sec + int(round(tau * 60.0)) * 60
                note_rows.append((f"N{note_counter:08d}", stay.stay_id, sec))
                note_counter += 1
                emb = (stay.x * risk_direction
                       + EMBED_NOISE * rng.standard_normal(EMBED_DIM))
                emb_vectors.append(emb.astype(np.float32))

    def write_events(acc: dict, path: Path):
        out = pd.DataFrame({
            "stay_id": np.concatenate(acc["sid"]),
            "itemid": np.concatenate(acc["item"]),
            "charttime": _format_times(np.concatenate(acc["sec"])),
            "valuenum": np.round(np.concatenate(acc["val"]), 4),
        })
        out.to_csv(path, index=False, float_format="%.4f")

    write_events(chart_acc, out_dir / "chartevents.csv")
    write_events(lab_acc, out_dir / "labevents.csv")

    def write_interventions(rows, path: Path):
        frame = pd.DataFrame(rows, columns=["stay_id", "itemid", "starttime_sec"])
        out = pd.DataFrame({
            "stay_id": frame["stay_id"],
            "itemid": frame["itemid"],
            "starttime": (_format_times(frame["starttime_sec"].to_numpy())
                          if len(frame) else pd.Series([], dtype=str)),
        })
        out.to_csv(path, index=False)

    write_interventions(input_rows, out_dir / "inputevents.csv")
    write_interventions(proc_rows, out_dir / "procedureevents.csv")

    icustays.to_csv(out_dir / "icustays.csv", index=False)
    patients.to_csv(out_dir / "patients.csv", index=False)
    admissions.to_csv(out_dir / "admissions.csv", index=False)

    notes = pd.DataFrame(note_rows, columns=["note_id", "stay_id", "charttime_sec"])
    pd.DataFrame({
        "note_id": notes["note_id"],
        "stay_id": notes["stay_id"],
        "charttime": (_format_times(notes["charttime_sec"].to_numpy())
                      if len(notes) else pd.Series([], dtype=str)),
    }).to_csv(out_dir / "notes.csv", index=False)

    emb_matrix = (np.stack(emb_vectors) if emb_vectors
                  else np.empty((0, EMBED_DIM), np.float32))
    emb_frame = pd.DataFrame(emb_matrix,
                             columns=[f"e{i}" for i in range(EMBED_DIM)])
    emb_frame.insert(0, "charttime",
                     _format_times(notes["charttime_sec"].to_numpy())
                     if len(notes) else pd.Series([], dtype=str))
    emb_frame.insert(0, "stay_id", notes["stay_id"])
    emb_frame.insert(0, "note_id", notes["note_id"])
    emb_frame.to_csv(out_dir / "embeddings.csv", index=False, float_format="%.9g")

    manifest = pd.DataFrame({
        "stay_id": [s.stay_id for s in stays],
        "subject_id": [s.subject_id for s in stays],
        "event_kind": [("pre_existing_vasopressor"
                        if s.pre_existing_hour is not None else s.event_kind)
                       for s in stays],
        "event_hour": [(s.event_hour if s.event_kind != "none"
                        else s.pre_existing_hour) for s in stays],
        "driver_struct": [s.d for s in stays],
        "driver_text": [s.x for s in stays],
        "has_note": [int(s.has_note) for s in stays],
        "event_prob": [s.q for s in stays],
        "los_hours": [s.los_hours for s in stays],
    })
    labels = _manifest_labels(stays)
    manifest.to_csv(out_dir / "manifest.csv", index=False)
    labels.to_csv(out_dir / "manifest_labels.csv", index=False)
    return GroundTruth(manifest=manifest, labels=labels,
                       risk_direction=risk_direction)


def verify_signal(bundle_dir: Path, structured_strength: float = 1.0,
                  text_strength: float = 1.0) -> SignalReport:
    """Diagnostics from the manifest: rate, planted-oracle AUROC, independence.

    The oracle ranks samples by the stay's planted hazard score; its AUROC
    bounds what any structured/text model can recover from the drivers.
    """
    bundle_dir = Path(bundle_dir)
    manifest = pd.read_csv(bundle_dir / "manifest.csv",
                           dtype={"stay_id": str, "subject_id": str})
    labels = pd.read_csv(bundle_dir / "manifest_labels.csv",
                         dtype={"stay_id": str})
    hazard = dict(zip(
        manifest["stay_id"],
        structured_strength * manifest["driver_struct"]
        + text_strength * manifest["driver_text"]))
    scores = labels["stay_id"].map(hazard).to_numpy(np.float64)
    y = labels["label"].to_numpy(np.int64)
    squeezed = 1.0 / (1.0 + np.exp(-scores))  # monotone map into (0,1)
    squeezed = np.clip(squeezed, 1e-9, 1.0 - 1e-9)
    scored = ScoredSet(score=squeezed, logit=scores, label=y,
                       missing_frac=np.zeros(len(y)))
    try:
        oracle = auroc(scored)
    except UndefinedMetricError:
        oracle = None
    d = manifest["driver_struct"].to_numpy(np.float64)
    x = manifest["driver_text"].to_numpy(np.float64)
    corr = None
    if len(d) > 2 and d.std() > 0 and x.std() > 0:
        corr = float(np.corrcoef(d, x)[0, 1])
    return SignalReport(
        n_samples=len(y), n_pos=int(y.sum()),
        rate=float(y.mean()) if len(y) else float("nan"),
        oracle_auroc=oracle, driver_correlation=corr,
        note_coverage=float(manifest["has_note"].mean()),
    )
