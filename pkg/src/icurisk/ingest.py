"""Parse MIMIC-shaped CSV event tables, select the cohort, extract outcomes.

Tables are "MIMIC-shaped", not byte-exact MIMIC: every event table carries
an explicit stay_id column (joining labevents via hadm_id is a documented
preprocessing step left to the caller). Expected files in a data directory:

    icustays.csv        subject_id, stay_id, intime, outtime, first_careunit
    patients.csv        subject_id, gender, anchor_age
    admissions.csv      subject_id, stay_id, deathtime (empty if alive)
    chartevents.csv     stay_id, itemid, charttime, valuenum
    labevents.csv       stay_id, itemid, charttime, valuenum
    inputevents.csv     stay_id, itemid, starttime
    procedureevents.csv stay_id, itemid, starttime

All timestamps are ISO-8601 UTC. Per-stay processing is pure; the
EventStore is immutable after construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np
import pandas as pd

from .channels import (
    MEASUREMENT_ITEM_IDS,
    VASOPRESSOR_ITEM_IDS,
    VENTILATION_ITEM_IDS,
    VITAL_ITEM_IDS,
)
from .errors import MissingInputError, SchemaError

MEASUREMENT_TABLES = ("chartevents", "labevents")
INTERVENTION_TABLES = ("inputevents", "procedureevents")
MALFORMED_ROW_LIMIT = 0.01

MORTALITY = "mortality"
VASOPRESSOR_START = "vasopressor_start"
VENTILATION_START = "ventilation_start"

_CARE_UNIT_KEYWORDS = (("card", "cardiac"), ("surg", "surgical"), ("med", "medical"))


@dataclass(frozen=True)
class StayMeta:
    """Stay-level metadata joined from icustays, patients and admissions."""

    stay_id: str
    subject_id: str
    intime: Optional[pd.Timestamp]
    outtime: Optional[pd.Timestamp]
    age: float
    gender: str  # "M" or "F"
    death_time: Optional[pd.Timestamp] = None
    care_unit: str = "medical"

    @property
    def los_hours(self) -> float:
        return (self.outtime - self.intime).total_seconds() / 3600.0


@dataclass(frozen=True)
class OutcomeEvent:
    stay_id: str
    kind: str  # mortality | vasopressor_start | ventilation_start
    time: pd.Timestamp


@dataclass(frozen=True)
class StayEvents:
    """Time-sorted events of one stay (measurements and interventions)."""

    item_ids: np.ndarray  # int64
    times: np.ndarray  # datetime64[ns]
    values: np.ndarray  # float64
    interv_item_ids: np.ndarray  # int64
    interv_times: np.ndarray  # datetime64[ns]


_EMPTY_EVENTS = StayEvents(
    np.empty(0, np.int64),
    np.empty(0, "datetime64[ns]"),
    np.empty(0, np.float64),
    np.empty(0, np.int64),
    np.empty(0, "datetime64[ns]"),
)


@dataclass
class EventStore:
    """All parsed events grouped by stay_id, each group sorted by time."""

    stays: dict[str, StayEvents]
    unknown_item_ids: frozenset[int]
    malformed_rows: dict[str, int]  # per input file
    total_rows: dict[str, int]

    def events_for(self, stay_id: str) -> StayEvents:
        return self.stays.get(stay_id, _EMPTY_EVENTS)

    @property
    def n_malformed(self) -> int:
        return sum(self.malformed_rows.values())


@dataclass
class Cohort:
    stays: list[StayMeta]
    events: EventStore
    outcomes: dict[str, list[OutcomeEvent]]
    exclusion_log: dict[str, str] = field(default_factory=dict)

    def stay_ids(self) -> list[str]:
        return [s.stay_id for s in self.stays]


def _require_columns(df: pd.DataFrame, columns: Iterable[str], path: Path) -> None:
    for col in columns:
        if col not in df.columns:
            raise SchemaError(f"{path}: missing required column '{col}'")


def _parse_times(series: pd.Series) -> pd.Series:
    return pd.to_datetime(series, utc=True, errors="coerce", format="mixed")


def _table_kind(path: Path) -> str:
    stem = path.stem.lower()
    for name in MEASUREMENT_TABLES:
        if stem.startswith(name):
            return "measurement"
    for name in INTERVENTION_TABLES:
        if stem.startswith(name):
            return "intervention"
    raise SchemaError(f"{path}: unrecognized event table (expected one of "
                      f"{MEASUREMENT_TABLES + INTERVENTION_TABLES})")


def parse_event_tables(paths: Iterable[Path]) -> EventStore:
    """Parse event CSVs into an EventStore.

    Rows with unparseable timestamps or non-finite values are counted per
    file and excluded; more than 1% malformed rows in a file is fatal.
    Unknown item IDs are retained but flagged.
    """
    meas_frames, interv_frames = [], []
    malformed: dict[str, int] = {}
    totals: dict[str, int] = {}
    for path in sorted(Path(p) for p in paths):
        if not path.exists():
            raise MissingInputError(f"event table not found: {path}")
        kind = _table_kind(path)
        df = pd.read_csv(path, dtype={"stay_id": str}, low_memory=False)
        time_col = "charttime" if kind == "measurement" else "starttime"
        required = ["stay_id", "itemid", time_col]
        if kind == "measurement":
            required.append("valuenum")
        _require_columns(df, required, path)

        n_total = len(df)
        times = _parse_times(df[time_col])
        items = pd.to_numeric(df["itemid"], errors="coerce")
        bad = times.isna() | items.isna() | df["stay_id"].isna()
        if kind == "measurement":
            values = pd.to_numeric(df["valuenum"], errors="coerce")
            bad |= ~np.isfinite(values.to_numpy(np.float64, na_value=np.nan))
        n_bad = int(bad.sum())
        malformed[path.name] = malformed.get(path.name, 0) + n_bad
        totals[path.name] = totals.get(path.name, 0) + n_total
        if n_total > 0 and n_bad / n_total > MALFORMED_ROW_LIMIT:
            raise SchemaError(
                f"{path}: {n_bad}/{n_total} malformed rows exceeds the "
                f"{MALFORMED_ROW_LIMIT:.0%} limit")

        keep = df.loc[~bad, ["stay_id"]].copy()
        keep["itemid"] = items[~bad].astype(np.int64)
        keep["time"] = times[~bad]
        if kind == "measurement":
            keep["value"] = values[~bad].astype(np.float64)
            meas_frames.append(keep)
        else:
            interv_frames.append(keep)

    meas = pd.concat(meas_frames, ignore_index=True) if meas_frames else None
    interv = pd.concat(interv_frames, ignore_index=True) if interv_frames else None

    stays: dict[str, StayEvents] = {}
    meas_groups: dict[str, pd.DataFrame] = {}
    interv_groups: dict[str, pd.DataFrame] = {}
    if meas is not None and len(meas):
        meas = meas.sort_values(["stay_id", "time"], kind="mergesort")
        meas_groups = {sid: g for sid, g in meas.groupby("stay_id", sort=True)}
    if interv is not None and len(interv):
        interv = interv.sort_values(["stay_id", "time"], kind="mergesort")
        interv_groups = {sid: g for sid, g in interv.groupby("stay_id", sort=True)}

    for sid in sorted(set(meas_groups) | set(interv_groups)):
        mg = meas_groups.get(sid)
        ig = interv_groups.get(sid)
        stays[sid] = StayEvents(
            item_ids=(mg["itemid"].to_numpy(np.int64) if mg is not None
                      else np.empty(0, np.int64)),
            times=(mg["time"].dt.tz_localize(None).to_numpy() if mg is not None
                   else np.empty(0, "datetime64[ns]")),
            values=(mg["value"].to_numpy(np.float64) if mg is not None
                    else np.empty(0, np.float64)),
            interv_item_ids=(ig["itemid"].to_numpy(np.int64) if ig is not None
                             else np.empty(0, np.int64)),
            interv_times=(ig["time"].dt.tz_localize(None).to_numpy()
                          if ig is not None
                          else np.empty(0, "datetime64[ns]")),
        )

    known = MEASUREMENT_ITEM_IDS | VASOPRESSOR_ITEM_IDS | VENTILATION_ITEM_IDS
    seen: set[int] = set()
    for ev in stays.values():
        seen.update(int(i) for i in np.unique(ev.item_ids))
        seen.update(int(i) for i in np.unique(ev.interv_item_ids))
    return EventStore(
        stays=stays,
        unknown_item_ids=frozenset(seen - known),
        malformed_rows=malformed,
        total_rows=totals,
    )


def _normalize_care_unit(raw: str) -> str:
    text = str(raw).lower()
    for key, unit in _CARE_UNIT_KEYWORDS:
        if key in text:
            return unit
    return "medical"


def load_stay_metas(data_dir: Path) -> list[StayMeta]:
    """Join icustays, patients and admissions into StayMeta records."""
    data_dir = Path(data_dir)
    paths = {name: data_dir / f"{name}.csv"
             for name in ("icustays", "patients", "admissions")}
    for name, path in paths.items():
        if not path.exists():
            raise MissingInputError(f"required table not found: {path}")

    icu = pd.read_csv(paths["icustays"], dtype={"subject_id": str, "stay_id": str})
    _require_columns(icu, ["subject_id", "stay_id", "intime", "outtime",
                           "first_careunit"], paths["icustays"])
    pat = pd.read_csv(paths["patients"], dtype={"subject_id": str})
    _require_columns(pat, ["subject_id", "gender", "anchor_age"], paths["patients"])
    adm = pd.read_csv(paths["admissions"], dtype={"subject_id": str, "stay_id": str})
    _require_columns(adm, ["subject_id", "stay_id", "deathtime"], paths["admissions"])

    pat_by_subject = pat.drop_duplicates("subject_id").set_index("subject_id")
    death_by_stay = adm.drop_duplicates("stay_id").set_index("stay_id")["deathtime"]

    intimes = _parse_times(icu["intime"])
    outtimes = _parse_times(icu["outtime"])
    deaths = _parse_times(death_by_stay)

    metas = []
    for i, row in enumerate(icu.itertuples(index=False)):
        if row.subject_id not in pat_by_subject.index:
            raise SchemaError(
                f"{paths['patients']}: no patient row for subject_id "
                f"'{row.subject_id}' referenced by stay '{row.stay_id}'")
        prow = pat_by_subject.loc[row.subject_id]
        death = deaths.get(row.stay_id, pd.NaT)
        metas.append(StayMeta(
            stay_id=str(row.stay_id),
            subject_id=str(row.subject_id),
            intime=None if pd.isna(intimes.iloc[i]) else intimes.iloc[i],
            outtime=None if pd.isna(outtimes.iloc[i]) else outtimes.iloc[i],
            age=float(prow["anchor_age"]),
            gender=str(prow["gender"]).strip().upper()[:1] or "F",
            death_time=None if pd.isna(death) else death,
            care_unit=_normalize_care_unit(row.first_careunit),
        ))
    return metas


def _first_vital_in_window(events: StayEvents, stay: StayMeta) -> bool:
    if len(events.item_ids) == 0:
        return False
    start = stay.intime.to_datetime64()
    end = (stay.intime + pd.Timedelta(hours=6)).to_datetime64()
    in_window = (events.times >= start) & (events.times < end)
    if not in_window.any():
        return False
    vital_mask = np.isin(events.item_ids[in_window], list(VITAL_ITEM_IDS))
    return bool(vital_mask.any())


def exclusion_reason(events: StayEvents, stay: StayMeta) -> Optional[str]:
    """First failing inclusion criterion, or None if the stay is retained."""
    if stay.intime is None or stay.outtime is None:
        return "missing_times"
    if stay.los_hours < 24.0:
        return "short_stay"
    if stay.age < 18.0:
        return "under_age"
    if stay.death_time is not None and \
            stay.death_time < stay.intime + pd.Timedelta(hours=6):
        return "early_death"
    if len(events.item_ids) == 0:
        return "no_measurements"
    if not _first_vital_in_window(events, stay):
        return "no_early_vitals"
    return None


def extract_outcomes(store: EventStore, stay: StayMeta) -> list[OutcomeEvent]:
    """First new-onset event per kind within the ICU stay boundaries.

    Vasopressor/ventilation starts are the first administration across
    their item sets; intervention events outside [intime, outtime] are
    not considered. Mortality requires death_time within the stay.
    """
    events = store.events_for(stay.stay_id)
    out: list[OutcomeEvent] = []

    if stay.death_time is not None and stay.intime is not None \
            and stay.outtime is not None \
            and stay.intime <= stay.death_time <= stay.outtime:
        out.append(OutcomeEvent(stay.stay_id, MORTALITY, stay.death_time))

    if len(events.interv_item_ids):
        lo = stay.intime.to_datetime64()
        hi = stay.outtime.to_datetime64()
        in_stay = (events.interv_times >= lo) & (events.interv_times <= hi)
        for kind, item_set in ((VASOPRESSOR_START, VASOPRESSOR_ITEM_IDS),
                               (VENTILATION_START, VENTILATION_ITEM_IDS)):
            sel = in_stay & np.isin(events.interv_item_ids, list(item_set))
            if sel.any():
                first = pd.Timestamp(events.interv_times[sel].min(), tz="UTC")
                out.append(OutcomeEvent(stay.stay_id, kind, first))

    out.sort(key=lambda e: (e.time, e.kind))
    return out


def select_cohort(store: EventStore, metas: list[StayMeta]) -> Cohort:
    """Apply inclusion criteria and extract outcomes for retained stays.

    Retains stays with LOS >= 24h, age >= 18 and at least one vital-sign
    event within [intime, intime+6h); every dropped stay gets exactly one
    reason code. An empty cohort is a valid result.
    """
    if not metas:
        raise ValueError("select_cohort requires at least one StayMeta")
    retained: list[StayMeta] = []
    exclusion_log: dict[str, str] = {}
    outcomes: dict[str, list[OutcomeEvent]] = {}
    for stay in metas:
        reason = exclusion_reason(store.events_for(stay.stay_id), stay)
        if reason is None:
            retained.append(stay)
            outcomes[stay.stay_id] = extract_outcomes(store, stay)
        else:
            exclusion_log[stay.stay_id] = reason
    return Cohort(stays=retained, events=store, outcomes=outcomes,
                  exclusion_log=exclusion_log)


def load_bundle(data_dir: Path) -> tuple[EventStore, list[StayMeta]]:
    """Parse all event tables and stay metadata from a data directory."""
    data_dir = Path(data_dir)
    event_paths = []
    for name in MEASUREMENT_TABLES + INTERVENTION_TABLES:
        path = data_dir / f"{name}.csv"
        if not path.exists():
            raise MissingInputError(f"required table not found: {path}")
        event_paths.append(path)
    return parse_event_tables(event_paths), load_stay_metas(data_dir)
