"""Hourly prediction samples: enumeration, labeling, notes, patient splits.

A sample at hour t uses the 48 grid rows covering [t-48, t) hours from
intime (left-padded with zeros/mask=0 when t < 48) and is positive iff an
outcome event falls in the half-open horizon (t, t+24]. Because outcome
extraction keeps only the first event per kind, a kind whose start time is
at or before t can never label a later sample positive ("new events only").

Splits are performed at the patient level; all stays of a patient share
one split. Sample windows are sliced lazily so millions of samples stay
memory-bounded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import floor
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, MissingInputError
from .featurize import HourlyGrid
from .ingest import Cohort, OutcomeEvent, StayMeta

WINDOW_HOURS = 48
HORIZON_HOURS = 24
FIRST_SAMPLE_HOUR = 6
LAST_SAMPLE_HOUR = 48
EMBEDDING_DIM = 768

AGE_CENTER = 65.0  # cohort median age
AGE_SCALE = 15.0  # cohort IQR-derived scale

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class Sample:
    """One hourly prediction instance, fully materialized."""

    stay_id: str
    t: int
    window: np.ndarray  # [48, 26] normalized values, zero-padded
    window_mask: np.ndarray  # [48, 26] uint8
    note_embedding: np.ndarray  # [768] float32, zeros when has_note == 0
    has_note: int
    age_norm: float
    gender_flag: int
    label: int
    missing_frac: float


@dataclass(frozen=True)
class SplitAssignment:
    """Patient-level partition into train/val/test."""

    assignment: dict[str, str]  # subject_id -> split
    ratios: tuple[float, float, float]
    seed: int

    def split_of(self, subject_id: str) -> str:
        return self.assignment[subject_id]

    def subjects_in(self, split: str) -> list[str]:
        return sorted(s for s, v in self.assignment.items() if v == split)

    def save(self, path: Path) -> None:
        rows = sorted(self.assignment.items())
        frame = pd.DataFrame(rows, columns=["subject_id", "split"])
        frame.to_csv(path, index=False)

    @classmethod
    def load(cls, path: Path, ratios=DEFAULT_RATIOS, seed: int = 0) -> "SplitAssignment":
        frame = pd.read_csv(path, dtype=str)
        return cls(dict(zip(frame["subject_id"], frame["split"])),
                   tuple(ratios), seed)


def enumerate_samples(stay: StayMeta) -> list[int]:
    """Prediction hours t in {6, ..., min(48, floor(LOS))}."""
    t_max = min(LAST_SAMPLE_HOUR, floor(stay.los_hours))
    return list(range(FIRST_SAMPLE_HOUR, t_max + 1))


def label_sample(t: int, outcomes: list[OutcomeEvent], stay: StayMeta) -> int:
    """1 iff any first-per-kind outcome falls in (intime+t, intime+t+24].

    Comparison is done on exact timestamps, so events at the horizon
    boundaries behave identically across serialization round trips.
    """
    lo = stay.intime + pd.Timedelta(hours=t)
    hi = stay.intime + pd.Timedelta(hours=t + HORIZON_HOURS)
    for event in outcomes:
        if lo < event.time <= hi:
            return 1
    return 0


def attach_note(
    t: int,
    notes: list[tuple[str, pd.Timestamp, np.ndarray]],
    stay: StayMeta,
) -> tuple[np.ndarray, int]:
    """Embedding of the latest note with time <= intime+t, else zeros.

    Notes must be given sorted by time. A wrong embedding dimension is
    fatal.
    """
    cutoff = stay.intime + pd.Timedelta(hours=t)
    chosen = None
    for _, note_time, vec in notes:
        if note_time <= cutoff:
            chosen = vec
        else:
            break
    if chosen is None:
        return np.zeros(EMBEDDING_DIM, np.float32), 0
    if chosen.shape != (EMBEDDING_DIM,):
        raise ValueError(
            f"note embedding for stay {stay.stay_id} has shape {chosen.shape}, "
            f"expected ({EMBEDDING_DIM},)")
    return chosen.astype(np.float32), 1


def split_by_patient(
    subject_ids: list[str],
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    seed: int = 0,
) -> SplitAssignment:
    """Seeded shuffle of deduplicated patients, split at ratio boundaries."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios {ratios} do not sum to 1")
    subjects = sorted(set(subject_ids))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(subjects))
    shuffled = [subjects[i] for i in order]
    n = len(shuffled)
    b1 = int(np.floor(ratios[0] * n))
    b2 = int(np.floor((ratios[0] + ratios[1]) * n))
    assignment = {}
    for i, subject in enumerate(shuffled):
        assignment[subject] = "train" if i < b1 else ("val" if i < b2 else "test")
    return SplitAssignment(assignment=assignment, ratios=tuple(ratios), seed=seed)


def assert_leak_free(split: SplitAssignment, stays: list[StayMeta]) -> None:
    """Patient sets of the three splits must be pairwise disjoint."""
    by_split: dict[str, set[str]] = {s: set() for s in SPLITS}
    for stay in stays:
        by_split[split.split_of(stay.subject_id)].add(stay.subject_id)
    for a in SPLITS:
        for b in SPLITS:
            if a < b and by_split[a] & by_split[b]:
                raise AssertionError(
                    f"patient leak between splits {a} and {b}: "
                    f"{sorted(by_split[a] & by_split[b])[:5]}")


@dataclass
class StayNotes:
    """Per-stay note embeddings sorted by chart time."""

    note_ids: list[str]
    times_sec: np.ndarray  # int64 seconds since epoch
    vectors: np.ndarray  # [k, 768] float32


def load_embeddings(path: Path) -> dict[str, StayNotes]:
    """Read the embedding file (note_id,stay_id,charttime,e0..e767)."""
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"embedding file not found: {path}")
    frame = pd.read_csv(path, dtype={"note_id": str, "stay_id": str})
    dim_cols = [c for c in frame.columns if c.startswith("e")]
    if len(dim_cols) != EMBEDDING_DIM:
        raise ValueError(
            f"{path}: expected {EMBEDDING_DIM} embedding columns, found {len(dim_cols)}")
    times = pd.to_datetime(frame["charttime"], utc=True, format="mixed")
    frame = frame.assign(_time=times).sort_values(["stay_id", "_time"], kind="mergesort")
    result: dict[str, StayNotes] = {}
    for sid, group in frame.groupby("stay_id", sort=True):
        result[str(sid)] = StayNotes(
            note_ids=[str(n) for n in group["note_id"]],
            times_sec=(group["_time"].astype("int64") // 10**9).to_numpy(),
            vectors=group[dim_cols].to_numpy(np.float32),
        )
    return result


@dataclass
class SampleDataset:
    """Lazily-sliced sample stream over normalized grids.

    Holds one metadata row per sample; 48x26 windows are assembled on
    demand from the per-stay grids.
    """

    grids: dict[str, HourlyGrid]
    notes: dict[str, StayNotes]
    stay_ids: np.ndarray  # object, per sample
    subject_ids: np.ndarray  # object
    hours: np.ndarray  # int32
    labels: np.ndarray  # int8
    has_note: np.ndarray  # int8
    note_row: np.ndarray  # int32 index into the stay's vectors, -1 when none
    age_norm: np.ndarray  # float32
    gender_flag: np.ndarray  # int8
    missing_frac: np.ndarray  # float32
    split: np.ndarray  # object

    def __len__(self) -> int:
        return len(self.hours)

    def indices_for(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == split)

    def window(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        grid = self.grids[self.stay_ids[i]]
        return slice_window(grid, int(self.hours[i]))

    def sample_at(self, i: int) -> Sample:
        """Materialize one prediction instance."""
        window, wmask = self.window(i)
        vec = np.zeros(EMBEDDING_DIM, np.float32)
        if self.note_row[i] >= 0:
            vec = self.notes[self.stay_ids[i]].vectors[self.note_row[i]]
        return Sample(
            stay_id=self.stay_ids[i],
            t=int(self.hours[i]),
            window=window.astype(np.float32),
            window_mask=wmask,
            note_embedding=vec,
            has_note=int(self.has_note[i]),
            age_norm=float(self.age_norm[i]),
            gender_flag=int(self.gender_flag[i]),
            label=int(self.labels[i]),
            missing_frac=float(self.missing_frac[i]),
        )

    def batch(self, indices: np.ndarray, dtype=np.float32):
        """Assemble (windows, note_vecs, statics, labels) for the rows."""
        n = len(indices)
        windows = np.zeros((n, WINDOW_HOURS, 26), dtype)
        notes = np.zeros((n, EMBEDDING_DIM), dtype)
        statics = np.zeros((n, 3), dtype)
        for j, i in enumerate(indices):
            w, _ = self.window(int(i))
            windows[j] = w
            if self.note_row[i] >= 0:
                notes[j] = self.notes[self.stay_ids[i]].vectors[self.note_row[i]]
        statics[:, 0] = self.age_norm[indices]
        statics[:, 1] = self.gender_flag[indices]
        statics[:, 2] = self.has_note[indices]
        labels = self.labels[indices].astype(dtype)
        return windows, notes, statics, labels

    def masks(self, indices: np.ndarray) -> np.ndarray:
        out = np.zeros((len(indices), WINDOW_HOURS, 26), np.uint8)
        for j, i in enumerate(indices):
            _, m = self.window(int(i))
            out[j] = m
        return out


def slice_window(grid: HourlyGrid, t: int) -> tuple[np.ndarray, np.ndarray]:
    """Grid rows [t-48, t), left-padded with zeros/mask=0 when t < 48."""
    lo = t - WINDOW_HOURS
    window = np.zeros((WINDOW_HOURS, 26), grid.values.dtype)
    mask = np.zeros((WINDOW_HOURS, 26), np.uint8)
    src_lo = max(lo, 0)
    src_hi = min(t, grid.n_hours)
    if src_hi > src_lo:
        dst_lo = src_lo - lo
        window[dst_lo:dst_lo + (src_hi - src_lo)] = grid.values[src_lo:src_hi]
        mask[dst_lo:dst_lo + (src_hi - src_lo)] = grid.mask[src_lo:src_hi]
    return window, mask


def static_features(stay: StayMeta) -> tuple[float, int]:
    age_norm = (stay.age - AGE_CENTER) / AGE_SCALE
    gender_flag = 1 if stay.gender == "M" else 0
    return age_norm, gender_flag


def build_dataset(
    cohort: Cohort,
    grids: dict[str, HourlyGrid],
    notes: Optional[dict[str, StayNotes]],
    split: SplitAssignment,
) -> SampleDataset:
    """Enumerate, label and annotate every sample of the cohort.

    Grids must already be imputed and normalized. Stays are processed in
    sorted order so the sample table is deterministic.
    """
    assert_leak_free(split, cohort.stays)
    notes = notes or {}
    cols: dict[str, list] = {k: [] for k in (
        "stay", "subject", "t", "label", "has_note", "note_row",
        "age", "gender", "missing", "split")}
    for stay in sorted(cohort.stays, key=lambda s: s.stay_id):
        grid = grids[stay.stay_id]
        if not (grid.imputed and grid.normalized):
            raise ValueError(f"grid for stay {stay.stay_id} must be imputed "
                             "and normalized before sampling")
        outcomes = cohort.outcomes.get(stay.stay_id, [])
        age_norm, gender_flag = static_features(stay)
        stay_split = split.split_of(stay.subject_id)
        stay_notes = notes.get(stay.stay_id)
        intime_sec = int(stay.intime.value // 10**9)
        for t in enumerate_samples(stay):
            _, wmask = slice_window(grid, t)
            note_row = -1
            if stay_notes is not None:
                cutoff = intime_sec + t * 3600
                pos = int(np.searchsorted(stay_notes.times_sec, cutoff, side="right")) - 1
                note_row = pos  # -1 when no note at or before the cutoff
            cols["stay"].append(stay.stay_id)
            cols["subject"].append(stay.subject_id)
            cols["t"].append(t)
            cols["label"].append(label_sample(t, outcomes, stay))
            cols["has_note"].append(1 if note_row >= 0 else 0)
            cols["note_row"].append(note_row)
            cols["age"].append(age_norm)
            cols["gender"].append(gender_flag)
            cols["missing"].append(1.0 - wmask.mean())
            cols["split"].append(stay_split)

    return SampleDataset(
        grids=grids,
        notes=notes,
        stay_ids=np.array(cols["stay"], object),
        subject_ids=np.array(cols["subject"], object),
        hours=np.array(cols["t"], np.int32),
        labels=np.array(cols["label"], np.int8),
        has_note=np.array(cols["has_note"], np.int8),
        note_row=np.array(cols["note_row"], np.int32),
        age_norm=np.array(cols["age"], np.float32),
        gender_flag=np.array(cols["gender"], np.int8),
        missing_frac=np.array(cols["missing"], np.float32),
        split=np.array(cols["split"], object),
    )


def sample_audit_frame(dataset: SampleDataset) -> pd.DataFrame:
    """Audit dump: stay_id,t,label,has_note,missing_frac."""
    return pd.DataFrame({
        "stay_id": dataset.stay_ids,
        "t": dataset.hours,
        "label": dataset.labels,
        "has_note": dataset.has_note,
        "missing_frac": np.round(dataset.missing_frac.astype(np.float64), 6),
    })
