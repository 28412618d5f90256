"""Stage orchestration shared by the CLI subcommands.

Each stage is a deterministic function of the raw bundle plus seeds, so
downstream stages can either load a cached artifact or recompute it and
get bit-identical results.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np

from .featurize import (
    HourlyGrid,
    NormalizationStats,
    aggregate_hourly,
    fit_normalizer,
    impute,
    load_grid,
    normalize,
    save_grid,
)
from .ingest import Cohort, load_bundle, select_cohort
from .sampling import (
    DEFAULT_RATIOS,
    SampleDataset,
    SplitAssignment,
    StayNotes,
    build_dataset,
    load_embeddings,
    split_by_patient,
)


def ingest_bundle(data_dir: Path) -> Cohort:
    store, metas = load_bundle(Path(data_dir))
    return select_cohort(store, metas)


def imputed_grids(cohort: Cohort) -> dict[str, HourlyGrid]:
    """Raw hourly aggregation plus capped forward-fill for every stay."""
    grids = {}
    for stay in cohort.stays:
        grids[stay.stay_id] = impute(
            aggregate_hourly(cohort.events.events_for(stay.stay_id), stay))
    return grids


def split_for(cohort: Cohort, seed: int,
              ratios: tuple[float, float, float] = DEFAULT_RATIOS) -> SplitAssignment:
    return split_by_patient([s.subject_id for s in cohort.stays],
                            ratios=ratios, seed=seed)


def normalized_grids(
    cohort: Cohort,
    split: SplitAssignment,
    cache: Optional[dict[str, HourlyGrid]] = None,
) -> tuple[dict[str, HourlyGrid], NormalizationStats]:
    """Fit the normalizer on training-split grids only, normalize all.

    Grids are fitted in sorted stay order so the reduction is
    deterministic regardless of dict iteration order.
    """
    grids = cache if cache is not None else imputed_grids(cohort)
    train_ids = sorted(
        s.stay_id for s in cohort.stays if split.split_of(s.subject_id) == "train")
    stats = fit_normalizer([grids[sid] for sid in train_ids])
    return {sid: normalize(g, stats) for sid, g in grids.items()}, stats


def save_grid_cache(grids: dict[str, HourlyGrid], out_dir: Path) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for sid in sorted(grids):
        save_grid(grids[sid], out_dir / f"{sid}.grid")


def load_grid_cache(cache_dir: Path) -> dict[str, HourlyGrid]:
    grids = {}
    for path in sorted(Path(cache_dir).glob("*.grid")):
        grid = load_grid(path)
        grids[grid.stay_id] = grid
    return grids


def build_pipeline_dataset(
    data_dir: Path,
    split_seed: int,
    ratios: tuple[float, float, float] = DEFAULT_RATIOS,
    with_notes: bool = True,
    features_dir: Optional[Path] = None,
) -> tuple[Cohort, SampleDataset, NormalizationStats, SplitAssignment]:
    """End-to-end dataset assembly from a raw bundle directory.

    When features_dir points at a featurize-stage output, its cached
    imputed grids are reused instead of recomputing them.
    """
    cohort = ingest_bundle(data_dir)
    split = split_for(cohort, split_seed, ratios)
    cache = None
    if features_dir is not None:
        grid_dir = Path(features_dir) / "grids"
        if grid_dir.is_dir():
            cache = load_grid_cache(grid_dir)
    grids, stats = normalized_grids(cohort, split, cache=cache)
    notes: Optional[dict[str, StayNotes]] = None
    if with_notes:
        emb_path = Path(data_dir) / "embeddings.csv"
        if emb_path.exists():
            notes = load_embeddings(emb_path)
    dataset = build_dataset(cohort, grids, notes, split)
    return cohort, dataset, stats, split


def dataset_missing_sanity(dataset: SampleDataset) -> None:
    frac = dataset.missing_frac
    if len(frac) and (frac.min() < 0.0 or frac.max() > 1.0):
        raise AssertionError("missing_frac outside [0, 1]")
