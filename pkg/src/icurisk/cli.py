"""Pipeline subcommands: synth | ingest | featurize | sample | train |
evaluate | calibrate | report.

Every subcommand validates its inputs, refuses to overwrite existing
outputs without --force, and writes its resolved configuration plus the
tool version next to its outputs. Exit codes: 2 schema error, 3 config
error, 4 numeric abort, 5 missing input.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__, baseline, metrics, synth
from .config import RunConfig, load_config_file
from .errors import ConfigError, MissingInputError, PipelineError
from .model import MODES, DeteriorationModel, ModelConfig, model_from_checkpoint
from .nn import checkpoint as ckpt_io
from .pipeline import (
    build_pipeline_dataset,
    imputed_grids,
    ingest_bundle,
    normalized_grids,
    save_grid_cache,
    split_for,
)
from .sampling import sample_audit_frame
from .seeding import derive_seed
from .training import TrainConfig, save_history, score_indices, train


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are config errors (exit 3)
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def _guard_outputs(paths: list[Path], force: bool) -> None:
    existing = [str(p) for p in paths if Path(p).exists()]
    if existing and not force:
        raise ConfigError(
            "refusing to overwrite existing outputs (use --force): "
            + ", ".join(existing))


def _ratios(text: str) -> tuple[float, float, float]:
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ValueError("expected three comma-separated ratios")
    return tuple(parts)  # type: ignore[return-value]


def _require_dir(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise MissingInputError(f"{what} directory not found: {path}")
    return path


def _require_file(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.is_file():
        raise MissingInputError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "icustays.csv"], args.force)
    target = rc.resolve("synth.target_rate", args.target_rate, 0.028,
                        lambda s: None if s == "none" else float(s))
    cfg = synth.SynthConfig(
        seed=rc.resolve("synth.seed", args.seed, 0, int),
        n_patients=rc.resolve("synth.n_patients", args.n_patients, 500, int),
        los_median_hours=rc.resolve("synth.los_median_hours", args.los_median,
                                    52.0, float),
        target_rate=target,
        structured_strength=rc.resolve("synth.structured_strength",
                                       args.structured_strength, 1.0, float),
        text_strength=rc.resolve("synth.text_strength", args.text_strength,
                                 1.0, float),
        note_coverage=rc.resolve("synth.note_coverage", args.note_coverage,
                                 0.664, float),
    )
    truth = synth.generate(cfg, out_dir)
    rc.write_resolved(out_dir, "synth")
    rate = truth.labels["label"].mean() if len(truth.labels) else float("nan")
    print(f"synth: {cfg.n_patients} patients, {len(truth.manifest)} stays, "
          f"{len(truth.labels)} samples, positive rate {rate:.4f} -> {out_dir}")
    return 0


def cmd_ingest(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    data_dir = _require_dir(args.data, "data")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "cohort_stays.csv"], args.force)
    cohort = ingest_bundle(data_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pd.DataFrame({
        "stay_id": [s.stay_id for s in cohort.stays],
        "subject_id": [s.subject_id for s in cohort.stays],
        "intime": [s.intime.isoformat() for s in cohort.stays],
        "outtime": [s.outtime.isoformat() for s in cohort.stays],
        "age": [s.age for s in cohort.stays],
        "gender": [s.gender for s in cohort.stays],
        "care_unit": [s.care_unit for s in cohort.stays],
        "los_hours": [round(s.los_hours, 4) for s in cohort.stays],
    }).to_csv(out_dir / "cohort_stays.csv", index=False)

    rows = [(sid, ev.kind, ev.time.isoformat())
            for sid in sorted(cohort.outcomes)
            for ev in cohort.outcomes[sid]]
    pd.DataFrame(rows, columns=["stay_id", "kind", "time"]).to_csv(
        out_dir / "outcomes.csv", index=False)
    pd.DataFrame(sorted(cohort.exclusion_log.items()),
                 columns=["stay_id", "reason"]).to_csv(
        out_dir / "exclusion_log.csv", index=False)

    summary = {
        "n_input_stays": len(cohort.stays) + len(cohort.exclusion_log),
        "n_retained": len(cohort.stays),
        "n_excluded": len(cohort.exclusion_log),
        "n_malformed_rows": cohort.events.n_malformed,
        "n_unknown_item_ids": len(cohort.events.unknown_item_ids),
        "exclusions_by_reason": dict(pd.Series(
            list(cohort.exclusion_log.values())).value_counts().sort_index())
        if cohort.exclusion_log else {},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2,
                                                     default=int))
    rc.write_resolved(out_dir, "ingest")
    print(f"ingest: retained {summary['n_retained']} of "
          f"{summary['n_input_stays']} stays "
          f"({summary['n_malformed_rows']} malformed rows) -> {out_dir}")
    return 0


def _split_args(rc: RunConfig, args):
    seed = rc.resolve("split.seed", args.split_seed, 0, int)
    ratios = rc.resolve("split.ratios", args.ratios, (0.70, 0.15, 0.15),
                        _ratios)
    if isinstance(ratios, str):
        ratios = _ratios(ratios)
    return seed, ratios


def cmd_featurize(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    data_dir = _require_dir(args.data, "data")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "normalizer.json", out_dir / "grids"], args.force)
    seed, ratios = _split_args(rc, args)
    cohort = ingest_bundle(data_dir)
    split = split_for(cohort, seed, ratios)
    grids = imputed_grids(cohort)
    normalized, stats = normalized_grids(cohort, split, cache=grids)
    save_grid_cache(grids, out_dir / "grids")  # cache holds imputed, unnormalized
    stats.save(out_dir / "normalizer.json")
    rc.write_resolved(out_dir, "featurize")
    print(f"featurize: {len(grids)} grids cached, normalizer over "
          f"{int(stats.counts.sum())} observed cells -> {out_dir}")
    del normalized
    return 0


def cmd_sample(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    data_dir = _require_dir(args.data, "data")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "split_manifest.csv",
                    out_dir / "sample_audit.csv"], args.force)
    seed, ratios = _split_args(rc, args)
    _, dataset, _, split = build_pipeline_dataset(data_dir, seed, ratios)
    out_dir.mkdir(parents=True, exist_ok=True)
    split.save(out_dir / "split_manifest.csv")
    sample_audit_frame(dataset).to_csv(out_dir / "sample_audit.csv", index=False)
    rc.write_resolved(out_dir, "sample")
    labels = dataset.labels
    print(f"sample: {len(dataset)} samples, positive rate "
          f"{labels.mean():.4f} -> {out_dir}")
    return 0


def _train_config(rc: RunConfig, args) -> TrainConfig:
    return TrainConfig(
        alpha=rc.resolve("train.alpha", args.alpha, 0.75, float),
        gamma=rc.resolve("train.gamma", args.gamma, 2.0, float),
        label_smoothing=rc.resolve("train.label_smoothing",
                                   args.label_smoothing, 0.05, float),
        lr=rc.resolve("train.lr", args.lr, 2e-4, float),
        weight_decay=rc.resolve("train.weight_decay", args.weight_decay,
                                1e-3, float),
        batch_size=rc.resolve("train.batch_size", args.batch_size, 256, int),
        warmup_epochs=rc.resolve("train.warmup_epochs", args.warmup_epochs, 3, int),
        max_epochs=rc.resolve("train.max_epochs", args.max_epochs, 50, int),
        patience=rc.resolve("train.patience", args.patience, 7, int),
        clip_norm=rc.resolve("train.clip_norm", args.clip_norm, 1.0, float),
        seed=rc.resolve("train.seed", args.seed, 0, int),
        batches_per_epoch=rc.resolve(
            "train.batches_per_epoch", args.batches_per_epoch, None,
            lambda s: None if s == "none" else int(s)),
    )


def cmd_train(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    data_dir = _require_dir(args.data, "data")
    out_dir = Path(args.out)
    ckpt_path = out_dir / "checkpoint.bin"
    _guard_outputs([ckpt_path, out_dir / "history.csv"], args.force)
    seed, ratios = _split_args(rc, args)
    mode = rc.resolve("train.mode", args.mode, "multimodal", str)
    tcfg = _train_config(rc, args)
    features = Path(args.features) if args.features else None

    _, dataset, _, _ = build_pipeline_dataset(data_dir, seed, ratios,
                                              features_dir=features)
    out_dir.mkdir(parents=True, exist_ok=True)

    if mode == "logreg":
        train_idx = dataset.indices_for("train")
        val_idx = dataset.indices_for("val")
        X, y = baseline.summarize_dataset(dataset, train_idx)
        model = baseline.train_logreg(X, y, max_iter=args.logreg_max_iter or 1000)
        Xv, _ = baseline.summarize_dataset(dataset, val_idx)
        logits = baseline.logit_logreg(model, Xv)
        scored = metrics.ScoredSet(
            score=np.clip(1 / (1 + np.exp(-logits)), 1e-12, 1 - 1e-12),
            logit=logits, label=dataset.labels[val_idx].astype(np.int64),
            missing_frac=dataset.missing_frac[val_idx].astype(np.float64),
            split="val")
        val_auroc = metrics.auroc(scored)
        ckpt = ckpt_io.Checkpoint(
            kind="logreg",
            arrays={"weights": model.weights.astype(np.float32),
                    "bias": np.array([model.bias], np.float32),
                    "l2": np.array([model.l2], np.float32)},
            epoch=1, best_val_auroc=val_auroc,
            config_text=f"baseline.l2={model.l2}\n")
        ckpt_io.save(ckpt, ckpt_path)
        rc.write_resolved(out_dir, "train")
        print(f"train[logreg]: val AUROC {val_auroc:.4f} -> {ckpt_path}")
        return 0

    if mode not in MODES:
        raise ConfigError(f"unknown mode '{mode}'")
    mcfg = ModelConfig(mode=mode)
    model = DeteriorationModel(mcfg, seed=derive_seed(tcfg.seed, "model.init"))
    print(f"train[{mode}]: {model.n_parameters} parameters, "
          f"{len(dataset.indices_for('train'))} train samples")
    result = train(model, dataset, tcfg, log=lambda line: print(f"  {line}"))
    ckpt_io.save(result.checkpoint, ckpt_path)
    save_history(result.history, out_dir / "history.csv")
    rc.write_resolved(out_dir, "train")
    print(f"train[{mode}]: best val AUROC "
          f"{result.checkpoint.best_val_auroc:.4f} at epoch "
          f"{result.checkpoint.epoch} -> {ckpt_path}")
    return 0


def _score_with_checkpoint(ckpt, dataset, indices, split_tag: str):
    if ckpt.kind == "logreg":
        X, _ = baseline.summarize_dataset(dataset, indices)
        model = baseline.LogisticModel(
            weights=ckpt.arrays["weights"].astype(np.float64),
            bias=float(ckpt.arrays["bias"][0]),
            l2=float(ckpt.arrays["l2"][0]))
        logits = baseline.logit_logreg(model, X)
        return metrics.ScoredSet(
            score=np.clip(1 / (1 + np.exp(-logits)), 1e-12, 1 - 1e-12),
            logit=logits,
            label=dataset.labels[indices].astype(np.int64),
            missing_frac=dataset.missing_frac[indices].astype(np.float64),
            split=split_tag,
            stay_ids=dataset.stay_ids[indices],
            hours=dataset.hours[indices].astype(np.int64))
    model = model_from_checkpoint(ckpt)
    return score_indices(model, dataset, indices, split_tag=split_tag)


def _report_text(report: metrics.MetricsReport, strata=None) -> str:
    lines = [
        f"n                {report.n}",
        f"n_pos            {report.n_pos}",
        f"auroc            {report.auroc:.6f}",
        f"auprc            {report.auprc:.6f}",
        f"brier            {report.brier:.6f}",
        f"ece              {report.ece:.6f}",
    ]
    if report.threshold is not None:
        lines += [
            f"threshold        {report.threshold:.6f}",
            f"f1               {report.f1:.6f}",
            f"precision        {report.precision:.6f}",
            f"recall           {report.recall:.6f}",
            f"specificity      {report.specificity:.6f}",
        ]
    if strata:
        lines.append("")
        lines.append("missingness strata:")
        for st in strata:
            roc = "undefined" if st.auroc is None else f"{st.auroc:.6f}"
            prc = "undefined" if st.auprc is None else f"{st.auprc:.6f}"
            lines.append(f"  {st.name:24s} n={st.n:8d} pos={st.n_pos:6d} "
                         f"rate={st.pos_rate:.4f} auroc={roc} auprc={prc}")
    return "\n".join(lines) + "\n"


def _strata_json(strata) -> list[dict]:
    return [{"name": s.name, "n": s.n, "n_pos": s.n_pos,
             "pos_rate": s.pos_rate, "auroc": s.auroc, "auprc": s.auprc}
            for s in strata]


def cmd_evaluate(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    data_dir = _require_dir(args.data, "data")
    ckpt_path = _require_file(args.checkpoint, "checkpoint")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "scores_test.csv", out_dir / "report.json"],
                   args.force)
    seed, ratios = _split_args(rc, args)
    features = Path(args.features) if args.features else None
    _, dataset, _, _ = build_pipeline_dataset(data_dir, seed, ratios,
                                              features_dir=features)
    ckpt = ckpt_io.load(ckpt_path)
    out_dir.mkdir(parents=True, exist_ok=True)

    scored = {}
    for split in ("val", "test"):
        idx = dataset.indices_for(split)
        scored[split] = _score_with_checkpoint(ckpt, dataset, idx, split)
        metrics.scores_frame(scored[split]).to_csv(
            out_dir / f"scores_{split}.csv", index=False)

    threshold = metrics.best_f1_threshold(scored["val"])
    reports = {split: metrics.metrics_report(s, threshold)
               for split, s in scored.items()}
    strata = metrics.stratify_by_missingness(scored["test"])
    payload = {split: rep.to_dict() for split, rep in reports.items()}
    payload["threshold_source"] = "best F1 on val"
    payload["missingness_strata_test"] = _strata_json(strata)
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2))
    (out_dir / "report.txt").write_text(
        "== val ==\n" + _report_text(reports["val"])
        + "\n== test ==\n" + _report_text(reports["test"], strata))
    rc.write_resolved(out_dir, "evaluate")
    print(f"evaluate: test AUROC {reports['test'].auroc:.4f} AUPRC "
          f"{reports['test'].auprc:.4f} at threshold {threshold:.4f} "
          f"-> {out_dir}")
    return 0


def cmd_calibrate(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    cal_path = _require_file(args.calibration_scores, "calibration scores file")
    scores_path = _require_file(args.scores, "scores file")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "temperature.txt",
                    out_dir / "scores_calibrated.csv"], args.force)
    cal = metrics.scored_set_from_frame(pd.read_csv(cal_path), "calibration")
    target = metrics.scored_set_from_frame(pd.read_csv(scores_path), "target")
    T = metrics.fit_temperature(cal)
    cal_scaled = metrics.apply_temperature(cal, T)
    target_scaled = metrics.apply_temperature(target, T)
    # thresholds are not preserved by scaling; re-derive on the calibration set
    threshold = metrics.best_f1_threshold(cal_scaled)
    before = metrics.metrics_report(target)
    after = metrics.metrics_report(target_scaled, threshold)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "temperature.txt").write_text(f"{T:.6f}\n")
    metrics.scores_frame(target_scaled).to_csv(
        out_dir / "scores_calibrated.csv", index=False)
    payload = {"temperature": T, "threshold_recalibrated": threshold,
               "before": before.to_dict(), "after": after.to_dict()}
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2))
    rc.write_resolved(out_dir, "calibrate")
    print(f"calibrate: T={T:.4f}, ECE {before.ece:.4f} -> {after.ece:.4f}, "
          f"AUROC {before.auroc:.6f} -> {after.auroc:.6f} -> {out_dir}")
    return 0


def cmd_report(args) -> int:
    rc = RunConfig(load_config_file(args.config))
    scores_path = _require_file(args.scores, "scores file")
    out_dir = Path(args.out)
    _guard_outputs([out_dir / "roc.csv", out_dir / "pr.csv",
                    out_dir / "reliability.csv"], args.force)
    scored = metrics.scored_set_from_frame(pd.read_csv(scores_path))
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.roc_points(scored).to_csv(out_dir / "roc.csv", index=False)
    metrics.pr_points(scored).to_csv(out_dir / "pr.csv", index=False)
    _, bins = metrics.ece(scored)
    pd.DataFrame([{"lo": b.lo, "hi": b.hi, "count": b.count,
                   "mean_score": b.mean_score, "frac_pos": b.frac_pos}
                  for b in bins]).to_csv(out_dir / "reliability.csv", index=False)
    if args.history:
        history = pd.read_csv(_require_file(args.history, "history file"))
        history.to_csv(out_dir / "training_curve.csv", index=False)
    rc.write_resolved(out_dir, "report")
    print(f"report: curve CSVs -> {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icurisk",
                     description="Multimodal ICU deterioration prediction "
                                 "pipeline")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    env_out = os.environ.get("ICURISK_OUT")

    def common(p):
        p.add_argument("--config", type=Path, default=None,
                       help="flat key=value config file (flags override)")
        p.add_argument("--force", action="store_true",
                       help="overwrite existing outputs")
        p.add_argument("--out", type=Path, required=env_out is None,
                       default=None if env_out is None else Path(env_out),
                       help="output directory (ICURISK_OUT overrides the "
                            "default)")

    def split_flags(p):
        p.add_argument("--split-seed", type=int, default=None)
        p.add_argument("--ratios", type=str, default=None,
                       help="train,val,test ratios, e.g. 0.7,0.15,0.15")

    p = sub.add_parser("synth", help="generate a synthetic MIMIC-shaped bundle")
    common(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--n-patients", type=int, default=None)
    p.add_argument("--target-rate", type=str, default=None,
                   help="per-sample positive rate, or 'none' for raw hazard")
    p.add_argument("--structured-strength", type=float, default=None)
    p.add_argument("--text-strength", type=float, default=None)
    p.add_argument("--note-coverage", type=float, default=None)
    p.add_argument("--los-median", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", help="parse tables, select cohort, log exclusions")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("featurize", help="build grid cache and normalizer")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    split_flags(p)
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("sample", help="write split manifest and sample audit")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    split_flags(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train", help="train a model (deep modes or logreg)")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--features", type=Path, default=None,
                   help="featurize output dir with cached grids")
    split_flags(p)
    p.add_argument("--mode", type=str, default=None,
                   choices=list(MODES) + ["logreg"])
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--label-smoothing", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--warmup-epochs", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--batches-per-epoch", type=str, default=None,
                   help="cap batches per epoch, or 'none'")
    p.add_argument("--logreg-max-iter", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score val/test and write reports")
    common(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--features", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, required=True)
    split_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="fit temperature on a calibration set")
    common(p)
    p.add_argument("--calibration-scores", type=Path, required=True,
                   help="scores CSV the temperature is fitted on")
    p.add_argument("--scores", type=Path, required=True,
                   help="scores CSV the fitted temperature is applied to")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("report", help="emit ROC/PR/reliability curve CSVs")
    common(p)
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--history", type=Path, default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"icurisk {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
