"""Discrimination, calibration, thresholding and stratified reporting.

All operations are pure over immutable ScoredSets. AUROC uses the
Mann-Whitney rank formulation (ties get half credit); AUPRC is average
precision with equal scores processed as one block; ECE uses 10
equal-width bins; temperature is fitted by NLL with golden-section
search. Thresholding predicts positive at score >= threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import pandas as pd

from .errors import UndefinedMetricError
from .nn.ops import log_sigmoid, sigmoid

N_RELIABILITY_BINS = 10
TEMPERATURE_RANGE = (0.01, 10.0)
TEMPERATURE_TOL = 1e-4


@dataclass(frozen=True)
class ScoredSet:
    """Parallel arrays of scores, logits, labels and missingness."""

    score: np.ndarray  # float64 in (0, 1)
    logit: np.ndarray  # float64
    label: np.ndarray  # int {0,1}
    missing_frac: np.ndarray  # float64 in [0, 1]
    split: str = ""
    stay_ids: Optional[np.ndarray] = None
    hours: Optional[np.ndarray] = None

    def __post_init__(self):
        n = len(self.score)
        for name in ("logit", "label", "missing_frac"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"ScoredSet arrays must share length; "
                                 f"{name} has {len(getattr(self, name))} != {n}")
        if n and (self.score.min() <= 0.0 or self.score.max() >= 1.0):
            raise ValueError("scores must lie strictly inside (0, 1)")

    def __len__(self) -> int:
        return len(self.score)

    @property
    def n_pos(self) -> int:
        return int(self.label.sum())

    def subset(self, keep: np.ndarray) -> "ScoredSet":
        return ScoredSet(
            score=self.score[keep], logit=self.logit[keep],
            label=self.label[keep], missing_frac=self.missing_frac[keep],
            split=self.split,
            stay_ids=None if self.stay_ids is None else self.stay_ids[keep],
            hours=None if self.hours is None else self.hours[keep])


def _require_both_classes(s: ScoredSet, op: str) -> None:
    n_pos = s.n_pos
    if n_pos == 0 or n_pos == len(s):
        raise UndefinedMetricError(
            f"{op} undefined: set has {n_pos} positives out of {len(s)}")


def auroc(s: ScoredSet) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie), via tie-averaged ranks."""
    _require_both_classes(s, "AUROC")
    scores = s.score
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), np.float64)
    sorted_scores = scores[order]
    # average ranks within tie groups (1-indexed)
    boundaries = np.flatnonzero(np.diff(sorted_scores) != 0) + 1
    starts = np.concatenate([[0], boundaries])
    ends = np.concatenate([boundaries, [len(scores)]])
    for lo, hi in zip(starts, ends):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)
    n_pos = s.n_pos
    n_neg = len(s) - n_pos
    rank_sum = ranks[s.label == 1].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auprc(s: ScoredSet) -> float:
    """Average precision; equal scores are processed as one block."""
    if s.n_pos == 0:
        raise UndefinedMetricError("AUPRC undefined: no positive samples")
    order = np.argsort(-s.score, kind="mergesort")
    scores = s.score[order]
    labels = s.label[order].astype(np.float64)
    # block boundaries where the (descending) score changes
    boundaries = np.flatnonzero(np.diff(scores) != 0) + 1
    ends = np.concatenate([boundaries, [len(scores)]])
    tp = np.cumsum(labels)[ends - 1]  # cumulative TP at each block end
    n_at = ends.astype(np.float64)  # cumulative predictions at block end
    precision = tp / n_at
    delta_tp = np.diff(np.concatenate([[0.0], tp]))
    return float((precision * delta_tp).sum() / s.n_pos)


def brier(s: ScoredSet) -> float:
    """Mean squared difference between score and label."""
    return float(np.mean((s.score - s.label) ** 2))


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    count: int
    mean_score: float  # NaN for empty bins
    frac_pos: float  # NaN for empty bins


def ece(s: ScoredSet, bins: int = N_RELIABILITY_BINS
        ) -> tuple[float, list[ReliabilityBin]]:
    """Expected calibration error over equal-width bins on [0, 1].

    ECE = sum_b (n_b / n) * |mean_score_b - frac_pos_b|; empty bins
    contribute 0.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.minimum((s.score * bins).astype(np.int64), bins - 1)
    total = 0.0
    out = []
    n = len(s)
    for b in range(bins):
        in_bin = idx == b
        count = int(in_bin.sum())
        if count:
            mean_score = float(s.score[in_bin].mean())
            frac_pos = float(s.label[in_bin].mean())
            total += (count / n) * abs(mean_score - frac_pos)
        else:
            mean_score = float("nan")
            frac_pos = float("nan")
        out.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]),
                                  count, mean_score, frac_pos))
    return float(total), out


@dataclass(frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    specificity: float
    f1: float


def confusion_at(s: ScoredSet, threshold: float) -> Confusion:
    """Counts and rates with prediction rule score >= threshold.

    Conventions: precision = 0 with no predicted positives; recall is an
    undefined-metric error with no true positives.
    """
    if s.n_pos == 0:
        raise UndefinedMetricError("recall undefined: no true positives")
    pred = s.score >= threshold
    actual = s.label.astype(bool)
    tp = int((pred & actual).sum())
    fp = int((pred & ~actual).sum())
    tn = int((~pred & ~actual).sum())
    fn = int((~pred & actual).sum())
    precision = tp / (tp + fp) if (tp + fp) else 0.0
    recall = tp / (tp + fn)
    if (tn + fp) == 0:
        raise UndefinedMetricError("specificity undefined: no negatives")
    specificity = tn / (tn + fp)
    f1 = (2 * precision * recall / (precision + recall)
          if (precision + recall) else 0.0)
    return Confusion(tp, fp, tn, fn, precision, recall, specificity, f1)


def best_f1_threshold(s: ScoredSet) -> float:
    """F1-maximizing threshold on a validation set.

    Candidates are the minimum score (predict-everything) and the
    midpoints between consecutive distinct scores; ties resolve to the
    smallest threshold.
    """
    _require_both_classes(s, "best_f1_threshold")
    distinct = np.unique(s.score)
    candidates = [float(distinct[0])]
    candidates += [float(0.5 * (a + b)) for a, b in zip(distinct[:-1], distinct[1:])]
    best_thr = candidates[0]
    best_f1 = -1.0
    for thr in candidates:
        f1 = confusion_at(s, thr).f1
        if f1 > best_f1:  # strict: earliest (smallest) threshold wins ties
            best_f1 = f1
            best_thr = thr
    return best_thr


def fit_temperature(s: ScoredSet) -> float:
    """Temperature minimizing NLL of sigmoid(logit / T) on a calibration set.

    Golden-section search over T in [0.01, 10] to |dT| < 1e-4. The NLL is
    convex in 1/T, hence unimodal in T, which golden-section requires.
    """
    _require_both_classes(s, "fit_temperature")
    y = s.label.astype(np.float64)
    logits = s.logit

    def nll(T: float) -> float:
        scaled = logits / T
        return float(-(y * log_sigmoid(scaled)
                       + (1.0 - y) * log_sigmoid(-scaled)).mean())

    phi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = TEMPERATURE_RANGE
    x1 = hi - phi * (hi - lo)
    x2 = lo + phi * (hi - lo)
    f1, f2 = nll(x1), nll(x2)
    while hi - lo > TEMPERATURE_TOL:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - phi * (hi - lo)
            f1 = nll(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + phi * (hi - lo)
            f2 = nll(x2)
    return float(0.5 * (lo + hi))


def apply_temperature(s: ScoredSet, T: float) -> ScoredSet:
    """Replace scores by sigmoid(logit / T); logits stay untouched."""
    if T <= 0.0:
        raise ValueError("temperature must be positive")
    return replace(s, score=sigmoid(s.logit / T))


@dataclass
class MetricsReport:
    n: int
    n_pos: int
    auroc: float
    auprc: float
    brier: float
    ece: float
    threshold: Optional[float] = None
    f1: Optional[float] = None
    precision: Optional[float] = None
    recall: Optional[float] = None
    specificity: Optional[float] = None
    reliability: list[ReliabilityBin] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {
            "n": self.n, "n_pos": self.n_pos, "auroc": self.auroc,
            "auprc": self.auprc, "brier": self.brier, "ece": self.ece,
        }
        if self.threshold is not None:
            out.update(threshold=self.threshold, f1=self.f1,
                       precision=self.precision, recall=self.recall,
                       specificity=self.specificity)
        out["reliability"] = [
            {"lo": b.lo, "hi": b.hi, "count": b.count,
             "mean_score": b.mean_score, "frac_pos": b.frac_pos}
            for b in self.reliability]
        return out


def metrics_report(s: ScoredSet, threshold: Optional[float] = None) -> MetricsReport:
    """Full report; threshold metrics included when a threshold is given."""
    value, bins = ece(s)
    report = MetricsReport(n=len(s), n_pos=s.n_pos, auroc=auroc(s),
                           auprc=auprc(s), brier=brier(s), ece=value,
                           reliability=bins)
    if threshold is not None:
        conf = confusion_at(s, threshold)
        report.threshold = threshold
        report.f1 = conf.f1
        report.precision = conf.precision
        report.recall = conf.recall
        report.specificity = conf.specificity
    return report


@dataclass
class StratumReport:
    name: str
    n: int
    n_pos: int
    pos_rate: float
    auroc: Optional[float]  # None when undefined for the stratum
    auprc: Optional[float]


def stratify_by_missingness(
    s: ScoredSet, boundaries: tuple[float, float] = (0.5, 0.8)
) -> list[StratumReport]:
    """Per-stratum discrimination plus the overall row.

    Strata partition [0, 1]: [0, b0), [b0, b1), [b1, 1]. Undefined metrics
    (empty or single-class strata) are reported as None.
    """
    b0, b1 = boundaries
    strata = [
        (f"missing<{b0:g}", s.missing_frac < b0),
        (f"{b0:g}<=missing<{b1:g}", (s.missing_frac >= b0) & (s.missing_frac < b1)),
        (f"missing>={b1:g}", s.missing_frac >= b1),
        ("overall", np.ones(len(s), bool)),
    ]
    out = []
    for name, keep in strata:
        sub = s.subset(keep)
        n, n_pos = len(sub), sub.n_pos
        try:
            roc = auroc(sub)
        except UndefinedMetricError:
            roc = None
        try:
            prc = auprc(sub)
        except UndefinedMetricError:
            prc = None
        out.append(StratumReport(name=name, n=n, n_pos=n_pos,
                                 pos_rate=(n_pos / n if n else float("nan")),
                                 auroc=roc, auprc=prc))
    return out


# -- curve points for external plotting -------------------------------------

def roc_points(s: ScoredSet) -> pd.DataFrame:
    """FPR/TPR staircase over all distinct-score thresholds."""
    _require_both_classes(s, "ROC curve")
    order = np.argsort(-s.score, kind="mergesort")
    labels = s.label[order].astype(np.float64)
    scores = s.score[order]
    boundaries = np.flatnonzero(np.diff(scores) != 0) + 1
    ends = np.concatenate([boundaries, [len(scores)]])
    tp = np.cumsum(labels)[ends - 1]
    fp = ends - tp
    n_pos = s.n_pos
    n_neg = len(s) - n_pos
    return pd.DataFrame({
        "threshold": np.concatenate([[np.inf], scores[ends - 1]]),
        "fpr": np.concatenate([[0.0], fp / n_neg]),
        "tpr": np.concatenate([[0.0], tp / n_pos]),
    })


def pr_points(s: ScoredSet) -> pd.DataFrame:
    """Precision/recall staircase over all distinct-score thresholds."""
    if s.n_pos == 0:
        raise UndefinedMetricError("PR curve undefined: no positives")
    order = np.argsort(-s.score, kind="mergesort")
    labels = s.label[order].astype(np.float64)
    scores = s.score[order]
    boundaries = np.flatnonzero(np.diff(scores) != 0) + 1
    ends = np.concatenate([boundaries, [len(scores)]])
    tp = np.cumsum(labels)[ends - 1]
    return pd.DataFrame({
        "threshold": scores[ends - 1],
        "recall": tp / s.n_pos,
        "precision": tp / ends,
    })


def scores_frame(s: ScoredSet) -> pd.DataFrame:
    """Scores file layout: stay_id,t,score,logit,label,missing_frac."""
    n = len(s)
    return pd.DataFrame({
        "stay_id": s.stay_ids if s.stay_ids is not None else [""] * n,
        "t": s.hours if s.hours is not None else np.zeros(n, np.int64),
        "score": s.score,
        "logit": s.logit,
        "label": s.label.astype(np.int64),
        "missing_frac": s.missing_frac,
    })


def scored_set_from_frame(frame: pd.DataFrame, split: str = "") -> ScoredSet:
    return ScoredSet(
        score=frame["score"].to_numpy(np.float64),
        logit=frame["logit"].to_numpy(np.float64),
        label=frame["label"].to_numpy(np.int64),
        missing_frac=frame["missing_frac"].to_numpy(np.float64),
        split=split,
        stay_ids=frame["stay_id"].astype(str).to_numpy(object),
        hours=frame["t"].to_numpy(np.int64),
    )
