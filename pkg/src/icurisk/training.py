"""Focal loss with label smoothing, LR schedule, and the epoch loop.

The loss is evaluated in logit space so probabilities at exactly 0 or 1
can never produce NaNs. With smoothed target y' = y(1-e) + e/2:

    loss = -mean[ a * y' * (1-p)^g * log p + (1-a) * (1-y') * p^g * log(1-p) ]

which reduces to 0.5 * BCE at g=0, a=0.5, e=0 and to standard focal loss
at e=0. One epoch is a full pass over the training stream unless
batches_per_epoch caps it for desk-scale runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError, NumericError
from .metrics import ScoredSet, auprc, auroc
from .model import DeteriorationModel
from .nn import adamw_step, clip_global_norm, checkpoint as ckpt_io
from .nn.ops import log_sigmoid, sigmoid
from .sampling import SampleDataset
from .seeding import derive_seed, rng_for


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.75
    gamma: float = 2.0
    label_smoothing: float = 0.05
    lr: float = 2e-4
    weight_decay: float = 1e-3
    batch_size: int = 256
    warmup_epochs: int = 3
    max_epochs: int = 50
    patience: int = 7
    clip_norm: float = 1.0
    seed: int = 0
    lr_floor: float = 1e-6
    batches_per_epoch: Optional[int] = None  # cap for fast desk-scale runs
    eval_batch_size: int = 512

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must be in (0, 1)")
        if self.gamma < 0.0:
            raise ConfigError("gamma must be >= 0")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ConfigError("label_smoothing must be in [0, 0.5)")

    def to_text(self) -> str:
        return "".join(f"train.{k}={v}\n" for k, v in asdict(self).items())


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_auroc: float
    val_auprc: float
    lr: float
    seconds: float


def focal_loss(logits: np.ndarray, targets: np.ndarray,
               cfg: TrainConfig) -> tuple[float, np.ndarray]:
    """Mean focal loss with label smoothing, plus d(loss)/d(logits).

    Both the value and the analytic gradient are computed from logits;
    the focal modulation stays tied to the hard class directions while
    the smoothed target enters linearly.
    """
    a, g, eps = cfg.alpha, cfg.gamma, cfg.label_smoothing
    n = logits.size
    y = targets.astype(logits.dtype)
    y_s = y * (1.0 - eps) + eps / 2.0
    p = sigmoid(logits)
    q = sigmoid(-logits)  # 1 - p, computed stably
    log_p = log_sigmoid(logits)
    log_q = log_sigmoid(-logits)
    pos = a * y_s * q ** g
    neg = (1.0 - a) * (1.0 - y_s) * p ** g
    per = -(pos * log_p + neg * log_q)
    loss = float(per.mean())
    # d/dl [q^g log p] = q^g (q - g p log p); d/dl [p^g log q] = p^g (g q log q - p)
    dpos = a * y_s * q ** g * (q - g * p * log_p)
    dneg = (1.0 - a) * (1.0 - y_s) * p ** g * (g * q * log_q - p)
    dlogits = -(dpos + dneg) / n
    return loss, dlogits.astype(logits.dtype)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Linear warmup to cfg.lr over warmup_epochs, then cosine to lr_floor.

    Epochs are 1-indexed: with a 3-epoch warmup, epoch 2 runs at 2/3 of
    the full rate and epoch 3 reaches it; the cosine span ends exactly at
    lr_floor on the final epoch.
    """
    if not 1 <= epoch <= cfg.max_epochs:
        raise ConfigError(f"epoch {epoch} outside [1, {cfg.max_epochs}]")
    w = cfg.warmup_epochs
    if epoch <= w:
        return cfg.lr * epoch / w
    span = cfg.max_epochs - w
    progress = (epoch - w) / span
    return cfg.lr_floor + 0.5 * (cfg.lr - cfg.lr_floor) * (
        1.0 + np.cos(np.pi * progress))


def score_indices(model: DeteriorationModel, dataset: SampleDataset,
                  indices: np.ndarray, batch_size: int = 512,
                  split_tag: str = "") -> ScoredSet:
    """Eval-mode scores for the given sample rows.

    Probabilities are recomputed from the logits in float64 and nudged
    off exact 0/1 so downstream ScoredSets stay valid even for extreme
    logits.
    """
    logits = np.empty(len(indices), np.float64)
    for lo in range(0, len(indices), batch_size):
        chunk = indices[lo:lo + batch_size]
        windows, notes, statics, _ = dataset.batch(chunk)
        trace = model.forward(windows, notes, statics, train=False)
        logits[lo:lo + len(chunk)] = trace.logit
    scores = np.clip(sigmoid(logits), 1e-12, 1.0 - 1e-12)
    return ScoredSet(
        score=scores,
        logit=logits,
        label=dataset.labels[indices].astype(np.int8),
        missing_frac=dataset.missing_frac[indices].astype(np.float64),
        split=split_tag,
        stay_ids=dataset.stay_ids[indices],
        hours=dataset.hours[indices].astype(np.int64),
    )


@dataclass
class TrainResult:
    checkpoint: ckpt_io.Checkpoint
    history: list[EpochRecord] = field(default_factory=list)

    def history_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.history])


def train(model: DeteriorationModel, dataset: SampleDataset, cfg: TrainConfig,
          val_metric: Optional[Callable[[int], tuple[float, float]]] = None,
          log: Optional[Callable[[str], None]] = None) -> TrainResult:
    """Run the epoch loop with early stopping on validation AUROC.

    Batches are shuffled per epoch from a seed derived from (cfg.seed,
    epoch), so two runs with the same seed produce identical histories.
    `val_metric`, when given, replaces the validation pass (epoch ->
    (auroc, auprc)); the default scores the val split with the live model.
    The best-AUROC parameter snapshot is returned; ties keep the earliest
    epoch. A non-finite loss aborts with the offending batch indices.
    """
    train_idx = dataset.indices_for("train")
    val_idx = dataset.indices_for("val")
    if len(train_idx) == 0:
        raise ConfigError("training split is empty")
    if len(val_idx) == 0 and val_metric is None:
        raise ConfigError("validation split is empty and no val_metric given")

    history: list[EpochRecord] = []
    best_auroc = -np.inf
    best_epoch = 0
    best_state: dict[str, np.ndarray] = model.params.state_arrays()

    for epoch in range(1, cfg.max_epochs + 1):
        started = time.perf_counter()
        lr = lr_at(epoch, cfg)
        order = rng_for(cfg.seed, f"train.epoch{epoch}").permutation(len(train_idx))
        n_batches = len(order) // cfg.batch_size or 1
        if cfg.batches_per_epoch is not None:
            n_batches = min(n_batches, cfg.batches_per_epoch)
        drop_rng = rng_for(cfg.seed, f"dropout.epoch{epoch}")

        total_loss = 0.0
        for b in range(n_batches):
            rows = train_idx[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            windows, notes, statics, labels = dataset.batch(rows)
            trace = model.forward(windows, notes, statics, train=True, rng=drop_rng)
            loss, dlogits = focal_loss(trace.logit, labels, cfg)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b}; "
                    f"sample rows: {rows[:16].tolist()}")
            total_loss += loss
            model.params.zero_grads()
            model.backward(dlogits)
            clip_global_norm(model.params, cfg.clip_norm)
            adamw_step(model.params, lr, weight_decay=cfg.weight_decay)

        if val_metric is not None:
            va, vp = val_metric(epoch)
        else:
            scored = score_indices(model, dataset, val_idx,
                                   cfg.eval_batch_size, "val")
            va = auroc(scored)
            vp = auprc(scored)
        record = EpochRecord(epoch=epoch, train_loss=total_loss / n_batches,
                             val_auroc=float(va), val_auprc=float(vp), lr=lr,
                             seconds=time.perf_counter() - started)
        history.append(record)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {record.train_loss:.5f}  "
                f"val_auroc {va:.4f}  val_auprc {vp:.4f}  lr {lr:.2e}")

        if va > best_auroc:
            best_auroc = va
            best_epoch = epoch
            best_state = model.params.state_arrays()
        if epoch - best_epoch >= cfg.patience:
            break

    ckpt = ckpt_io.Checkpoint(
        kind="deep",
        arrays=best_state,
        epoch=best_epoch,
        best_val_auroc=float(best_auroc),
        patience_counter=history[-1].epoch - best_epoch,
        config_text=model.config.to_text() + cfg.to_text(),
    )
    return TrainResult(checkpoint=ckpt, history=history)


def save_history(history: list[EpochRecord], path: Path) -> None:
    frame = pd.DataFrame([asdict(r) for r in history])
    frame.to_csv(path, index=False,
                 columns=["epoch", "train_loss", "val_auroc", "val_auprc",
                          "lr", "seconds"])
