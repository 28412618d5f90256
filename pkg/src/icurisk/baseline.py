"""Logistic regression over fixed-length window summaries.

Each 48x26 window collapses to per-channel last/mean/min/max/observed-count
statistics over mask=1 cells (26 x 5 = 130) plus the three static features,
a 133-vector. Training minimizes the L2-regularized mean logistic NLL with
gradient descent and backtracking line search; the objective is convex, so
restarts converge to the same loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn.ops import log_sigmoid, sigmoid
from .sampling import SampleDataset

N_STATS = 5
N_SUMMARY_FEATURES = 26 * N_STATS + 3


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray  # float64 [133]
    bias: float
    l2: float


def summarize_window(window: np.ndarray, mask: np.ndarray,
                     statics: np.ndarray) -> np.ndarray:
    """Summary statistics over observed cells of one window."""
    return summarize_windows(window[None], mask[None], statics[None])[0]


def summarize_windows(windows: np.ndarray, masks: np.ndarray,
                      statics: np.ndarray) -> np.ndarray:
    """Vectorized summaries for [N,48,26] windows; fully-missing channels
    contribute zeros with count 0."""
    n = windows.shape[0]
    observed = masks.astype(bool)
    counts = observed.sum(axis=1)  # [N, 26]
    any_obs = counts > 0

    vals = np.where(observed, windows, 0.0).astype(np.float64)
    sums = vals.sum(axis=1)
    means = np.divide(sums, counts, out=np.zeros_like(sums),
                      where=any_obs)
    mins = np.where(observed, windows, np.inf).min(axis=1)
    mins = np.where(any_obs, mins, 0.0)
    maxs = np.where(observed, windows, -np.inf).max(axis=1)
    maxs = np.where(any_obs, maxs, 0.0)
    # last observed value: highest row index with mask set
    hour_idx = np.arange(windows.shape[1])[None, :, None]
    last_idx = np.where(observed, hour_idx, -1).max(axis=1)  # [N, 26]
    take = np.clip(last_idx, 0, None)
    lasts = np.take_along_axis(windows, take[:, None, :], axis=1)[:, 0, :]
    lasts = np.where(any_obs, lasts, 0.0)

    out = np.empty((n, N_SUMMARY_FEATURES), np.float64)
    out[:, 0:130:N_STATS] = lasts
    out[:, 1:130:N_STATS] = means
    out[:, 2:130:N_STATS] = mins
    out[:, 3:130:N_STATS] = maxs
    out[:, 4:130:N_STATS] = counts
    out[:, 130:] = statics
    return out


def summarize_dataset(dataset: SampleDataset, indices: np.ndarray,
                      chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """Summaries plus labels for the given sample rows."""
    feats = np.empty((len(indices), N_SUMMARY_FEATURES), np.float64)
    labels = dataset.labels[indices].astype(np.float64)
    for lo in range(0, len(indices), chunk):
        rows = indices[lo:lo + chunk]
        windows, _, statics, _ = dataset.batch(rows, dtype=np.float64)
        masks = dataset.masks(rows)
        feats[lo:lo + len(rows)] = summarize_windows(windows, masks, statics)
    return feats, labels


def _objective(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float,
               l2: float) -> tuple[float, np.ndarray, float]:
    """Mean NLL + 0.5*l2*||w||^2 (bias unregularized), with gradients."""
    z = X @ w + b
    nll = -(y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z)).mean()
    loss = nll + 0.5 * l2 * float(w @ w)
    resid = (sigmoid(z) - y) / len(y)
    grad_w = X.T @ resid + l2 * w
    grad_b = float(resid.sum())
    return float(loss), grad_w, grad_b


def train_logreg(X: np.ndarray, y: np.ndarray, l2: float = 1e-3,
                 max_iter: int = 10000, tol: float = 1e-8) -> LogisticModel:
    """Gradient descent with backtracking (Armijo) line search.

    Stops when the gradient norm drops below tol; non-convergence is a
    warning, and the model reached so far is still returned.
    """
    if set(np.unique(y)) - {0.0, 1.0}:
        raise ValueError("labels must be 0/1")
    if y.min() == y.max():
        raise ValueError("train_logreg requires at least one sample per class")
    X = np.asarray(X, np.float64)
    y = np.asarray(y, np.float64)
    w = np.zeros(X.shape[1])
    b = 0.0
    step = 1.0
    loss, grad_w, grad_b = _objective(X, y, w, b, l2)
    for _ in range(max_iter):
        grad_norm = float(np.sqrt(grad_w @ grad_w + grad_b * grad_b))
        if grad_norm < tol:
            break
        # backtrack until the Armijo sufficient-decrease condition holds
        step = min(step * 2.0, 1e4)
        sq = grad_norm * grad_norm
        while True:
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            loss_new, gw_new, gb_new = _objective(X, y, w_new, b_new, l2)
            if loss_new <= loss - 1e-4 * step * sq or step < 1e-16:
                break
            step *= 0.5
        w, b, loss, grad_w, grad_b = w_new, b_new, loss_new, gw_new, gb_new
    else:
        warnings.warn(f"train_logreg did not converge: final gradient norm "
                      f"{grad_norm:.3e} (tol {tol:.1e})", stacklevel=2)
    return LogisticModel(weights=w, bias=float(b), l2=l2)


def predict_logreg(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    """sigma(w.x + b) for each row."""
    return sigmoid(np.asarray(X, np.float64) @ model.weights + model.bias)


def logit_logreg(model: LogisticModel, X: np.ndarray) -> np.ndarray:
    return np.asarray(X, np.float64) @ model.weights + model.bias
