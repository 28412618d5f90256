"""Forward/backward operator pairs on plain ndarrays.

Every forward returns (output, cache); the matching backward takes the
upstream gradient and the cache and returns input gradients. Parameter
gradients are returned too, so callers decide where to accumulate.
"""

from __future__ import annotations

import numpy as np


def sigmoid(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + exp(x)) computed without overflow."""
    return np.logaddexp(0.0, x)


def log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -softplus(-x)


# ---------------------------------------------------------------------------
# affine: y = x W^T + b
# ---------------------------------------------------------------------------

def affine(x: np.ndarray, W: np.ndarray, b: np.ndarray):
    """y[B,m] = x[B,n] @ W[m,n]^T + b[m]."""
    if x.ndim != 2 or W.ndim != 2 or x.shape[1] != W.shape[1]:
        raise ValueError(f"affine shape mismatch: x {x.shape} vs W {W.shape}")
    if b.shape != (W.shape[0],):
        raise ValueError(f"affine bias shape {b.shape} does not match W {W.shape}")
    y = x @ W.T + b
    return y, (x, W)


def affine_backward(dy: np.ndarray, cache):
    x, W = cache
    dx = dy @ W
    dW = dy.T @ x
    db = dy.sum(axis=0)
    return dx, dW, db


# ---------------------------------------------------------------------------
# relu / dropout
# ---------------------------------------------------------------------------

def relu(x: np.ndarray):
    y = np.maximum(x, 0.0)
    return y, (x > 0.0)


def relu_backward(dy: np.ndarray, cache):
    return dy * cache


def dropout(x: np.ndarray, p: float, rng: np.random.Generator, train: bool):
    """Inverted dropout: scales by 1/(1-p) at train time, identity in eval."""
    if not train or p <= 0.0:
        return x, None
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - p), x.dtype)
    return x * keep * scale, keep * scale


def dropout_backward(dy: np.ndarray, cache):
    if cache is None:
        return dy
    return dy * cache


# ---------------------------------------------------------------------------
# LSTM cell (single step). Gate order along the 4H axis: i, f, g, o.
# ---------------------------------------------------------------------------

def lstm_cell(x: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
    """Standard LSTM step.

        a = x Wx^T + h_prev Wh^T + b
        i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o); g = tanh(a_g)
        c = f * c_prev + i * g;  h = o * tanh(c)
    """
    H = Wh.shape[1]
    if Wx.shape[0] != 4 * H or x.shape[1] != Wx.shape[1]:
        raise ValueError(f"lstm_cell shape mismatch: x {x.shape}, Wx {Wx.shape}, "
                         f"Wh {Wh.shape}")
    a = x @ Wx.T + h_prev @ Wh.T + b
    i = sigmoid(a[:, :H])
    f = sigmoid(a[:, H:2 * H])
    g = np.tanh(a[:, 2 * H:3 * H])
    o = sigmoid(a[:, 3 * H:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, c, (x, h_prev, c_prev, Wx, Wh, i, f, g, o, tc)


def lstm_cell_backward(dh: np.ndarray, dc: np.ndarray, cache):
    """Exact gradients for one step; dc is the gradient flowing into c_t."""
    x, h_prev, c_prev, Wx, Wh, i, f, g, o, tc = cache
    H = Wh.shape[1]
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    di = dct * g
    df = dct * c_prev
    dg = dct * i
    dc_prev = dct * f
    da = np.empty((dh.shape[0], 4 * H), dh.dtype)
    da[:, :H] = di * i * (1.0 - i)
    da[:, H:2 * H] = df * f * (1.0 - f)
    da[:, 2 * H:3 * H] = dg * (1.0 - g * g)
    da[:, 3 * H:] = do * o * (1.0 - o)
    dx = da @ Wx
    dh_prev = da @ Wh
    dWx = da.T @ x
    dWh = da.T @ h_prev
    db = da.sum(axis=0)
    return dx, dh_prev, dc_prev, dWx, dWh, db


# ---------------------------------------------------------------------------
# attention pooling: alpha_t = softmax_t(w . h_t), z = sum_t alpha_t h_t
# ---------------------------------------------------------------------------

def attention_pool(H: np.ndarray, w: np.ndarray):
    """Pool [B,T,D] to [B,D] with per-head softmax attention over T.

    w has shape [K,D]; head outputs are averaged, so K=1 reduces to the
    single-vector form. Returns (z[B,D], alpha[B,K,T], cache).
    """
    if w.ndim == 1:
        w = w[None, :]
    scores = np.einsum("btd,kd->bkt", H, w)
    scores = scores - scores.max(axis=2, keepdims=True)
    e = np.exp(scores)
    alpha = e / e.sum(axis=2, keepdims=True)
    z = np.einsum("bkt,btd->bd", alpha, H) / w.shape[0]
    return z, alpha, (H, w, alpha)


def attention_pool_backward(dz: np.ndarray, cache):
    H, w, alpha = cache
    B, K, T = alpha.shape
    dz_k = dz / K
    # z = (1/K) sum_k sum_t alpha_kt h_t; dalpha is shared across heads
    dalpha = np.broadcast_to(np.einsum("bd,btd->bt", dz_k, H)[:, None, :], (B, K, T))
    dH = np.einsum("bkt,bd->btd", alpha, dz_k)
    # softmax backward per (b, k) row
    inner = (dalpha * alpha).sum(axis=2, keepdims=True)
    dscores = alpha * (dalpha - inner)
    dH += np.einsum("bkt,kd->btd", dscores, w)
    dw = np.einsum("bkt,btd->kd", dscores, H)
    return dH, dw
