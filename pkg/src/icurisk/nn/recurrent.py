"""Sequence LSTM and the 2-layer bidirectional stack.

The sequence loop fuses the gate nonlinearities into a single exp pass
per step (the g-block is computed as tanh(x) = 2*sigmoid(2x) - 1), which
matters because elementwise work, not the matmuls, dominates CPU time.
The step math is identical to ops.lstm_cell and is tested against it.
"""

from __future__ import annotations

import numpy as np

from .ops import dropout, dropout_backward
from .tensor import ParameterSet, Tensor, glorot_uniform


def init_lstm_params(params: ParameterSet, prefix: str, input_dim: int,
                     hidden: int, rng: np.random.Generator):
    """Glorot kernels; forget-gate bias initialized to 1.0."""
    Wx = glorot_uniform(rng, (4 * hidden, input_dim), input_dim, hidden)
    Wh = glorot_uniform(rng, (4 * hidden, hidden), hidden, hidden)
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return (params.add(f"{prefix}.Wx", Wx),
            params.add(f"{prefix}.Wh", Wh),
            params.add(f"{prefix}.b", b))


class LstmSequence:
    """Unidirectional LSTM over [B, T, n] -> [B, T, H] with exact BPTT."""

    def __init__(self, params: ParameterSet, prefix: str, input_dim: int,
                 hidden: int, rng: np.random.Generator):
        self.hidden = hidden
        self.Wx, self.Wh, self.b = init_lstm_params(
            params, prefix, input_dim, hidden, rng)
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        H = self.hidden
        dtype = x.dtype
        Wx = self.Wx.data.astype(dtype, copy=False)
        Wh = self.Wh.data.astype(dtype, copy=False)
        b = self.b.data.astype(dtype, copy=False)

        pre = (x.reshape(B * T, -1) @ Wx.T).reshape(B, T, 4 * H)
        pre = pre + b
        h = np.zeros((B, H), dtype)
        c = np.zeros((B, H), dtype)
        Hs = np.empty((B, T, H), dtype)
        Cs = np.empty((B, T, H), dtype)
        G = np.empty((B, T, 4 * H), dtype)  # activated gates i,f,g,o
        TC = np.empty((B, T, H), dtype)  # tanh(c_t)
        for t in range(T):
            a = pre[:, t, :] + h @ Wh.T
            a[:, 2 * H:3 * H] *= 2.0
            np.negative(a, out=a)
            with np.errstate(over="ignore"):
                np.exp(a, out=a)
            a += 1.0
            np.reciprocal(a, out=a)  # sigmoid of every block
            g = a[:, 2 * H:3 * H]
            g *= 2.0
            g -= 1.0  # tanh via 2*sigmoid(2x) - 1
            c = a[:, H:2 * H] * c + a[:, :H] * g
            tc = np.tanh(c)
            h = a[:, 3 * H:] * tc
            Hs[:, t, :] = h
            Cs[:, t, :] = c
            TC[:, t, :] = tc
            G[:, t, :] = a
        self._cache = (x, Hs, Cs, G, TC)
        return Hs

    def backward(self, dHs: np.ndarray) -> np.ndarray:
        x, Hs, Cs, G, TC = self._cache
        B, T, _ = x.shape
        H = self.hidden
        dtype = x.dtype
        Wx = self.Wx.data.astype(dtype, copy=False)
        Wh = self.Wh.data.astype(dtype, copy=False)

        dA = np.empty((B, T, 4 * H), dtype)
        dh = np.zeros((B, H), dtype)
        dc = np.zeros((B, H), dtype)
        for t in range(T - 1, -1, -1):
            dht = dHs[:, t, :] + dh
            i = G[:, t, :H]
            f = G[:, t, H:2 * H]
            g = G[:, t, 2 * H:3 * H]
            o = G[:, t, 3 * H:]
            tc = TC[:, t, :]
            dct = dc + dht * o * (1.0 - tc * tc)
            dA_t = dA[:, t, :]
            dA_t[:, :H] = (dct * g) * i * (1.0 - i)
            if t > 0:
                dA_t[:, H:2 * H] = (dct * Cs[:, t - 1, :]) * f * (1.0 - f)
            else:
                dA_t[:, H:2 * H] = 0.0  # c_prev is zero at t=0
            dA_t[:, 2 * H:3 * H] = (dct * i) * (1.0 - g * g)
            dA_t[:, 3 * H:] = (dht * tc) * o * (1.0 - o)
            dh = dA_t @ Wh
            dc = dct * f
        dA2 = dA.reshape(B * T, 4 * H)
        dx = (dA2 @ Wx).reshape(x.shape)
        self.Wx.add_grad(dA2.T @ x.reshape(B * T, -1))
        h_prev = np.zeros_like(Hs)
        h_prev[:, 1:, :] = Hs[:, :-1, :]
        self.Wh.add_grad(dA2.T @ h_prev.reshape(B * T, H))
        self.b.add_grad(dA2.sum(axis=0))
        self._cache = None
        return dx


class BiLstm:
    """Stacked bidirectional LSTM with inter-layer dropout.

    Each layer runs a forward-direction and a reverse-direction
    LstmSequence and concatenates their per-step outputs (the reverse
    outputs are re-aligned to forward time). Dropout (inverted) applies
    between layers in training mode only.
    """

    def __init__(self, params: ParameterSet, prefix: str, input_dim: int,
                 hidden: int, layers: int, dropout_p: float,
                 rng: np.random.Generator):
        self.hidden = hidden
        self.layers = layers
        self.dropout_p = dropout_p
        self.directions = []
        dim = input_dim
        for layer in range(layers):
            fw = LstmSequence(params, f"{prefix}.l{layer}.fw", dim, hidden, rng)
            bw = LstmSequence(params, f"{prefix}.l{layer}.bw", dim, hidden, rng)
            self.directions.append((fw, bw))
            dim = 2 * hidden
        self.output_dim = 2 * hidden
        self._drop_caches: list = []

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        self._drop_caches = []
        out = x
        for layer, (fw, bw) in enumerate(self.directions):
            h_fw = fw.forward(out)
            h_bw = bw.forward(out[:, ::-1, :])[:, ::-1, :]
            out = np.concatenate([h_fw, h_bw], axis=2)
            if layer < self.layers - 1:
                out, cache = dropout(out, self.dropout_p, rng, train)
                self._drop_caches.append(cache)
        return out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in range(self.layers - 1, -1, -1):
            fw, bw = self.directions[layer]
            if layer < self.layers - 1:
                dout = dropout_backward(dout, self._drop_caches[layer])
            H = self.hidden
            dx = fw.backward(np.ascontiguousarray(dout[:, :, :H]))
            dx = dx + bw.backward(
                np.ascontiguousarray(dout[:, ::-1, H:]))[:, ::-1, :]
            dout = dx
        return dout
