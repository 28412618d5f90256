"""The multimodal deterioration model and its ablation modes.

Pipeline: a 2-layer BiLSTM with temporal attention pools the 48x26 window
into a 256-d temporal vector; the 768-d note embedding is projected (ReLU)
to 256; a sigmoid gate mixes the two convexly; the fused vector plus three
static features feeds a two-layer classifier ending in a sigmoid.

Modes:
    multimodal      -- full path.
    structured_only -- text projection and gate bypassed, fused = temporal.
    text_only       -- temporal encoder bypassed, fused = text.

Static features enter at the classifier (259-d input). Eval-mode forward
is a pure function of (sample, parameters). Training mode is single-owner:
caches live on the model between forward and backward.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from . import nn
from .nn.tensor import ParameterSet, glorot_uniform
from .seeding import rng_for

MODES = ("multimodal", "structured_only", "text_only")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 26
    lstm_hidden: int = 128
    lstm_layers: int = 2
    dropout: float = 0.3
    text_in: int = 768
    proj_dim: int = 256
    fusion_hidden: int = 128  # accepted for config compatibility; the gate
    # itself is a single affine map producing one value per fused dimension
    clf_hidden: int = 64
    attention_heads: int = 1
    mode: str = "multimodal"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}', expected one of {MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("ModelConfig.dropout must be in [0, 1)")
        if self.proj_dim != 2 * self.lstm_hidden:
            raise ValueError("proj_dim must equal the encoder output dim "
                             "(2 * lstm_hidden) for the convex gate")
        for f in fields(self):
            if f.name in ("mode", "dropout"):
                continue
            if getattr(self, f.name) <= 0:
                raise ValueError(f"ModelConfig.{f.name} must be positive")

    def to_text(self) -> str:
        lines = [f"model.{f.name}={getattr(self, f.name)}" for f in fields(self)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kwargs = {}
        casts = {"mode": str, "dropout": float}
        for line in text.splitlines():
            line = line.strip()
            if not line.startswith("model.") or "=" not in line:
                continue
            key, value = line.split("=", 1)
            name = key[len("model."):]
            if name in {f.name for f in fields(cls)}:
                kwargs[name] = casts.get(name, int)(value)
        return cls(**kwargs)


@dataclass
class ForwardTrace:
    """Intermediate activations of one forward pass."""

    z_temporal: Optional[np.ndarray] = None
    z_text: Optional[np.ndarray] = None
    gate: Optional[np.ndarray] = None
    z_fused: Optional[np.ndarray] = None
    alpha: Optional[np.ndarray] = None
    p: Optional[np.ndarray] = None
    logit: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)


class DeteriorationModel:
    """Owns a ParameterSet and wires the encoder, fusion and classifier."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.params = ParameterSet(dtype=dtype)
        rng = rng_for(seed, "model.init")
        c = config

        self.encoder = nn.BiLstm(self.params, "lstm", c.input_dim,
                                 c.lstm_hidden, c.lstm_layers, c.dropout, rng)
        enc_dim = self.encoder.output_dim
        self.attn_w = self.params.add(
            "attn.w", glorot_uniform(rng, (c.attention_heads, enc_dim), enc_dim, 1))
        self.proj_W = self.params.add(
            "proj.W", glorot_uniform(rng, (c.proj_dim, c.text_in), c.text_in, c.proj_dim))
        self.proj_b = self.params.add("proj.b", np.zeros(c.proj_dim))
        gate_in = enc_dim + c.proj_dim
        self.gate_W = self.params.add(
            "gate.W", glorot_uniform(rng, (enc_dim, gate_in), gate_in, enc_dim))
        self.gate_b = self.params.add("gate.b", np.zeros(enc_dim))
        clf_in = enc_dim + 3
        self.clf_W1 = self.params.add(
            "clf.W1", glorot_uniform(rng, (c.clf_hidden, clf_in), clf_in, c.clf_hidden))
        self.clf_b1 = self.params.add("clf.b1", np.zeros(c.clf_hidden))
        self.clf_W2 = self.params.add(
            "clf.W2", glorot_uniform(rng, (1, c.clf_hidden), c.clf_hidden, 1))
        self.clf_b2 = self.params.add("clf.b2", np.zeros(1))
        self._cache: dict = {}

    @property
    def n_parameters(self) -> int:
        return self.params.n_values()

    # -- forward -----------------------------------------------------------

    def encode_temporal(self, window: np.ndarray, train: bool = False,
                        rng: np.random.Generator | None = None):
        """BiLSTM + attention pooling of a [B, 48, 26] window batch."""
        c = self.config
        if window.ndim != 3 or window.shape[1:] != (48, c.input_dim):
            raise ValueError(f"window batch has shape {window.shape}, "
                             f"expected (B, 48, {c.input_dim})")
        H = self.encoder.forward(window, train=train, rng=rng)
        z, alpha, attn_cache = nn.attention_pool(H, self.attn_w.data.astype(
            window.dtype, copy=False))
        self._cache["attn"] = attn_cache
        return z, alpha

    def project_text(self, emb: np.ndarray, train: bool = False,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        """ReLU projection of [B, 768] embeddings to the shared 256-d space."""
        pre, aff_cache = nn.affine(emb, self.proj_W.data.astype(emb.dtype, copy=False),
                                   self.proj_b.data.astype(emb.dtype, copy=False))
        z, relu_cache = nn.relu(pre)
        z, drop_cache = nn.dropout(z, self.config.dropout, rng, train)
        self._cache["proj"] = (aff_cache, relu_cache, drop_cache)
        return z

    def fuse(self, z_temporal: np.ndarray, z_text: np.ndarray):
        """Sigmoid gate g mixes modalities: fused = g*temporal + (1-g)*text."""
        u = np.concatenate([z_temporal, z_text], axis=1)
        pre, aff_cache = nn.affine(u, self.gate_W.data.astype(u.dtype, copy=False),
                                   self.gate_b.data.astype(u.dtype, copy=False))
        g = nn.sigmoid(pre)
        fused = g * z_temporal + (1.0 - g) * z_text
        self._cache["gate"] = (aff_cache, g, z_temporal, z_text)
        return fused, g

    def classify(self, z_fused: np.ndarray, statics: np.ndarray,
                 train: bool = False, rng: np.random.Generator | None = None):
        """Two-layer head over [fused; statics]; returns (p, logit)."""
        x = np.concatenate([z_fused, statics.astype(z_fused.dtype)], axis=1)
        h_pre, aff1 = nn.affine(x, self.clf_W1.data.astype(x.dtype, copy=False),
                                self.clf_b1.data.astype(x.dtype, copy=False))
        h, relu_cache = nn.relu(h_pre)
        h, drop_cache = nn.dropout(h, self.config.dropout, rng, train)
        logit2, aff2 = nn.affine(h, self.clf_W2.data.astype(x.dtype, copy=False),
                                 self.clf_b2.data.astype(x.dtype, copy=False))
        logit = logit2[:, 0]
        p = nn.sigmoid(logit)
        self._cache["clf"] = (aff1, relu_cache, drop_cache, aff2)
        return p, logit

    def forward(self, window: np.ndarray, note_emb: np.ndarray,
                statics: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> ForwardTrace:
        """Full forward pass; per-mode ablations bypass the unused paths."""
        mode = self.config.mode
        trace = ForwardTrace()
        if mode == "text_only":
            z_text = self.project_text(note_emb, train, rng)
            z_fused = z_text
            trace.z_text = z_text
        elif mode == "structured_only":
            z_temporal, alpha = self.encode_temporal(window, train, rng)
            z_fused = z_temporal
            trace.z_temporal, trace.alpha = z_temporal, alpha
        else:
            z_temporal, alpha = self.encode_temporal(window, train, rng)
            z_text = self.project_text(note_emb, train, rng)
            z_fused, gate = self.fuse(z_temporal, z_text)
            trace.z_temporal, trace.alpha = z_temporal, alpha
            trace.z_text, trace.gate = z_text, gate
        p, logit = self.classify(z_fused, statics, train, rng)
        trace.z_fused, trace.p, trace.logit = z_fused, p, logit
        return trace

    def forward_sample(self, window: np.ndarray, note_emb: np.ndarray,
                       statics: np.ndarray) -> tuple[float, ForwardTrace]:
        """Eval-mode forward for a single sample."""
        trace = self.forward(window[None], note_emb[None], statics[None],
                             train=False)
        return float(trace.p[0]), trace

    def predict_sample(self, sample) -> tuple[float, ForwardTrace]:
        """Eval-mode probability for one materialized Sample."""
        dtype = self.params.dtype
        statics = np.array([sample.age_norm, sample.gender_flag,
                            sample.has_note], dtype)
        return self.forward_sample(sample.window.astype(dtype),
                                   sample.note_embedding.astype(dtype),
                                   statics)

    # -- backward ----------------------------------------------------------

    def backward(self, dlogit: np.ndarray) -> None:
        """Accumulate parameter grads from d(loss)/d(logit) of the last forward."""
        mode = self.config.mode
        aff1, relu_cache, drop_cache, aff2 = self._cache["clf"]
        dh, dW2, db2 = nn.affine_backward(dlogit[:, None], aff2)
        self.clf_W2.add_grad(dW2)
        self.clf_b2.add_grad(db2)
        dh = nn.dropout_backward(dh, drop_cache)
        dh = nn.relu_backward(dh, relu_cache)
        dx, dW1, db1 = nn.affine_backward(dh, aff1)
        self.clf_W1.add_grad(dW1)
        self.clf_b1.add_grad(db1)
        dz_fused = dx[:, :self.encoder.output_dim]

        if mode == "text_only":
            self._backward_text(dz_fused)
            return
        if mode == "structured_only":
            self._backward_temporal(dz_fused)
            return

        aff_cache, g, z_temporal, z_text = self._cache["gate"]
        dz_t = dz_fused * g
        dz_x = dz_fused * (1.0 - g)
        dg = dz_fused * (z_temporal - z_text)
        dpre = dg * g * (1.0 - g)
        du, dWg, dbg = nn.affine_backward(dpre, aff_cache)
        self.gate_W.add_grad(dWg)
        self.gate_b.add_grad(dbg)
        enc_dim = self.encoder.output_dim
        dz_t = dz_t + du[:, :enc_dim]
        dz_x = dz_x + du[:, enc_dim:]
        self._backward_temporal(dz_t)
        self._backward_text(dz_x)

    def _backward_temporal(self, dz: np.ndarray) -> None:
        dH, dw = nn.attention_pool_backward(dz, self._cache["attn"])
        self.attn_w.add_grad(dw)
        self.encoder.backward(dH)

    def _backward_text(self, dz: np.ndarray) -> None:
        aff_cache, relu_cache, drop_cache = self._cache["proj"]
        dz = nn.dropout_backward(dz, drop_cache)
        dz = nn.relu_backward(dz, relu_cache)
        _, dW, db = nn.affine_backward(dz, aff_cache)
        self.proj_W.add_grad(dW)
        self.proj_b.add_grad(db)

    # -- persistence ---------------------------------------------------------

    def to_checkpoint(self, include_moments: bool = False, **meta):
        return nn.checkpoint.from_parameter_set(
            self.params, kind="deep", include_moments=include_moments,
            config_text=self.config.to_text(), **meta)

    def load_checkpoint(self, ckpt) -> None:
        self.params.load_state_arrays(ckpt.arrays)
        if ckpt.has_moments:
            self.params.step = ckpt.step
            dt = self.params.dtype
            self.params.m = {k: v.astype(dt) for k, v in ckpt.moments_m.items()}
            self.params.v = {k: v.astype(dt) for k, v in ckpt.moments_v.items()}


def model_from_checkpoint(ckpt, dtype=np.float32) -> DeteriorationModel:
    config = ModelConfig.from_text(ckpt.config_text)
    model = DeteriorationModel(config, seed=0, dtype=dtype)
    model.load_checkpoint(ckpt)
    return model
