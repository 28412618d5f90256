"""Minimal dense numeric core: exactly the operators the model needs.

Forward functions return caches, backward functions consume them and
accumulate into parameter gradient buffers. No operator mutates its
inputs except designated parameter/grad buffers. A ParameterSet must be
owned by exactly one training loop at a time.
"""

from .tensor import Tensor, ParameterSet
from .ops import (
    affine,
    affine_backward,
    attention_pool,
    attention_pool_backward,
    dropout,
    dropout_backward,
    lstm_cell,
    lstm_cell_backward,
    relu,
    relu_backward,
    sigmoid,
    softplus,
)
from .recurrent import LstmSequence, BiLstm
from .optim import adamw_step, clip_global_norm
from . import checkpoint

__all__ = [
    "Tensor", "ParameterSet",
    "affine", "affine_backward",
    "attention_pool", "attention_pool_backward",
    "dropout", "dropout_backward",
    "lstm_cell", "lstm_cell_backward",
    "relu", "relu_backward", "sigmoid", "softplus",
    "LstmSequence", "BiLstm",
    "adamw_step", "clip_global_norm",
    "checkpoint",
]
