"""AdamW with decoupled weight decay, plus global-norm gradient clipping."""

from __future__ import annotations

import numpy as np

from .tensor import ParameterSet


def clip_global_norm(params: ParameterSet, max_norm: float = 1.0) -> float:
    """Scale all grads by max_norm/g when the global L2 norm g exceeds it.

    Returns the pre-clip global norm.
    """
    total = 0.0
    for tensor in params.tensors():
        if tensor.grad is None:
            raise ValueError("clip_global_norm called with absent grads")
        g = tensor.grad.astype(np.float64, copy=False)
        total += float(np.dot(g.ravel(), g.ravel()))
    norm = float(np.sqrt(total))
    if norm > max_norm:
        scale = max_norm / norm
        for tensor in params.tensors():
            tensor.grad *= np.asarray(scale, tensor.grad.dtype)
    return norm


def adamw_step(params: ParameterSet, lr: float, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8,
               weight_decay: float = 1e-3) -> None:
    """One AdamW update over every parameter.

    Weight decay is decoupled: applied directly to the weights, never
    through the moment estimates, so a zero-grad parameter shrinks by
    exactly (1 - lr * weight_decay) per step.
    """
    for name, tensor in params.items():
        if tensor.grad is None:
            raise ValueError(f"adamw_step: parameter '{name}' has no gradient")
    params.step += 1
    t = params.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, tensor in params.items():
        if name not in params.m:
            params.m[name] = np.zeros_like(tensor.data)
            params.v[name] = np.zeros_like(tensor.data)
        g = tensor.grad
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            tensor.data -= np.asarray(lr * weight_decay, tensor.dtype) * tensor.data
        m_hat = m / bc1
        v_hat = v / bc2
        tensor.data -= np.asarray(lr, tensor.dtype) * (
            m_hat / (np.sqrt(v_hat) + eps))
