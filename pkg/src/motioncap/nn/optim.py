"""Adam optimizer and global-norm gradient clipping."""

from __future__ import annotations

import math

import numpy as np

from .params import ParameterSet


class MissingGradError(ValueError):
    """A non-frozen parameter reached the optimizer without a gradient."""


class Adam:
    """Adam with bias correction; frozen paths receive zero update."""

    def __init__(self, params: ParameterSet, lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {p: np.zeros_like(t.data) for p, t in params.items()}
        self._v = {p: np.zeros_like(t.data) for p, t in params.items()}

    def step(self) -> None:
        for path, tensor in self.params.items():
            if path not in self.params.frozen and tensor.grad is None:
                raise MissingGradError(f"parameter without gradient: {path}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for path, tensor in self.params.items():
            if path in self.params.frozen:
                continue
            g = tensor.grad
            m = self._m[path]
            v = self._v[path]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            tensor.data = tensor.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        self.params.zero_grads()


def clip_global_norm(params: ParameterSet, max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``."""
    total = 0.0
    for _, tensor in params.items():
        if tensor.grad is not None:
            total += float((tensor.grad**2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for _, tensor in params.items():
            if tensor.grad is not None:
                tensor.grad *= scale
    return norm
