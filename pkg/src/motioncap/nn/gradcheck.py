"""Central finite-difference gradient checker."""

from __future__ import annotations

import numpy as np

from .tensor import NonFiniteError, Tensor, backward, no_grad


def grad_check(fn, point: np.ndarray, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` maps a Tensor to a scalar Tensor. The relative error per
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    point = np.asarray(point, dtype=np.float64)

    x = Tensor(point.copy(), requires_grad=True)
    out = fn(x)
    if out.data.size != 1:
        raise ValueError(f"grad_check: fn must return a scalar, got shape {out.shape}")
    if not np.isfinite(out.data).all():
        raise NonFiniteError("grad_check: non-finite function value at the base point")
    backward(out)
    analytic = x.grad.reshape(-1).copy()

    flat = point.reshape(-1)
    numeric = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] += eps
            hi = fn(Tensor(bumped.reshape(point.shape))).item()
            bumped[i] -= 2 * eps
            lo = fn(Tensor(bumped.reshape(point.shape))).item()
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise NonFiniteError(f"grad_check: non-finite value at coordinate {i}")
            numeric[i] = (hi - lo) / (2 * eps)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
