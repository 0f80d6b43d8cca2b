"""Transformer building blocks shared by the three networks.

All blocks are pre-norm (layer norm before attention and MLP) for training
stability at small scale. Sequences are plain 2-d tensors (rows x width);
attention heads are taken as column slices.
"""

from __future__ import annotations

import math

import numpy as np

from . import nn
from .nn import ParameterSet, Tensor
from .nn.tensor import MASK_NEG


def gaussian_init(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Linear:
    def __init__(self, ps: ParameterSet, path: str, n_in: int, n_out: int,
                 rng: np.random.Generator, bias: bool = True):
        self.w = ps.add(f"{path}.w", gaussian_init(rng, (n_in, n_out)))
        self.b = ps.add(f"{path}.b", np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.w
        return y + self.b if self.b is not None else y


class LayerNorm:
    def __init__(self, ps: ParameterSet, path: str, width: int):
        self.g = ps.add(f"{path}.g", np.ones(width))
        self.b = ps.add(f"{path}.b", np.zeros(width))

    def __call__(self, x: Tensor) -> Tensor:
        return nn.layer_norm(x, self.g, self.b)


class Attention:
    """Multi-head self-attention over a (rows, d_model) sequence."""

    def __init__(self, ps: ParameterSet, path: str, d_model: int, n_heads: int,
                 rng: np.random.Generator):
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.d_head = d_model // n_heads
        self.wq = Linear(ps, f"{path}.q", d_model, d_model, rng)
        self.wk = Linear(ps, f"{path}.k", d_model, d_model, rng)
        self.wv = Linear(ps, f"{path}.v", d_model, d_model, rng)
        self.wo = Linear(ps, f"{path}.o", d_model, d_model, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        q = self.wq(x)
        k = self.wk(x)
        v = self.wv(x)
        scale = 1.0 / math.sqrt(self.d_head)
        mask_t = Tensor(mask) if mask is not None else None
        outs = []
        for h in range(self.n_heads):
            lo = h * self.d_head
            qh = q.narrow(1, lo, self.d_head)
            kh = k.narrow(1, lo, self.d_head)
            vh = v.narrow(1, lo, self.d_head)
            scores = (qh @ kh.T) * scale
            if mask_t is not None:
                scores = scores + mask_t
            outs.append(nn.softmax(scores) @ vh)
        return self.wo(nn.concat(outs, axis=1))


class Block:
    def __init__(self, ps: ParameterSet, path: str, d_model: int, n_heads: int,
                 rng: np.random.Generator, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(ps, f"{path}.ln1", d_model)
        self.attn = Attention(ps, f"{path}.attn", d_model, n_heads, rng)
        self.ln2 = LayerNorm(ps, f"{path}.ln2", d_model)
        self.fc1 = Linear(ps, f"{path}.mlp.fc1", d_model, mlp_ratio * d_model, rng)
        self.fc2 = Linear(ps, f"{path}.mlp.fc2", mlp_ratio * d_model, d_model, rng)

    def __call__(self, x: Tensor, mask: np.ndarray | None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask)
        return x + self.fc2(nn.gelu(self.fc1(self.ln2(x))))


class TransformerStack:
    """N pre-norm blocks, optionally followed by a final layer norm.

    Stacks feeding a logit head keep the final norm; the sentence encoder
    drops it so the residual stream's lexical content survives mean pooling.
    """

    def __init__(self, ps: ParameterSet, path: str, d_model: int, n_layers: int,
                 n_heads: int, rng: np.random.Generator, final_ln: bool = True):
        self.blocks = [
            Block(ps, f"{path}.block{i}", d_model, n_heads, rng) for i in range(n_layers)
        ]
        self.ln_out = LayerNorm(ps, f"{path}.ln_out", d_model) if final_ln else None

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask)
        return self.ln_out(x) if self.ln_out is not None else x


def prefix_causal_mask(n_prefix: int, n_total: int) -> np.ndarray:
    """Additive mask: prefix rows attend among themselves, later rows attend
    to the prefix and to earlier (and own) positions only."""
    mask = np.full((n_total, n_total), MASK_NEG)
    mask[:n_prefix, :n_prefix] = 0.0
    for i in range(n_prefix, n_total):
        mask[i, :n_prefix] = 0.0
        mask[i, n_prefix:i + 1] = 0.0
    return mask
