"""ViT-style motion encoder: rectangular patches over time x joint states."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Linear, TransformerStack, gaussian_init
from .nn import ParameterSet, Tensor


class MotionError(ValueError):
    pass


@dataclass
class EncoderConfig:
    patch_t: int = 16
    patch_j: int = 32
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_patches: int = 256

    def validate(self) -> None:
        if self.patch_t < 1 or self.patch_j < 1:
            raise MotionError("patch dimensions must be >= 1")
        if self.d_model % self.n_heads:
            raise MotionError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )


def patchify(motion: np.ndarray, cfg: EncoderConfig) -> np.ndarray:
    """Flattened rectangular patches in row-major (time-major) patch order.

    The motion is zero-padded on the bottom/right to multiples of the patch
    dimensions, so every input length yields whole patches.
    """
    cfg.validate()
    motion = np.asarray(motion, dtype=np.float64)
    if motion.ndim != 2 or motion.shape[0] < 1 or motion.shape[1] < 1:
        raise MotionError(f"motion must be a non-empty 2-d array, got shape {motion.shape}")
    frames, joints = motion.shape
    pt, pj = cfg.patch_t, cfg.patch_j
    rows = -(-frames // pt)
    cols = -(-joints // pj)
    padded = np.zeros((rows * pt, cols * pj))
    padded[:frames, :joints] = motion
    patches = (
        padded.reshape(rows, pt, cols, pj)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, pt * pj)
    )
    return np.ascontiguousarray(patches)


class MotionEncoder:
    """Maps a motion tensor to a feature sequence of shape (patches, d_model)."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.params = ParameterSet()
        self.patch_proj = Linear(
            self.params, "patch_proj", cfg.patch_t * cfg.patch_j, cfg.d_model, rng
        )
        self.pos = self.params.add(
            "pos", gaussian_init(rng, (cfg.max_patches, cfg.d_model))
        )
        self.stack = TransformerStack(
            self.params, "stack", cfg.d_model, cfg.n_layers, cfg.n_heads, rng
        )

    def encode(self, motion: np.ndarray) -> Tensor:
        patches = patchify(motion, self.cfg)
        n = patches.shape[0]
        if n > self.cfg.max_patches:
            raise MotionError(
                f"{n} patches exceed positional capacity {self.cfg.max_patches}"
            )
        x = self.patch_proj(Tensor(patches)) + self.pos.narrow(0, 0, n)
        return self.stack(x, mask=None)
