"""Sentence encoder for retrieval embeddings, plus the margin contrastive loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .layers import TransformerStack, gaussian_init
from .nn import ParameterSet, Tensor
from .text import Vocabulary

FORM_PAPER = "paper"
FORM_HINGE = "hinge"


@dataclass
class EmbedderConfig:
    d_embed: int = 64
    n_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 0
    max_seq_len: int = 64


class TextEncoder:
    """Small bidirectional transformer; sentence embedding is the mean of the
    final-layer token states."""

    def __init__(self, cfg: EmbedderConfig, rng: np.random.Generator):
        if cfg.vocab_size < 1:
            raise ValueError("text encoder needs a built vocabulary (vocab_size >= 1)")
        if cfg.d_embed % cfg.n_heads:
            raise ValueError(f"d_embed {cfg.d_embed} not divisible by n_heads {cfg.n_heads}")
        self.cfg = cfg
        self.params = ParameterSet()
        self.tok_emb = self.params.add(
            "tok_emb", gaussian_init(rng, (cfg.vocab_size, cfg.d_embed))
        )
        # zero-init positions and no final norm: the pooled embedding then
        # starts out bag-of-words-like instead of collapsing onto the shared
        # layer-norm direction, which retrieval cosine cannot separate
        self.pos_emb = self.params.add(
            "pos_emb", np.zeros((cfg.max_seq_len, cfg.d_embed))
        )
        self.stack = TransformerStack(
            self.params, "stack", cfg.d_embed, cfg.n_layers, cfg.n_heads, rng,
            final_ln=False,
        )

    def embed_ids(self, token_ids: list[int]) -> Tensor:
        """Embedding of a BOS...EOS framed id sequence, differentiable."""
        ids = list(token_ids)[: self.cfg.max_seq_len]
        x = nn.embedding(self.tok_emb, ids) + self.pos_emb.narrow(0, 0, len(ids))
        states = self.stack(x, mask=None)
        return states.mean(axis=0)

    def embed_text(self, text: str, vocab: Vocabulary) -> np.ndarray:
        """Inference-only embedding of a string."""
        with nn.no_grad():
            return self.embed_ids(vocab.encode(text)).data.copy()


def contrastive_loss(u_hat: Tensor, u: Tensor, u_bar: Tensor, c: float,
                     form: str = FORM_PAPER) -> Tensor:
    """Margin contrastive loss over cosine similarities.

    The default form is ``1 - cos(u_hat, u) + max(0, c - cos(u_hat, u_bar))``
    exactly as published; ``hinge`` swaps the negative term for
    ``max(0, cos(u_hat, u_bar) - c)``, which actually pushes similar
    negatives apart and is available as an opt-in correction.
    """
    if not 0.0 <= c <= 1.0:
        raise ValueError(f"margin constant must lie in [0, 1], got {c}")
    pos = nn.cosine(u_hat, u)
    neg = nn.cosine(u_hat, u_bar)
    if form == FORM_PAPER:
        return (1.0 - pos) + nn.relu(c - neg)
    if form == FORM_HINGE:
        return (1.0 - pos) + nn.relu(neg - c)
    raise ValueError(f"unknown contrastive form: {form!r}")
