"""Autoregressive text decoder over a mixed prefix of captions and features.

The same decoder produces low-level movement descriptions from motion
features alone and the final caption from retrieved captions plus features;
the two roles are told apart by a learned mode row prepended to the prefix.
Prefix rows attend among themselves, generated tokens attend causally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .layers import TransformerStack, gaussian_init, prefix_causal_mask
from .nn import ParameterSet, Tensor
from .text import BOS, EOS, SEP

MODE_LOW = "low"
MODE_FINAL = "final"


class SequenceOverflowError(ValueError):
    pass


@dataclass
class DecoderConfig:
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    vocab_size: int = 0
    max_seq_len: int = 128


@dataclass
class GenerationResult:
    token_ids: list[int]
    truncated: bool


class TextDecoder:
    def __init__(self, cfg: DecoderConfig, rng: np.random.Generator):
        if cfg.vocab_size < 1:
            raise ValueError("decoder needs a built vocabulary (vocab_size >= 1)")
        if cfg.d_model % cfg.n_heads:
            raise ValueError(f"d_model {cfg.d_model} not divisible by n_heads {cfg.n_heads}")
        self.cfg = cfg
        self.params = ParameterSet()
        self.tok_emb = self.params.add(
            "tok_emb", gaussian_init(rng, (cfg.vocab_size, cfg.d_model))
        )
        self.pos_emb = self.params.add(
            "pos_emb", gaussian_init(rng, (cfg.max_seq_len, cfg.d_model))
        )
        self.mode_emb = self.params.add("mode_emb", gaussian_init(rng, (2, cfg.d_model)))
        self.stack = TransformerStack(
            self.params, "stack", cfg.d_model, cfg.n_layers, cfg.n_heads, rng
        )
        # output head is tied to the token embedding, GPT-2 style
        self.out_bias = self.params.add("out_bias", np.zeros(cfg.vocab_size))

    # -- prefix assembly -------------------------------------------------

    def build_prefix(self, retrieved: list[list[int]], features: Tensor) -> Tensor:
        """Retrieved captions in rank order, a SEP row after each, then the
        feature rows. With no retrievals the prefix is the features alone."""
        if features.ndim != 2 or features.shape[1] != self.cfg.d_model:
            raise nn.ShapeError(
                f"build_prefix: features {features.shape} vs d_model {self.cfg.d_model}"
            )
        if not retrieved:
            return features
        sep_row = nn.embedding(self.tok_emb, [SEP])
        parts = []
        for ids in retrieved:
            if ids:
                parts.append(nn.embedding(self.tok_emb, ids))
            parts.append(sep_row)
        parts.append(features)
        prefix = nn.concat(parts, axis=0)
        if prefix.shape[0] >= self.cfg.max_seq_len:
            raise SequenceOverflowError(
                f"prefix of {prefix.shape[0]} rows exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        return prefix

    def _mode_row(self, mode: str) -> Tensor:
        if mode == MODE_LOW:
            return self.mode_emb.narrow(0, 0, 1)
        if mode == MODE_FINAL:
            return self.mode_emb.narrow(0, 1, 1)
        raise ValueError(f"unknown decoder mode: {mode!r}")

    def _forward(self, rows: Tensor, n_prefix: int) -> Tensor:
        n = rows.shape[0]
        if n > self.cfg.max_seq_len:
            raise SequenceOverflowError(
                f"sequence of {n} rows exceeds max_seq_len {self.cfg.max_seq_len}"
            )
        x = rows + self.pos_emb.narrow(0, 0, n)
        h = self.stack(x, prefix_causal_mask(n_prefix, n))
        return (h @ self.tok_emb.T) + self.out_bias

    # -- losses and decoding ----------------------------------------------

    def _target_log_probs(self, prefix: Tensor, target_ids: list[int], mode: str):
        if len(target_ids) < 2 or target_ids[0] != BOS or target_ids[-1] != EOS:
            raise ValueError("target must be framed as [BOS, ..., EOS]")
        inputs = list(target_ids[:-1])
        labels = np.asarray(target_ids[1:], dtype=np.intp)
        rows = nn.concat(
            [self._mode_row(mode), prefix, nn.embedding(self.tok_emb, inputs)], axis=0
        )
        n_prefix = 1 + prefix.shape[0]
        logits = self._forward(rows, n_prefix)
        log_probs = nn.log_softmax(logits.narrow(0, n_prefix, len(inputs)))
        return log_probs, labels

    def nll_loss(self, prefix: Tensor, target_ids: list[int], mode: str) -> Tensor:
        """Teacher-forced negative log-likelihood of a BOS...EOS framed target."""
        log_probs, labels = self._target_log_probs(prefix, target_ids, mode)
        return nn.nll(log_probs, labels)

    def per_token_nll(self, prefix: Tensor, target_ids: list[int], mode: str) -> Tensor:
        """Per-position loss terms; sums to nll_loss."""
        log_probs, labels = self._target_log_probs(prefix, target_ids, mode)
        one_hot = Tensor(_one_hot(labels, self.cfg.vocab_size))
        return nn.neg(nn.mul(log_probs, one_hot).sum(axis=1))

    def generate(self, prefix: Tensor, max_len: int, mode: str) -> GenerationResult:
        """Greedy decoding from BOS until EOS or ``max_len`` emitted tokens."""
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        out: list[int] = []
        with nn.no_grad():
            mode_row = self._mode_row(mode)
            base = nn.concat([mode_row, prefix], axis=0)
            n_prefix = base.shape[0]
            while len(out) < max_len:
                ids = [BOS] + out
                if n_prefix + len(ids) > self.cfg.max_seq_len:
                    return GenerationResult(out, True)
                rows = nn.concat([base, nn.embedding(self.tok_emb, ids)], axis=0)
                logits = self._forward(rows, n_prefix)
                next_id = int(np.argmax(logits.data[-1]))  # ties -> lowest id
                if next_id == EOS:
                    return GenerationResult(out, False)
                out.append(next_id)
        return GenerationResult(out, True)


def _one_hot(ids: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros((ids.shape[0], width))
    out[np.arange(ids.shape[0]), ids] = 1.0
    return out
