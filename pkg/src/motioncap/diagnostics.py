"""Finite-difference verification of the three training losses at toy scale."""

from __future__ import annotations

import numpy as np

from . import nn
from .decoder import MODE_FINAL, MODE_LOW, DecoderConfig, TextDecoder
from .embedder import EmbedderConfig, TextEncoder, contrastive_loss
from .encoder import EncoderConfig, MotionEncoder
from .nn import Tensor, backward, no_grad
from .text import BOS, EOS

LOSS_NAMES = ("l1", "l2", "l3")

TOY_D = 8
TOY_HEADS = 2
TOY_VOCAB = 15
TOY_PATCH = 4


def param_grad_check(compute_loss, tensor: Tensor, eps: float = 1e-5) -> float:
    """Central-difference check of d(loss)/d(tensor) for a model parameter.

    The parameter is perturbed in place and restored; the error formula
    matches nn.grad_check.
    """
    loss = compute_loss()
    backward(loss)
    analytic = tensor.grad.reshape(-1).copy()
    base = tensor.data.copy()
    flat = base.reshape(-1)
    numeric = np.zeros_like(flat)
    try:
        with no_grad():
            for i in range(flat.size):
                flat[i] += eps
                tensor.data = flat.reshape(base.shape)
                hi = compute_loss().item()
                flat[i] -= 2 * eps
                tensor.data = flat.reshape(base.shape)
                lo = compute_loss().item()
                flat[i] += eps
                if not (np.isfinite(hi) and np.isfinite(lo)):
                    raise nn.NonFiniteError(f"non-finite loss at coordinate {i}")
                numeric[i] = (hi - lo) / (2 * eps)
    finally:
        tensor.data = base
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def _toy_models(rng: np.random.Generator, need_encoder: bool = True):
    encoder = MotionEncoder(EncoderConfig(
        patch_t=TOY_PATCH, patch_j=TOY_PATCH, d_model=TOY_D,
        n_layers=1, n_heads=TOY_HEADS, max_patches=16,
    ), rng) if need_encoder else None
    decoder = TextDecoder(DecoderConfig(
        d_model=TOY_D, n_layers=1, n_heads=TOY_HEADS,
        vocab_size=TOY_VOCAB, max_seq_len=48,
    ), rng)
    return encoder, decoder


def _random_target(rng: np.random.Generator, length: int) -> list[int]:
    body = rng.integers(5, TOY_VOCAB, size=length).tolist()
    return [BOS] + [int(t) for t in body] + [EOS]


def check_l1(trials: int, seed: int = 0, eps: float = 1e-5) -> list[float]:
    """Teacher-forced low-level NLL through the encoder and decoder."""
    errors = []
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        encoder, decoder = _toy_models(rng)
        motion = rng.normal(size=(8, 4))
        target = _random_target(rng, int(rng.integers(3, 6)))

        def loss():
            return decoder.nll_loss(encoder.encode(motion), target, MODE_LOW)

        tensors = encoder.params.tensors() + decoder.params.tensors()
        tensor = tensors[trial % len(tensors)]
        errors.append(param_grad_check(loss, tensor, eps))
    return errors


def check_l2(trials: int, seed: int = 0, eps: float = 1e-5,
             form: str = "paper") -> list[float]:
    """Contrastive loss over its three input vectors, resampled away from
    the hinge kink, plus the path through the text encoder's parameters."""
    errors = []
    dim = TOY_D
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        c = float(rng.uniform(0.2, 0.9))
        while True:
            u_hat = rng.normal(size=dim)
            u = rng.normal(size=dim)
            u_bar = rng.normal(size=dim)
            cos_neg = float(u_hat @ u_bar / (np.linalg.norm(u_hat) * np.linalg.norm(u_bar)))
            if abs(cos_neg - c) > 1e-3:
                break
        point = np.concatenate([u_hat, u, u_bar])

        def loss_of(x: Tensor) -> Tensor:
            return contrastive_loss(
                x.narrow(0, 0, dim), x.narrow(0, dim, dim), x.narrow(0, 2 * dim, dim),
                c, form,
            )

        errors.append(nn.grad_check(loss_of, point, eps))

        embedder = TextEncoder(EmbedderConfig(
            d_embed=dim, n_layers=1, n_heads=TOY_HEADS,
            vocab_size=TOY_VOCAB, max_seq_len=16,
        ), rng)
        ids = _random_target(rng, 3)

        def loss():
            return contrastive_loss(embedder.embed_ids(ids), Tensor(u), Tensor(u_bar),
                                    c, form)

        with no_grad():
            emb = embedder.embed_ids(ids).data
        cos_val = float(emb @ u_bar / (np.linalg.norm(emb) * np.linalg.norm(u_bar)))
        if abs(cos_val - c) > 1e-3:  # skip the parameter check at the kink
            tensors = embedder.params.tensors()
            tensor = tensors[trial % len(tensors)]
            errors.append(param_grad_check(loss, tensor, eps))
    return errors


def check_l3(trials: int, seed: int = 0, eps: float = 1e-5) -> list[float]:
    """Final-caption NLL with a retrieval prefix, through both networks."""
    errors = []
    for trial in range(trials):
        rng = np.random.default_rng(seed + trial)
        encoder, decoder = _toy_models(rng)
        motion = rng.normal(size=(8, 4))
        retrieved = [
            rng.integers(5, TOY_VOCAB, size=int(rng.integers(2, 5))).tolist()
            for _ in range(2)
        ]
        retrieved = [[int(t) for t in ids] for ids in retrieved]
        target = _random_target(rng, int(rng.integers(3, 6)))

        def loss():
            prefix = decoder.build_prefix(retrieved, encoder.encode(motion))
            return decoder.nll_loss(prefix, target, MODE_FINAL)

        tensors = encoder.params.tensors() + decoder.params.tensors()
        tensor = tensors[trial % len(tensors)]
        errors.append(param_grad_check(loss, tensor, eps))
    return errors


def loss_grad_check(loss_name: str, trials: int, seed: int = 0,
                    eps: float = 1e-5, l2_form: str = "paper") -> dict:
    """Dispatch for the CLI and the acceptance suite."""
    if loss_name == "l1":
        errors = check_l1(trials, seed, eps)
    elif loss_name == "l2":
        errors = check_l2(trials, seed, eps, l2_form)
    elif loss_name == "l3":
        errors = check_l3(trials, seed, eps)
    else:
        raise ValueError(f"unknown loss {loss_name!r}; one of {LOSS_NAMES}")
    return {
        "loss": loss_name,
        "trials": trials,
        "max_rel_error": max(errors),
        "errors": errors,
    }
