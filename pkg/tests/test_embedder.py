import numpy as np
import pytest

from motioncap.embedder import (
    FORM_HINGE,
    FORM_PAPER,
    EmbedderConfig,
    TextEncoder,
    contrastive_loss,
)
from motioncap.nn import AutogradError, Tensor, backward, grad_check
from motioncap.text import Vocabulary


def make_embedder(seed=0, d=16):
    cfg = EmbedderConfig(d_embed=d, n_layers=1, n_heads=2, vocab_size=20,
                         max_seq_len=24)
    return TextEncoder(cfg, np.random.default_rng(seed))


def test_embedding_deterministic():
    te = make_embedder()
    vocab = Vocabulary.build(["the person walks forward"])
    a = te.embed_text("the person walks", vocab)
    b = te.embed_text("the person walks", vocab)
    assert np.array_equal(a, b)


def test_embedding_width_fixed():
    te = make_embedder(d=16)
    vocab = Vocabulary.build(["one two three four five six seven"])
    for text in ("one", "one two three", "one two three four five six seven"):
        assert te.embed_text(text, vocab).shape == (16,)


def test_empty_text_embeds_frame_only():
    te = make_embedder()
    vocab = Vocabulary.build(["word"])
    emb = te.embed_text("", vocab)
    assert emb.shape == (16,)
    assert np.isfinite(emb).all()


def test_gradient_flows_to_embedder_params():
    te = make_embedder(seed=2)
    out = te.embed_ids([0, 7, 3, 1])
    backward((out * out).sum(), params=te.params)
    assert any(np.abs(t.grad).sum() > 0 for _, t in te.params.items())


# -- contrastive loss ------------------------------------------------------------


def vec(*values):
    return Tensor(np.asarray(values, dtype=np.float64))


def test_paper_form_direct_substitution():
    # u_hat == u, cos(u_hat, u_bar) == 0, c = 0.7 -> 0 + max(0, 0.7) = 0.7
    u_hat = vec(1.0, 0.0)
    u = vec(1.0, 0.0)
    u_bar = vec(0.0, 1.0)
    loss = contrastive_loss(u_hat, u, u_bar, c=0.7, form=FORM_PAPER)
    assert loss.item() == pytest.approx(0.7)


def test_paper_form_identical_triple_is_zero():
    v = vec(0.5, -0.25, 2.0)
    for c in (0.0, 0.5, 1.0):
        assert contrastive_loss(v, v, v, c=c).item() == pytest.approx(0.0)


def test_hinge_form_direct_substitution():
    u_hat = vec(1.0, 0.0)
    u = vec(1.0, 0.0)
    u_bar = vec(0.0, 1.0)
    loss = contrastive_loss(u_hat, u, u_bar, c=0.7, form=FORM_HINGE)
    assert loss.item() == pytest.approx(0.0)


def test_hinge_form_penalizes_similar_negative():
    u_hat = vec(1.0, 0.0)
    loss = contrastive_loss(u_hat, u_hat, vec(1.0, 0.01), c=0.5, form=FORM_HINGE)
    assert loss.item() > 0.4


def test_zero_norm_vector_rejected():
    with pytest.raises(AutogradError):
        contrastive_loss(vec(0.0, 0.0), vec(1.0, 0.0), vec(0.0, 1.0), c=0.5)


def test_invalid_margin_rejected():
    with pytest.raises(ValueError):
        contrastive_loss(vec(1.0, 0.0), vec(1.0, 0.0), vec(0.0, 1.0), c=1.5)


def test_bounds_over_random_unit_vectors():
    rng = np.random.default_rng(3)
    for _ in range(200):
        raw = rng.normal(size=(3, 8))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        c = float(rng.uniform(0, 1))
        paper = contrastive_loss(Tensor(raw[0]), Tensor(raw[1]), Tensor(raw[2]),
                                 c=c, form=FORM_PAPER).item()
        hinge = contrastive_loss(Tensor(raw[0]), Tensor(raw[1]), Tensor(raw[2]),
                                 c=c, form=FORM_HINGE).item()
        assert 0.0 <= paper <= 3.0
        assert 0.0 <= hinge <= 3.0


def test_scale_invariance():
    rng = np.random.default_rng(4)
    a, b, c_vec = rng.normal(size=(3, 6))
    base = contrastive_loss(Tensor(a), Tensor(b), Tensor(c_vec), c=0.6).item()
    scaled = contrastive_loss(Tensor(3.7 * a), Tensor(0.2 * b), Tensor(11.0 * c_vec),
                              c=0.6).item()
    assert scaled == pytest.approx(base, abs=1e-12)


@pytest.mark.parametrize("form", [FORM_PAPER, FORM_HINGE])
def test_gradient_away_from_hinge_kink(form):
    rng = np.random.default_rng(5)
    dim = 6
    c = 0.55
    checked = 0
    while checked < 5:
        point = rng.normal(size=3 * dim)
        u_hat, u_bar = point[:dim], point[2 * dim:]
        cos = u_hat @ u_bar / (np.linalg.norm(u_hat) * np.linalg.norm(u_bar))
        if abs(cos - c) <= 1e-3:
            continue

        def f(t):
            return contrastive_loss(
                t.narrow(0, 0, dim), t.narrow(0, dim, dim), t.narrow(0, 2 * dim, dim),
                c=c, form=form,
            )

        assert grad_check(f, point, eps=1e-5) < 1e-4
        checked += 1
