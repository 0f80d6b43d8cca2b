import numpy as np
import pytest

from motioncap import nn
from motioncap.nn import ShapeError, Tensor, backward, grad_check


def test_softmax_symmetry():
    out = nn.softmax(Tensor([0.0, 0.0, 0.0]))
    assert np.allclose(out.data, [1 / 3, 1 / 3, 1 / 3])


def test_cosine_identical_vectors():
    v = Tensor([0.3, -1.2, 4.0])
    assert nn.cosine(v, v).item() == pytest.approx(1.0)


def test_cosine_zero_norm_rejected():
    with pytest.raises(nn.AutogradError, match="zero-norm"):
        nn.cosine(Tensor([0.0, 0.0]), Tensor([1.0, 0.0]))


def test_matmul_identity():
    a = np.random.default_rng(0).normal(size=(3, 5))
    out = Tensor(np.eye(3)) @ Tensor(a)
    assert np.array_equal(out.data, a)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"matmul.*\(2, 3\).*\(2, 3\)"):
        Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))


def test_backward_square():
    x = Tensor(3.0, requires_grad=True)
    backward(x * x)
    assert x.grad == pytest.approx(6.0)


def test_backward_rejects_non_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError, match="scalar"):
        backward(x + x)


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(1)
    logits = Tensor(rng.normal(size=(4, 6)), requires_grad=True)
    targets = [2, 0, 5, 1]
    backward(nn.nll(nn.log_softmax(logits), targets))
    shifted = np.exp(logits.data - logits.data.max(axis=-1, keepdims=True))
    softmax = shifted / shifted.sum(axis=-1, keepdims=True)
    onehot = np.zeros((4, 6))
    onehot[np.arange(4), targets] = 1.0
    assert np.allclose(logits.grad, softmax - onehot, atol=1e-12)


def test_zero_scaled_loss_gives_zero_grads():
    x = Tensor([1.0, -2.0], requires_grad=True)
    backward(0.0 * (x * x).sum() + Tensor(0.0, requires_grad=True))
    assert np.array_equal(x.grad, np.zeros(2))


def test_two_backward_passes_identical():
    rng = np.random.default_rng(2)
    x = Tensor(rng.normal(size=(3, 3)), requires_grad=True)
    loss = nn.gelu(x @ Tensor(rng.normal(size=(3, 2)))).sum()
    backward(loss)
    first = x.grad.copy()
    backward(loss)
    assert np.array_equal(first, x.grad)


def test_unreachable_params_get_zero_grad():
    used = Tensor([1.0], requires_grad=True)
    unused = Tensor([5.0], requires_grad=True)
    backward((used * used).sum(), params=[used, unused])
    assert np.array_equal(unused.grad, np.zeros(1))
    assert used.grad is not None


def test_no_grad_records_nothing():
    x = Tensor([2.0], requires_grad=True)
    with nn.no_grad():
        out = x * x
    assert not out.requires_grad
    assert out._parents == ()


def test_broadcast_add_unbroadcasts_gradient():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.ones(4), requires_grad=True)
    backward((a + b).sum())
    assert a.grad.shape == (3, 4)
    assert np.array_equal(b.grad, np.full(4, 3.0))


def test_concat_narrow_roundtrip_gradient():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    b = Tensor(np.arange(4.0).reshape(2, 2), requires_grad=True)
    cat = nn.concat([a, b], axis=1)
    backward(cat.narrow(1, 3, 2).sum())
    assert np.array_equal(a.grad, np.zeros((2, 3)))
    assert np.array_equal(b.grad, np.ones((2, 2)))


def test_embedding_gradient_accumulates_repeated_ids():
    table = Tensor(np.zeros((4, 2)), requires_grad=True)
    backward(nn.embedding(table, [1, 1, 3]).sum())
    assert np.array_equal(table.grad, [[0, 0], [2, 2], [0, 0], [1, 1]])


def test_grad_check_quadratic():
    point = np.random.default_rng(3).normal(size=8)
    assert grad_check(lambda t: (t * t).sum(), point, eps=1e-5) < 1e-6


def test_grad_check_transformer_primitives():
    rng = np.random.default_rng(4)
    w = Tensor(rng.normal(size=(4, 4)))
    gain = Tensor(np.ones(4))
    bias = Tensor(np.zeros(4))

    def f(t):
        h = nn.layer_norm(t.reshape(3, 4), gain, bias)
        att = nn.softmax((h @ w) * 0.5)
        return nn.gelu(att @ h.T).mean() + nn.tanh(h).sum()

    assert grad_check(f, rng.normal(size=12), eps=1e-5) < 1e-6


def test_forward_values_stay_finite():
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(6, 8)), requires_grad=True)
    out = nn.log_softmax(nn.layer_norm(x, Tensor(np.ones(8)), Tensor(np.zeros(8))))
    backward(out.sum())
    nn.assert_finite(out)
    assert np.isfinite(x.grad).all()
