import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from helpers import check_grads, primitive_cases
from pgen import tensor as T
from pgen.errors import NotScalar, ShapeMismatch, TargetOutOfRange


@pytest.mark.parametrize("name,leaves,loss_fn", primitive_cases(), ids=lambda x: x if isinstance(x, str) else "")
def test_primitive_gradients(name, leaves, loss_fn):
    assert check_grads(loss_fn, leaves) <= 1e-3


def test_matmul_values_and_shapes():
    y = T.matmul(T.Tensor([[1, 2], [3, 4]]), T.Tensor([[1], [1]]))
    assert y.data.tolist() == [[3], [7]]
    with pytest.raises(ShapeMismatch):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_rank_limit():
    with pytest.raises(ShapeMismatch):
        T.Tensor(np.zeros((1, 1, 1, 1)))


def test_softmax_examples():
    assert np.allclose(T.softmax(T.Tensor(np.zeros((1, 4)))).data, 0.25)
    out = T.softmax(T.Tensor([[1000.0, 0.0]])).data
    assert np.isfinite(out).all() and np.allclose(out, [[1, 0]])
    x = T.Tensor(np.random.default_rng(0).normal(size=(3, 4)), requires_grad=True)
    T.backward(T.sum(T.softmax(x)))
    assert np.allclose(x.grad, 0, atol=1e-12)


def test_layer_norm_examples():
    one, zero = T.Tensor(np.ones(4)), T.Tensor(np.zeros(4))
    assert np.allclose(T.layer_norm(T.Tensor(np.full((1, 4), 3.0)), one, zero).data, 0)
    two1, two0 = T.Tensor(np.ones(2)), T.Tensor(np.zeros(2))
    assert np.allclose(T.layer_norm(T.Tensor([[1.0, -1.0]]), two1, two0, eps=1e-12).data, [[1, -1]])
    b = T.Tensor([0.5, -2.0, 3.0])
    out = T.layer_norm(T.Tensor([[1.0, 5.0, 2.0]]), T.Tensor(np.zeros(3)), b)
    assert np.allclose(out.data, [b.data])


def test_cross_entropy_examples():
    logits = T.Tensor(np.zeros((3, 4)), requires_grad=True)
    for eps in (0.0, 0.1, 0.5):
        loss = T.cross_entropy_smoothed(logits, np.array([1, 2, 3]), eps, ignore_id=None)
        assert loss.item() == pytest.approx(math.log(4), abs=1e-12)
    loss = T.cross_entropy_smoothed(logits, np.array([0, 0, 0]), 0.1, ignore_id=0)
    T.backward(loss)
    assert loss.item() == 0.0 and not logits.grad.any()
    with pytest.raises(TargetOutOfRange):
        T.cross_entropy_smoothed(logits, np.array([1, 9, 1]))


def test_smoothing_mass_excludes_target():
    # V=3, eps=0.3: q = [0.7, 0.15, 0.15]
    x = np.array([[2.0, 0.5, -1.0]])
    logp = x - np.log(np.exp(x).sum())
    expect = -(0.7 * logp[0, 0] + 0.15 * logp[0, 1] + 0.15 * logp[0, 2])
    got = T.cross_entropy_smoothed(T.Tensor(x), np.array([0]), 0.3, ignore_id=None).item()
    assert got == pytest.approx(expect, abs=1e-12)


def test_backward_examples():
    x = T.Tensor(np.ones((2, 3)), requires_grad=True)
    T.backward(T.sum(x))
    assert (x.grad == 1).all()
    v = T.Tensor([1.0, 2.0], requires_grad=True)
    T.backward(T.sum(T.mul(v, v)))
    assert v.grad.tolist() == [2.0, 4.0]
    u = T.Tensor([1.0, 2.0], requires_grad=True)
    T.backward(T.sum(T.add(u, u)))  # fan-out accumulates
    assert u.grad.tolist() == [2.0, 2.0]
    with pytest.raises(NotScalar):
        T.backward(T.add(u, u))


def test_no_grad_records_nothing():
    x = T.Tensor([1.0], requires_grad=True)
    before = len(T.get_tape())
    with T.no_grad():
        T.sum(T.mul(x, x))
    assert len(T.get_tape()) == before


def test_embedding_range():
    with pytest.raises(TargetOutOfRange):
        T.embedding(T.Tensor(np.zeros((3, 2))), np.array([[3]]))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 6)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_softmax_is_a_distribution(x):
    y = T.softmax(T.Tensor(x)).data
    assert ((y >= 0) & (y <= 1)).all()
    assert np.allclose(y.sum(axis=-1), 1, atol=1e-6)
