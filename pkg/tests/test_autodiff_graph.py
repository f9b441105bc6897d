"""Backward mechanics: seeding, accumulation, pruning, gradient_check."""

import numpy as np
import pytest

from voxseg import autodiff as ad
from voxseg.autodiff import ParameterStore


@pytest.fixture(autouse=True)
def _f64():
    with ad.precision("f64"):
        yield


def test_backward_sum_gives_ones():
    x = ad.tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    ad.backward(ad.reduce_sum(x))
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_backward_dead_relu_region():
    x = ad.tensor([-1.0, -2.0, -0.5], requires_grad=True)
    ad.backward(ad.reduce_sum(ad.relu(x)))
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_backward_requires_scalar():
    x = ad.tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.GraphError):
        ad.backward(ad.relu(x))


def test_backward_accumulates_on_leaves():
    x = ad.tensor([3.0], requires_grad=True)
    loss = ad.reduce_sum(ad.mul(x, x))
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [6.0])
    ad.backward(loss)
    np.testing.assert_allclose(x.grad, [12.0])


def test_shared_subgraph_visited_once():
    # z = (x + x) * x => dz/dx = 4x; a double visit would inflate this
    x = ad.tensor([2.0, -3.0], requires_grad=True)
    z = ad.reduce_sum(ad.mul(ad.add(x, x), x))
    ad.backward(z)
    np.testing.assert_allclose(x.grad, 4 * x.numpy())


def test_random_composite_graph_matches_fd(rng):
    w1 = ad.tensor(rng.standard_normal((6, 4)))
    w2 = ad.tensor(rng.standard_normal((4, 3)))

    def f(x):
        h = ad.gelu(ad.matmul(x, w1))
        h = ad.layer_norm(h, axis=-1)
        return ad.softmax(ad.matmul(h, w2), axis=1)

    rep = ad.gradient_check(f, rng.standard_normal((5, 6)), tol=1e-4, step=1e-5)
    assert rep.passed, rep
    assert rep.max_rel_error < 1e-4


def test_gradient_check_identity_error_zero(rng):
    rep = ad.gradient_check(lambda t: t, rng.standard_normal((8,)))
    assert rep.passed
    assert rep.max_rel_error < 1e-9


def test_gradient_check_flags_relu_subgradient():
    x = np.array([1.0, 0.0, -1.0, 0.0])
    rep = ad.gradient_check(ad.relu, x)
    assert rep.passed
    assert set(rep.flagged) == {1, 3}


def test_gradient_check_rejects_nondeterministic():
    state = {"n": 0}

    def f(t):
        state["n"] += 1
        return ad.scale(t, float(state["n"]))

    with pytest.raises(ad.GraphError):
        ad.gradient_check(f, np.ones(3))


def test_no_grad_builds_no_graph():
    x = ad.tensor([1.0], requires_grad=True)
    with ad.no_grad():
        y = ad.relu(x)
    assert not y.requires_grad
    assert y._backward is None


def test_frozen_leaf_receives_no_gradient():
    w = ad.tensor(np.ones((2, 2)), requires_grad=False)
    x = ad.tensor(np.ones((2, 2)), requires_grad=True)
    ad.backward(ad.reduce_sum(ad.matmul(x, w)))
    assert w.grad is None
    assert x.grad is not None


def test_parameter_store_basics():
    store = ParameterStore()
    t = store.add("a.w", ad.tensor(np.ones((2, 2))), frozen=False)
    store.add("a.frozen", ad.tensor(np.ones(3)), frozen=True)
    with pytest.raises(ad.GraphError):
        store.add("a.w", ad.tensor(np.zeros(1)))
    assert store.total_params() == 7
    assert store.trainable_params() == 4
    assert store.is_frozen("a.frozen")
    assert not store["a.frozen"].requires_grad
    assert t.requires_grad
    store.set_frozen("a.w", True)
    assert not store["a.w"].requires_grad
    with pytest.raises(ad.GraphError):
        store["missing"]
