import numpy as np
import pytest

from msaan import autograd as ag
from msaan import gradcheck as gc
from msaan.autograd import Var
from msaan.errors import DivergenceError


def test_sum_gives_ones():
    x = Var(np.random.default_rng(0).standard_normal((2, 3, 4, 4)), requires_grad=True)
    ag.backward(ag.total(x))
    np.testing.assert_array_equal(x.grad, 1.0)


def test_conv_kernel_grad_counts_receptive_field_coverage():
    # constant input 1 on a 4x5 map, pad 1: tap (ky, kx) sees (rows covered) * (cols covered)
    x = Var(np.ones((1, 1, 4, 5)))
    w = Var(np.zeros((1, 1, 3, 3)), requires_grad=True)
    ag.backward(ag.total(ag.conv2d(x, w, pad=1)))
    rows = np.array([3, 4, 3])
    cols = np.array([4, 5, 4])
    np.testing.assert_array_equal(w.grad[0, 0], np.outer(rows, cols))


def test_non_finite_loss_raises():
    x = Var(np.array([np.inf]), requires_grad=True)
    with pytest.raises(DivergenceError):
        ag.backward(ag.total(x))


def test_grad_check_quadratic():
    x = np.random.default_rng(1).standard_normal((1, 2, 3, 3))
    rep = gc.grad_check(lambda v: ag.mul(0.5, ag.total(ag.mul(v, v))), [x], tol=1e-6)
    assert rep.passed
    assert rep.max_rel_err <= 1e-6


def test_grad_check_through_gelu():
    x = np.random.default_rng(2).standard_normal((1, 3, 4, 4)) * 2
    assert gc.grad_check(lambda v: ag.total(ag.gelu(v)), [x], tol=1e-3).passed


def test_grad_check_max_pool_unique():
    rng = np.random.default_rng(3)
    x = gc._distinct(rng, (1, 2, 6, 6))
    rep = gc.grad_check(lambda v: ag.total(ag.adaptive_max_pool(v, 3, 3)), [x], tol=1e-3)
    assert rep.passed and rep.tensors[0].skipped == 0


def test_max_pool_ties_route_to_lowest_index():
    x = ag.Var(np.zeros((1, 1, 4, 4)), requires_grad=True)
    ag.backward(ag.total(ag.adaptive_max_pool(x, 2, 2)))
    expect = np.zeros((4, 4))
    expect[::2, ::2] = 1
    np.testing.assert_array_equal(x.grad[0, 0], expect)


def test_backward_is_linear_in_the_loss():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((1, 4, 6, 6))
    w0 = rng.standard_normal((4, 4, 3, 3))

    def grads(which):
        x, w = Var(x0, requires_grad=True), Var(w0, requires_grad=True)
        y = ag.conv2d(ag.gelu(x), w, pad=1)
        l1 = ag.total(ag.mul(y, y))
        l2 = ag.total(ag.layer_norm(y, np.ones(4), np.zeros(4)) * y)
        loss = {"a": l1, "b": l2, "ab": ag.add(l1, l2)}[which]
        ag.backward(loss)
        return x.grad, w.grad

    (xa, wa), (xb, wb), (xab, wab) = grads("a"), grads("b"), grads("ab")
    np.testing.assert_allclose(xab, xa + xb, atol=1e-5)
    np.testing.assert_allclose(wab, wa + wb, atol=1e-5)


def test_shared_subexpression_accumulates():
    x = Var(np.array([[[[3.0]]]]), requires_grad=True)
    y = ag.mul(x, x)
    ag.backward(ag.total(ag.add(y, y)))
    assert x.grad[0, 0, 0, 0] == pytest.approx(12.0)


def test_no_grad_records_nothing():
    x = Var(np.ones((1, 1, 2, 2)), requires_grad=True)
    with ag.no_grad():
        y = ag.gelu(x)
    assert not y.requires_grad and y.parents == ()


@pytest.mark.parametrize("seed", range(3))
def test_every_kernel_passes_fd(seed):
    for name, rep in gc.check_kernels(seed).items():
        assert rep.passed, (name, rep)


def test_corrupted_adjoint_is_caught():
    worst = gc.run_suite([0], model_seeds=[], corrupt="depthwise_conv2d")
    assert worst["depthwise_conv2d"] > 1e-2
    assert worst["conv2d"] < 1e-3
