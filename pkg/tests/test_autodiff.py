"""The reverse-mode engine: values against closed forms and nested-loop
oracles, gradients against central finite differences."""

import numpy as np
import pytest

from toposnn import autodiff as ad
from toposnn.autodiff import Tensor

from conftest import check_op_grad, conv2d_oracle, fd_grad


# ---------------------------------------------------------------------------
# Pinned values
# ---------------------------------------------------------------------------

def test_cross_entropy_uniform_logits():
    logits = Tensor(np.zeros((4, 10)))
    for label in (0, 3, 9):
        loss = ad.softmax_cross_entropy(logits, np.full(4, label))
        assert abs(loss.item() - np.log(10.0)) < 1e-12


def test_matmul_identity():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 3))
    out = Tensor(np.eye(3)) @ Tensor(a)
    np.testing.assert_array_equal(out.data, a)


def test_conv2d_ramp_against_nested_loop():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    w = np.full((1, 1, 2, 2), 0.25)
    out = ad.conv2d(Tensor(x), Tensor(w)).data
    assert out.shape == (1, 1, 3, 3)
    np.testing.assert_allclose(out, conv2d_oracle(x, w), rtol=0, atol=1e-14)


def test_conv2d_random_against_nested_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 3, 6, 5))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    for stride, padding in [(1, 0), (1, 1), (2, 1)]:
        ours = ad.conv2d(Tensor(x), Tensor(w), Tensor(b),
                         stride=stride, padding=padding).data
        ref = conv2d_oracle(x, w, b, stride=stride, padding=padding)
        np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-12)


def test_quadratic_gradient():
    w = Tensor([1.0, -2.0], requires_grad=True)
    loss = (w * w).sum()
    loss.backward()
    np.testing.assert_array_equal(w.grad, [2.0, -4.0])


def test_detached_loss_has_no_gradient():
    w = Tensor([1.0, -2.0], requires_grad=True)
    loss = (w.detach() * w.detach()).sum()
    loss.backward()
    assert w.grad is None


def test_backward_requires_scalar():
    w = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ad.ShapeMismatchError):
        (w * w).backward()


def test_gradient_accumulates_over_paths():
    w = Tensor([3.0], requires_grad=True)
    loss = (w * w + w * 2.0).sum()      # d/dw = 2w + 2 = 8
    loss.backward()
    np.testing.assert_allclose(w.grad, [8.0])


# ---------------------------------------------------------------------------
# Spike threshold and surrogate
# ---------------------------------------------------------------------------

def test_spike_threshold_values():
    out = ad.spike_threshold(Tensor([0.2, 1.0, 1.7]), 1.0)
    np.testing.assert_array_equal(out.data, [0.0, 1.0, 1.0])


def test_spike_threshold_tie_fires():
    out = ad.spike_threshold(Tensor(np.full(5, 1.0)), 1.0)
    np.testing.assert_array_equal(out.data, np.ones(5))


def test_surrogate_peak_at_threshold():
    # g(x) = (a/2) / (1 + (a pi x / 2)^2), so g(0) = a/2
    a = ad.SURROGATE_SLOPE
    u = Tensor(np.full(3, 1.0), requires_grad=True)
    out = ad.spike_threshold(u, 1.0)
    out.sum().backward()
    np.testing.assert_allclose(u.grad, np.full(3, a / 2.0), rtol=0, atol=0)
    assert ad.surrogate_derivative(0.0) == a / 2.0


def test_surrogate_relaxation_matches_derivative_by_fd():
    # the smooth forward is the exact antiderivative of the surrogate
    xs = np.linspace(-2, 2, 9)
    eps = 1e-6
    fd = (ad.surrogate_relaxation(xs + eps) -
          ad.surrogate_relaxation(xs - eps)) / (2 * eps)
    np.testing.assert_allclose(fd, ad.surrogate_derivative(xs), rtol=1e-8)


def test_smooth_spike_gradient_is_exact():
    u = Tensor(np.array([0.4, 0.9, 1.3]), requires_grad=True)
    out = ad.spike_threshold(u, 1.0, smooth=True)
    out.sum().backward()
    def f(x):
        return float(ad.spike_threshold(Tensor(x), 1.0, smooth=True).sum().data)
    fd = fd_grad(f, u.data.copy())
    np.testing.assert_allclose(u.grad, fd, rtol=1e-7)


# ---------------------------------------------------------------------------
# Finite-difference checks on every pure op
# ---------------------------------------------------------------------------

def test_grad_add_broadcast():
    check_op_grad(lambda a, b: a + b, [(3, 4), (4,)])


def test_grad_sub():
    check_op_grad(lambda a, b: a - b, [(3, 4), (3, 4)])


def test_grad_mul_broadcast():
    check_op_grad(lambda a, b: a * b, [(2, 3), (1, 3)])


def test_grad_div():
    check_op_grad(lambda a, b: a / b, [(3, 3), (3, 3)])


def test_grad_pow_sqrt_exp_log():
    check_op_grad(lambda a: a ** 3, [(4,)])
    check_op_grad(lambda a: a.sqrt(), [(4,)])
    check_op_grad(lambda a: a.exp(), [(4,)])
    check_op_grad(lambda a: a.log(), [(4,)])


def test_grad_reshape_transpose_getitem():
    check_op_grad(lambda a: a.reshape(6, 2), [(3, 4)])
    check_op_grad(lambda a: a.transpose(1, 0) * 2.0, [(3, 4)])
    check_op_grad(lambda a: a[1:, :2] * a[0, 0], [(3, 4)])


def test_grad_sum_mean():
    check_op_grad(lambda a: (a.sum(axis=1) ** 2).sum(), [(3, 4)])
    check_op_grad(lambda a: (a.mean(axis=0) ** 2).sum(), [(3, 4)])


def test_grad_matmul():
    check_op_grad(lambda a, b: a @ b, [(3, 4), (4, 2)])


def test_grad_stack_concat():
    check_op_grad(lambda a, b: (ad.stack([a, b], axis=1) ** 2).sum(),
                  [(3,), (3,)])
    check_op_grad(lambda a, b: (ad.concat([a, b], axis=0) ** 2).sum(),
                  [(2, 3), (4, 3)])


def test_grad_conv2d():
    check_op_grad(lambda x, w, b: ad.conv2d(x, w, b, padding=1),
                  [(2, 2, 5, 5), (3, 2, 3, 3), (3,)], tol=1e-5)


def test_grad_avg_pool():
    check_op_grad(lambda x: ad.avg_pool2d(x, 2), [(2, 3, 4, 4)])


def test_grad_softmax_cross_entropy():
    labels = np.array([0, 2, 1])
    check_op_grad(lambda z: ad.softmax_cross_entropy(z, labels), [(3, 4)])


def test_grad_log_softmax():
    check_op_grad(lambda z: (ad.log_softmax(z) ** 2).sum(), [(3, 4)])


def test_shape_errors():
    with pytest.raises(ad.ShapeMismatchError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
    with pytest.raises(ad.ShapeMismatchError):
        ad.avg_pool2d(Tensor(np.ones((1, 1, 3, 3))), 2)
    with pytest.raises(ad.ShapeMismatchError):
        ad.conv2d(Tensor(np.ones((1, 2, 4, 4))), Tensor(np.ones((1, 3, 3, 3))))
