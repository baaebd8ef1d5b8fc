"""Adam updates and the finite-difference gradient checker."""

import numpy as np
import pytest

from strafe.autodiff import Tensor, matmul
from strafe.errors import DeterminismError
from strafe.optim import Parameter, adam_step, grad_check, zero_all_grads


def test_adam_zero_gradient_leaves_values():
    p = Parameter(np.array([1.0, 2.0]), dtype=np.float64)
    adam_step([p], lr=0.1)
    assert np.array_equal(p.data, [1.0, 2.0])
    assert p.step_count == 1


def test_adam_descends_quadratic():
    p = Parameter(np.array([1.0]), dtype=np.float64)
    p.value.grad = 2.0 * p.data  # gradient of w^2
    adam_step([p], lr=0.1)
    assert p.data[0] < 1.0


def test_adam_converges_on_quadratic_bowl():
    target = np.array([3.0, -1.0])
    p = Parameter(np.zeros(2), dtype=np.float64)
    for _ in range(500):
        p.value.grad = 2.0 * (p.data - target)
        adam_step([p], lr=0.05)
        p.zero_grad()
    assert np.max(np.abs(p.data - target)) < 1e-3


def test_grad_check_linear_model_near_exact():
    w = Parameter(np.array([[0.5], [-1.5]]), dtype=np.float64)
    x = Tensor(np.random.default_rng(0).normal(size=(4, 2)))
    report = grad_check(lambda: matmul(x, w.value).sum(), {"w": w})
    assert report["w"] < 1e-9


def test_grad_check_sigmoid_bce_micro_net():
    rng = np.random.default_rng(1)
    w = Parameter(rng.normal(size=(3, 1)), dtype=np.float64)
    b = Parameter(np.zeros(1), dtype=np.float64)
    x = Tensor(rng.normal(size=(8, 3)))
    y = Tensor((rng.random(8) < 0.5).astype(float).reshape(8, 1))

    def closure():
        p = (matmul(x, w.value) + b.value).sigmoid().clip(1e-9, 1 - 1e-9)
        return -(y * p.log() + (1.0 - y) * (1.0 - p).log()).sum()

    report = grad_check(closure, {"w": w, "b": b})
    assert max(report.values()) < 1e-6


def _square_with_backward_scale(x: Tensor, scale: float) -> Tensor:
    """x**2 whose backward rule is deliberately scaled (scale=1 is correct)."""
    from strafe.autodiff import _make
    return _make(x.data ** 2, (x,), "square", lambda g: (scale * g * 2.0 * x.data,))


def test_grad_check_detects_corrupted_backward_rule():
    w = Parameter(np.array([[1.0], [2.0]]), dtype=np.float64)
    x = Tensor(np.random.default_rng(2).normal(size=(4, 2)))

    good = grad_check(lambda: _square_with_backward_scale(matmul(x, w.value), 1.0).sum(),
                      {"w": w})
    assert good["w"] < 1e-6

    zero_all_grads([w])
    bad = grad_check(lambda: _square_with_backward_scale(matmul(x, w.value), 1.5).sum(),
                     {"w": w})
    assert bad["w"] > 1e-2


def test_grad_check_rejects_nondeterministic_closure():
    w = Parameter(np.array([1.0]), dtype=np.float64)
    state = {"n": 0}

    def closure():
        state["n"] += 1
        return w.value * float(state["n"])

    with pytest.raises(DeterminismError):
        grad_check(closure, {"w": w})
