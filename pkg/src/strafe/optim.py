"""Learnable parameters, Adam updates, and a finite-difference gradient checker."""

from __future__ import annotations

from typing import Callable, Iterable, Mapping

import numpy as np

from .autodiff import Tensor
from .errors import DeterminismError, NonFiniteError


class Parameter:
    """A leaf tensor plus its Adam moment buffers and step counter."""

    def __init__(self, value, dtype=np.float32):
        self.value = Tensor(np.asarray(value, dtype=dtype), requires_grad=True)
        self.m = np.zeros_like(self.value.data)
        self.v = np.zeros_like(self.value.data)
        self.step_count = 0

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def grad(self):
        return self.value.grad

    def zero_grad(self) -> None:
        self.value.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.value.shape}, steps={self.step_count})"


def adam_step(params: Iterable[Parameter], lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update. Gradients are left in place for the caller to clear."""
    for p in params:
        g = p.value.grad
        if g is None:
            g = np.zeros_like(p.data)
        p.step_count += 1
        t = p.step_count
        p.m = beta1 * p.m + (1.0 - beta1) * g
        p.v = beta2 * p.v + (1.0 - beta2) * g * g
        m_hat = p.m / (1.0 - beta1 ** t)
        v_hat = p.v / (1.0 - beta2 ** t)
        p.value.data -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
        if not np.all(np.isfinite(p.value.data)):
            raise NonFiniteError("adam_step produced non-finite parameter values")


def zero_all_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def grad_check(closure: Callable[[], Tensor], params: Mapping[str, Parameter],
               tolerance: float = 1e-4, step: float = 1e-5) -> dict[str, float]:
    """Compare reverse-mode gradients against central finite differences.

    The closure must be deterministic (fixed seed, dropout in eval mode) and
    return a scalar loss computed from the current parameter values. Returns
    the max relative error per parameter; raises nothing on failure so the
    caller can decide how to report. Parameters should be 64-bit for the
    stated tolerances to be meaningful.
    """
    base = closure()
    again = closure()
    if not np.array_equal(base.data, again.data):
        raise DeterminismError("closure returned different values on re-evaluation")

    zero_all_grads(params.values())
    closure().backward()
    ad_grads = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report: dict[str, float] = {}
    for name, p in params.items():
        flat = p.value.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = closure().item()
            flat[i] = orig - step
            lo = closure().item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)
        g_ad = ad_grads[name].reshape(-1)
        denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(fd)), 1e-8)
        report[name] = float(np.max(np.abs(g_ad - fd) / denom)) if flat.size else 0.0
    zero_all_grads(params.values())
    return report
