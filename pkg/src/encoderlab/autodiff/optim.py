"""Trainable parameters, Adam and global-norm gradient clipping."""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


class Parameter(Tensor):
    """A leaf tensor that owns its gradient and Adam moments."""

    __slots__ = ("name", "adam_m", "adam_v", "step_count")

    def __init__(self, value, name: str = ""):
        super().__init__(np.array(value, dtype=np.asarray(value).dtype if _is_float(value) else np.float32),
                         requires_grad=True)
        self.name = name
        self.grad = np.zeros_like(self.data)
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _is_float(value) -> bool:
    return isinstance(value, np.ndarray) and value.dtype in (np.float32, np.float64)


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def global_grad_norm(params: Sequence[Parameter]) -> float:
    total = math.fsum(float(np.dot(p.grad.ravel().astype(np.float64), p.grad.ravel()))
                      for p in params if p.grad is not None)
    return math.sqrt(total)


def clip_grad_global_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype)
    return norm


class Adam:
    """Bias-corrected Adam. Each parameter keeps its own step counter."""

    def __init__(self, params: Sequence[Parameter], lr: float = 3.5e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self) -> None:
        adam_step(self.params, self.lr, self.beta1, self.beta2, self.eps)


def adam_step(params: Sequence[Parameter], lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    for p in params:
        if p.grad is None or not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite or missing gradient for parameter {p.name!r}")
    for p in params:
        g = p.grad
        p.step_count += 1
        t = p.step_count
        p.adam_m = beta1 * p.adam_m + (1.0 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1.0 - beta2) * (g * g)
        m_hat = p.adam_m / (1.0 - beta1 ** t)
        v_hat = p.adam_v / (1.0 - beta2 ** t)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype)
