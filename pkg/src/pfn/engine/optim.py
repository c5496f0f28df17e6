"""Trainable parameters, Adam, and global gradient-norm clipping."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor, UsageError, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor that carries its own Adam moment estimates."""

    __slots__ = ("adam_m", "adam_v", "step_count", "name")

    def __init__(self, data, name: str = "", dtype=None, requires_grad: bool = True):
        super().__init__(np.array(data, dtype=dtype or get_default_dtype(), copy=True), requires_grad=requires_grad)
        self.name = name
        self.adam_m = np.zeros_like(self.data)
        self.adam_v = np.zeros_like(self.data)
        self.step_count = 0

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape}, dtype={self.dtype})"


def zero_grad(params: Iterable[Parameter]) -> None:
    for p in params:
        p.grad = None


def adam_step(
    params: Sequence[Parameter],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    skip_missing: bool = False,
) -> None:
    """One bias-corrected Adam update. Gradients are left for the caller to clear."""
    for p in params:
        if not p.requires_grad:
            continue
        if p.grad is None:
            if skip_missing:
                continue
            raise UsageError(f"parameter {p.name or p.shape} has no gradient")
        g = p.grad
        p.step_count += 1
        p.adam_m = beta1 * p.adam_m + (1 - beta1) * g
        p.adam_v = beta2 * p.adam_v + (1 - beta2) * g * g
        m_hat = p.adam_m / (1 - beta1 ** p.step_count)
        v_hat = p.adam_v / (1 - beta2 ** p.step_count)
        p.data = (p.data - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.data.dtype, copy=False)


def global_grad_norm(params: Iterable[Tensor]) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float(np.sum(np.square(p.grad, dtype=np.float64)))
    return float(np.sqrt(total))


def clip_global_grad_norm(params: Sequence[Tensor], max_norm: float = 1.0) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm measured before clipping.
    """
    norm = global_grad_norm(params)
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad = (p.grad * scale).astype(p.grad.dtype, copy=False)
    return norm
