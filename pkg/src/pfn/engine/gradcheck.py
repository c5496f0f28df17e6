"""Central finite-difference checks against the reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    max_abs_err: float
    checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def numerical_grad(fn: Callable[[], Tensor], leaf: Tensor, eps: float = 1e-6, indices=None) -> np.ndarray:
    """d fn() / d leaf by central differences, perturbing ``leaf.data`` in place."""
    grad = np.zeros_like(leaf.data, dtype=np.float64)
    flat = leaf.data.reshape(-1)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        orig = flat[i]
        flat[i] = orig + eps
        plus = float(fn().data)
        flat[i] = orig - eps
        minus = float(fn().data)
        flat[i] = orig
        grad.reshape(-1)[i] = (plus - minus) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps near-zero entries from dominating; with float64 and
    ``eps=1e-6`` the difference quotient itself is only good to ~1e-9 absolute.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def check_gradients(
    fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    names: Sequence[str] | None = None,
    eps: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> list[GradCheckResult]:
    """Compare backward() against central differences for every leaf.

    ``max_entries`` subsamples large leaves; the subsample is drawn from
    ``rng`` so repeated runs check the same entries.
    """
    for leaf in leaves:
        leaf.grad = None
    fn().backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]
    results = []
    rng = rng or np.random.default_rng(0)
    for k, leaf in enumerate(leaves):
        indices = None
        if max_entries is not None and leaf.size > max_entries:
            indices = np.sort(rng.choice(leaf.size, size=max_entries, replace=False))
        numeric = numerical_grad(fn, leaf, eps, indices)
        a = analytic[k].reshape(-1).astype(np.float64)
        nmr = numeric.reshape(-1)
        if indices is not None:
            a, nmr = a[indices], nmr[indices]
        rel = relative_error(a, nmr, floor)
        results.append(
            GradCheckResult(
                name=names[k] if names else f"leaf{k}",
                max_rel_err=float(rel.max()) if rel.size else 0.0,
                max_abs_err=float(np.abs(a - nmr).max()) if rel.size else 0.0,
                checked=int(rel.size),
            )
        )
    return results
