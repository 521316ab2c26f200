"""Centered finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Centered differences of scalar ``fn()`` with respect to each entry of ``t``."""
    grad = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn().item()
        flat[i] = orig - h
        fm = fn().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-5) -> float:
    """Norm-wise relative error ``|a - b| / max(|a|, |b|, floor)``.

    The floor keeps structurally zero gradients (e.g. a key bias under
    softmax shift invariance) from dividing difference noise by ~0.
    """
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], params: Mapping[str, Tensor], h: float = 1e-5) -> dict[str, float]:
    """Compare analytic and numerical gradients of scalar ``fn`` for every tensor in ``params``.

    Returns the relative error per named tensor.
    """
    for p in params.values():
        p.zero_grad()
    out = fn()
    backward(out)
    analytic = {k: p.grad.copy() for k, p in params.items()}
    return {k: rel_error(analytic[k], numerical_grad(fn, p, h)) for k, p in params.items()}
