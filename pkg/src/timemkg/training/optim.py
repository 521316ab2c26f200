from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .. import numkernel as nk


@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = 1.0
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Adam with optional global-norm gradient clipping."""

    def __init__(self, params: Mapping[str, nk.Tensor], lr=1e-3, betas=(0.9, 0.999), eps=1e-8, clip_norm=1.0):
        self.params = dict(params)
        self.state = OptimizerState(lr, tuple(betas), eps, clip_norm)
        for k, p in self.params.items():
            self.state.m[k] = np.zeros_like(p.data)
            self.state.v[k] = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(p.grad ** 2)) for p in self.params.values() if p.grad is not None)))

    def step(self):
        s = self.state
        s.step += 1
        scale = 1.0
        if s.clip_norm is not None:
            norm = self.grad_norm()
            if norm > s.clip_norm:
                scale = s.clip_norm / (norm + 1e-12)
        b1, b2 = s.betas
        c1 = 1.0 - b1 ** s.step
        c2 = 1.0 - b2 ** s.step
        for k, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad * scale
            s.m[k] = b1 * s.m[k] + (1.0 - b1) * g
            s.v[k] = b2 * s.v[k] + (1.0 - b2) * g * g
            p.data -= s.lr * (s.m[k] / c1) / (np.sqrt(s.v[k] / c2) + s.eps)
