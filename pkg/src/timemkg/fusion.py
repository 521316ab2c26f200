"""Cross-modality attention, the post-fusion decoder, and task heads."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkernel as nk
from .encoders import EncoderStack, _weight, _zeros, attention
from .errors import ConfigError, ShapeMismatch

QKV_CONVENTIONS = ("equation", "prose")


@dataclass
class CmaParams:
    wq: nk.Tensor
    wk: nk.Tensor
    wv: nk.Tensor
    wo: nk.Tensor
    bq: nk.Tensor | None = None
    bk: nk.Tensor | None = None
    bv: nk.Tensor | None = None
    bo: nk.Tensor | None = None

    def __post_init__(self):
        d = self.wq.shape[0]
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeMismatch(f"CMA {name} must be square ({d}, {d})")

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, bias: bool = True):
        return cls(_weight(rng, d, d), _weight(rng, d, d), _weight(rng, d, d), _weight(rng, d, d),
                   *([_zeros(d) for _ in range(4)] if bias else [None] * 4))

    @property
    def d_model(self) -> int:
        return self.wq.shape[0]

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        names = ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")
        return {prefix + n: getattr(self, n) for n in names if getattr(self, n) is not None}


@dataclass
class FusedRepresentation:
    h: nk.Tensor  # (.., N, d)
    s_n: np.ndarray  # (.., N, N), row-stochastic


def cross_modality_attention(x_num, p_text, params: CmaParams, qkv_convention: str = "equation") -> FusedRepresentation:
    """Fuse series tokens with prompt tokens; the series tokens ride the residual.

    ``equation``: scores = softmax((P Wq)(X Wk)^T / sqrt(d)), values from P.
    ``prose``: the series tokens form the queries, prompts give keys and values.
    Either way ``h = (scores @ (P Wv)) Wo + X``.
    """
    x_num, p_text = nk.as_tensor(x_num), nk.as_tensor(p_text)
    if x_num.shape != p_text.shape:
        raise ShapeMismatch(f"CMA inputs differ: {x_num.shape} vs {p_text.shape}")
    if x_num.shape[-1] != params.d_model:
        raise ShapeMismatch(f"CMA expects d={params.d_model}, got {x_num.shape[-1]}")
    if qkv_convention == "equation":
        q_src, k_src = p_text, x_num
    elif qkv_convention == "prose":
        q_src, k_src = x_num, p_text
    else:
        raise ConfigError(f"unknown qkv convention {qkv_convention!r}")
    fused, scores = attention(q_src, k_src, p_text, params.wq, params.wk, params.wv, params.wo,
                              params.bq, params.bk, params.bv, params.bo, n_heads=1, scale="model")
    return FusedRepresentation(nk.add(fused, x_num), scores)


def cmd_decode(h, stack: EncoderStack):
    """Pre-LN decoder over fused variable tokens; depth 0 is the identity."""
    return stack(h)


@dataclass
class ForecastHead:
    w: nk.Tensor  # (d, L), or (N, d, L) per variable
    b: nk.Tensor  # (L,) or (N, L)

    @classmethod
    def init(cls, d: int, horizon: int, rng: np.random.Generator, n_vars: int | None = None):
        if horizon < 1:
            raise ConfigError("forecast horizon must be >= 1")
        if n_vars is None:
            return cls(_weight(rng, d, horizon), _zeros(horizon))
        w = rng.normal(0.0, 1.0 / np.sqrt(d), size=(n_vars, d, horizon))
        return cls(nk.Tensor(w, requires_grad=True), _zeros(n_vars, horizon))

    @property
    def per_variable(self) -> bool:
        return self.w.ndim == 3

    @property
    def horizon(self) -> int:
        return self.w.shape[-1]

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        return {prefix + "w": self.w, prefix + "b": self.b}


def forecast_head(h, params: ForecastHead):
    """(.., N, d) -> (.., L, N)."""
    h = nk.as_tensor(h)
    if h.shape[-1] != params.w.shape[-2]:
        raise ShapeMismatch(f"head expects d={params.w.shape[-2]}, got {h.shape}")
    if params.per_variable:
        n, d = h.shape[-2:]
        if params.w.shape[0] != n:
            raise ShapeMismatch(f"per-variable head built for {params.w.shape[0]} variables, got {n}")
        lead = h.shape[:-2]
        rows = nk.reshape(h, lead + (n, 1, d))
        out = nk.reshape(nk.matmul(rows, params.w), lead + (n, params.horizon))
        out = nk.add(out, params.b)
    else:
        out = nk.linear(h, params.w, params.b)
    return nk.transpose_last2(out)


@dataclass
class ClassifyHead:
    w: nk.Tensor  # (d, C)
    b: nk.Tensor  # (C,)

    @classmethod
    def init(cls, d: int, n_classes: int, rng: np.random.Generator):
        if n_classes < 2:
            raise ConfigError("classification needs at least 2 classes")
        return cls(_weight(rng, d, n_classes), _zeros(n_classes))

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        return {prefix + "w": self.w, prefix + "b": self.b}


def classify_head(h, params: ClassifyHead):
    """Mean-pool the variable tokens, then project to class logits: (.., N, d) -> (.., C)."""
    h = nk.as_tensor(h)
    if h.shape[-1] != params.w.shape[0]:
        raise ShapeMismatch(f"head expects d={params.w.shape[0]}, got {h.shape}")
    return nk.linear(nk.mean(h, axis=-2), params.w, params.b)
