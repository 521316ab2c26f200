"""Dual-modality encoders: Pre-LN transformer blocks over variable tokens.

Both branches attend over the variable axis (N), never over time. Inputs may
be unbatched ``(N, d)`` or batched ``(B, N, d)``; attention scores come back
with the same leading shape, ``(N, N)`` or ``(B, N, N)``, averaged over heads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkernel as nk
from .errors import ConfigError, ShapeMismatch

SCALE_CONVENTIONS = ("per_head", "model")


def _weight(rng, fan_in, fan_out):
    return nk.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)), requires_grad=True)


def _zeros(*shape):
    return nk.Tensor(np.zeros(shape), requires_grad=True)


@dataclass
class PreLnBlockParams:
    gamma1: nk.Tensor
    gamma2: nk.Tensor
    wq: nk.Tensor
    wk: nk.Tensor
    wv: nk.Tensor
    wo: nk.Tensor
    w1: nk.Tensor
    w2: nk.Tensor
    b1: nk.Tensor
    b2: nk.Tensor
    bq: nk.Tensor | None = None
    bk: nk.Tensor | None = None
    bv: nk.Tensor | None = None
    bo: nk.Tensor | None = None
    n_heads: int = 4

    def __post_init__(self):
        d = self.d_model
        if d % self.n_heads:
            raise ConfigError(f"d={d} is not divisible by n_heads={self.n_heads}")
        for name in ("wq", "wk", "wv", "wo"):
            if getattr(self, name).shape != (d, d):
                raise ShapeMismatch(f"{name} must be ({d}, {d})")

    @classmethod
    def init(cls, d: int, n_heads: int, d_ff: int, rng: np.random.Generator, bias: bool = True):
        return cls(
            gamma1=nk.Tensor(np.ones(d), requires_grad=True),
            gamma2=nk.Tensor(np.ones(d), requires_grad=True),
            wq=_weight(rng, d, d), wk=_weight(rng, d, d), wv=_weight(rng, d, d), wo=_weight(rng, d, d),
            w1=_weight(rng, d, d_ff), w2=_weight(rng, d_ff, d),
            b1=_zeros(d_ff), b2=_zeros(d),
            bq=_zeros(d) if bias else None, bk=_zeros(d) if bias else None,
            bv=_zeros(d) if bias else None, bo=_zeros(d) if bias else None,
            n_heads=n_heads,
        )

    @property
    def d_model(self) -> int:
        return self.gamma1.shape[0]

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        names = ["gamma1", "gamma2", "wq", "wk", "wv", "wo", "w1", "w2", "b1", "b2", "bq", "bk", "bv", "bo"]
        return {prefix + n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def zero_weights(self):
        """Zero every attention and feed-forward weight and bias (norm scales untouched)."""
        for name, t in self.named().items():
            if not name.startswith("gamma"):
                t.data[...] = 0.0


def _batched(x: nk.Tensor):
    if x.ndim == 2:
        return nk.reshape(x, (1,) + x.shape), True
    if x.ndim == 3:
        return x, False
    raise ShapeMismatch(f"expected (N, d) or (B, N, d), got {x.shape}")


def mhsa(x, params: PreLnBlockParams, scale: str = "per_head"):
    """Multi-head self-attention over the token axis.

    :return: (output with the shape of ``x``, head-averaged row-stochastic scores)
    """
    x = nk.as_tensor(x)
    return attention(x, x, x, params.wq, params.wk, params.wv, params.wo,
                     params.bq, params.bk, params.bv, params.bo, params.n_heads, scale)


def attention(q_in, k_in, v_in, wq, wk, wv, wo, bq=None, bk=None, bv=None, bo=None,
              n_heads: int = 1, scale: str = "per_head"):
    """Projected multi-head attention; query tokens from ``q_in``, keys from ``k_in``, values from ``v_in``."""
    q_in, single = _batched(nk.as_tensor(q_in))
    k_in, _ = _batched(nk.as_tensor(k_in))
    v_in, _ = _batched(nk.as_tensor(v_in))
    b, n, d = q_in.shape
    if k_in.shape[-1] != d or v_in.shape[-1] != d or k_in.shape[1] != v_in.shape[1]:
        raise ShapeMismatch(f"attention inputs disagree: {q_in.shape}, {k_in.shape}, {v_in.shape}")
    if scale not in SCALE_CONVENTIONS:
        raise ConfigError(f"unknown attention scale convention {scale!r}")
    m = k_in.shape[1]
    dh = d // n_heads
    factor = 1.0 / np.sqrt(dh if scale == "per_head" else d)

    def heads(t, length):
        return nk.transpose(nk.reshape(t, (b, length, n_heads, dh)), (0, 2, 1, 3))

    q = heads(nk.linear(q_in, wq, bq), n)
    k = heads(nk.linear(k_in, wk, bk), m)
    v = heads(nk.linear(v_in, wv, bv), m)
    scores = nk.softmax_lastdim(nk.matmul(q, nk.transpose_last2(k)) * factor)  # (B, h, n, m)
    ctx = nk.reshape(nk.transpose(nk.matmul(scores, v), (0, 2, 1, 3)), (b, n, d))
    out = nk.linear(ctx, wo, bo)
    avg = scores.data.mean(axis=1)
    if single:
        return nk.reshape(out, (n, d)), avg[0]
    return out, avg


def ffn(x, params: PreLnBlockParams, activation=nk.gelu):
    return nk.linear(activation(nk.linear(x, params.w1, params.b1)), params.w2, params.b2)


def preln_block(x, params: PreLnBlockParams, scale: str = "per_head", eps: float = 1e-8, activation=nk.gelu):
    """x_bar = MHSA(RN(x)) + x;  out = FFN(RN(x_bar)) + x_bar."""
    x = nk.as_tensor(x)
    attn, scores = mhsa(nk.rms_norm(x, params.gamma1, eps), params, scale)
    x_bar = nk.add(attn, x)
    out = nk.add(ffn(nk.rms_norm(x_bar, params.gamma2, eps), params, activation), x_bar)
    return out, scores


@dataclass
class EncoderStack:
    blocks: list[PreLnBlockParams] = field(default_factory=list)
    scale: str = "per_head"
    eps: float = 1e-8

    def __post_init__(self):
        dims = {blk.d_model for blk in self.blocks}
        if len(dims) > 1:
            raise ShapeMismatch(f"blocks disagree on d: {sorted(dims)}")

    @classmethod
    def init(cls, depth: int, d: int, n_heads: int, d_ff: int, rng: np.random.Generator,
             bias: bool = True, scale: str = "per_head"):
        return cls([PreLnBlockParams.init(d, n_heads, d_ff, rng, bias) for _ in range(depth)], scale)

    @property
    def depth(self) -> int:
        return len(self.blocks)

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        out = {}
        for i, blk in enumerate(self.blocks):
            out.update(blk.named(f"{prefix}{i}."))
        return out

    def __call__(self, x):
        scores = []
        for blk in self.blocks:
            x, s = preln_block(x, blk, self.scale, self.eps)
            scores.append(s)
        return nk.as_tensor(x), scores


def cp_encode(prompt_vectors, stack: EncoderStack):
    """Causal prompt encoder over (N, d) or (B, N, d) prompt vectors."""
    if stack.depth < 1:
        raise ConfigError("the prompt encoder needs depth >= 1")
    return stack(prompt_vectors)


@dataclass
class InvertedEmbeddingParams:
    w_emb: nk.Tensor  # (T, d)
    b_emb: nk.Tensor  # (d,)

    @classmethod
    def init(cls, history: int, d: int, rng: np.random.Generator):
        return cls(_weight(rng, history, d), _zeros(d))

    @property
    def history(self) -> int:
        return self.w_emb.shape[0]

    def named(self, prefix: str = "") -> dict[str, nk.Tensor]:
        return {prefix + "w_emb": self.w_emb, prefix + "b_emb": self.b_emb}


def inverted_embed(x_hist, params: InvertedEmbeddingParams):
    """Map each variable's length-T history to one d-dim token: (.., T, N) -> (.., N, d)."""
    x = nk.as_tensor(x_hist)
    if x.ndim not in (2, 3) or x.shape[-2] != params.history:
        raise ShapeMismatch(f"history {x.shape} does not have T={params.history} steps")
    return nk.linear(nk.transpose_last2(x), params.w_emb, params.b_emb)


def ts_encode(x_hist, emb: InvertedEmbeddingParams, stack: EncoderStack):
    """Inverted embedding followed by the time-series encoder stack."""
    if stack.depth < 1:
        raise ConfigError("the time-series encoder needs depth >= 1")
    return stack(inverted_embed(x_hist, emb))
