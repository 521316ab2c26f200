"""The assembled forecasting/classification model and its ablation variants."""
from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import numkernel as nk
from .encoders import EncoderStack, InvertedEmbeddingParams, inverted_embed
from .errors import ConfigError, ShapeMismatch, UnknownVariant
from .fusion import (
    QKV_CONVENTIONS,
    ClassifyHead,
    CmaParams,
    ForecastHead,
    classify_head,
    cmd_decode,
    cross_modality_attention,
    forecast_head,
)
from .promptembed import Token2VectorParams, token2vector

VARIANTS = ("full", "wo_mkg", "wo_cpe", "wo_tse", "wo_cma", "wo_cmd")


@dataclass
class ModelConfig:
    n_vars: int
    history: int
    horizon: int = 1
    task: str = "forecast"
    n_classes: int = 2
    d: int = 64
    depth: int = 2
    n_heads: int = 4
    d_ff: int | None = None
    cmd_depth: int = 1
    l_max: int = 128
    token_dim: int = 64
    t2v_activation: str = "gelu"
    attn_bias: bool = True
    scale: str = "per_head"
    qkv_convention: str = "equation"
    per_variable_head: bool = False
    variant: str = "full"
    seed: int = 0

    def __post_init__(self):
        if self.d_ff is None:
            self.d_ff = 4 * self.d
        if self.task not in ("forecast", "classify"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.variant not in VARIANTS:
            raise UnknownVariant(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.qkv_convention not in QKV_CONVENTIONS:
            raise ConfigError(f"unknown qkv convention {self.qkv_convention!r}")
        if self.depth < 1:
            raise ConfigError("encoder depth must be >= 1")
        if self.cmd_depth < 0:
            raise ConfigError("decoder depth must be >= 0")
        if self.d % self.n_heads:
            raise ConfigError(f"d={self.d} not divisible by n_heads={self.n_heads}")
        if self.task == "forecast" and self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.task == "classify" and self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def uses_mkg(self) -> bool:
        return self.variant != "wo_mkg"


@dataclass
class ForwardResult:
    output: nk.Tensor  # (B, L, N) forecasts or (B, C) logits
    scores: dict = field(default_factory=dict)


class TimeMKG:
    """Prompt branch + series branch, fused by cross-modality attention, decoded, and projected."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None):
        self.config = c = config
        rng = rng if rng is not None else np.random.default_rng(c.seed)
        self.t2v = Token2VectorParams.init(c.l_max, c.token_dim, c.d, rng)
        self.cpe = EncoderStack.init(c.depth, c.d, c.n_heads, c.d_ff, rng, c.attn_bias, c.scale)
        self.emb = InvertedEmbeddingParams.init(c.history, c.d, rng)
        self.tse = EncoderStack.init(c.depth, c.d, c.n_heads, c.d_ff, rng, c.attn_bias, c.scale)
        self.cma = CmaParams.init(c.d, rng, c.attn_bias)
        self.cat_w = nk.Tensor(rng.normal(0.0, 1.0 / np.sqrt(2 * c.d), size=(2 * c.d, c.d)), requires_grad=True)
        self.cat_b = nk.Tensor(np.zeros(c.d), requires_grad=True)
        self.cmd = EncoderStack.init(c.cmd_depth, c.d, c.n_heads, c.d_ff, rng, c.attn_bias, c.scale)
        if c.task == "forecast":
            self.head = ForecastHead.init(c.d, c.horizon, rng, c.n_vars if c.per_variable_head else None)
        else:
            self.head = ClassifyHead.init(c.d, c.n_classes, rng)

    # -- parameters -------------------------------------------------------

    def named_parameters(self, active_only: bool = False) -> dict[str, nk.Tensor]:
        """All learnable tensors; ``active_only`` drops those the current variant never touches."""
        v = self.config.variant
        out = {}
        out.update(self.t2v.named("t2v."))
        if not (active_only and v == "wo_cpe"):
            out.update(self.cpe.named("cpe."))
        out.update(self.emb.named("emb."))
        if not (active_only and v == "wo_tse"):
            out.update(self.tse.named("tse."))
        if not active_only or v != "wo_cma":
            out.update(self.cma.named("cma."))
        if not active_only or v == "wo_cma":
            out["cat.w"] = self.cat_w
            out["cat.b"] = self.cat_b
        if not (active_only and v == "wo_cmd"):
            out.update(self.cmd.named("cmd."))
        out.update(self.head.named("head."))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        if missing:
            raise ShapeMismatch(f"checkpoint lacks tensors: {missing[:5]}")
        for k, t in params.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ShapeMismatch(f"tensor {k}: checkpoint {arr.shape} vs model {t.shape}")
            t.data[...] = arr

    def copy(self) -> "TimeMKG":
        return copy.deepcopy(self)

    # -- forward ------------------------------------------------------------

    def prompt_vectors(self, prompt_tokens) -> nk.Tensor:
        """Token2Vector over (N, l_max, D) token embeddings -> (N, d)."""
        return token2vector(prompt_tokens, self.t2v, self.config.t2v_activation)

    def encode(self, x_hist, prompt_tokens=None, prompt_vectors=None):
        """Run both branches; returns (series tokens, prompt tokens, scores) before fusion."""
        c = self.config
        x = nk.as_tensor(x_hist)
        if x.ndim == 2:
            x = nk.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[1:] != (c.history, c.n_vars):
            raise ShapeMismatch(f"history must be (B, {c.history}, {c.n_vars}), got {x.shape}")
        if prompt_vectors is None:
            if prompt_tokens is None:
                raise ShapeMismatch("need prompt_tokens or prompt_vectors")
            p_hat = self.prompt_vectors(prompt_tokens)
        else:
            p_hat = nk.as_tensor(prompt_vectors)
        if p_hat.shape != (c.n_vars, c.d):
            raise ShapeMismatch(f"prompt vectors must be ({c.n_vars}, {c.d}), got {p_hat.shape}")
        scores = {}
        if c.variant == "wo_cpe":
            p_dot = p_hat
        else:
            p_dot, scores["cpe"] = self.cpe(p_hat)
        x_tilde = inverted_embed(x, self.emb)
        if c.variant == "wo_tse":
            x_dot = x_tilde
        else:
            x_dot, scores["tse"] = self.tse(x_tilde)
        return x_dot, p_dot, scores

    def forward(self, x_hist, prompt_tokens=None, prompt_vectors=None) -> ForwardResult:
        """
        :param x_hist: (B, T, N) or (T, N) normalized history
        :param prompt_tokens: (N, l_max, D) frozen token embeddings of the prompts
        :param prompt_vectors: (N, d) precomputed Token2Vector output, bypasses ``prompt_tokens``
        """
        c = self.config
        x_dot, p_dot, scores = self.encode(x_hist, prompt_tokens, prompt_vectors)
        batch = x_dot.shape[0]
        p_b = nk.add(nk.reshape(p_dot, (1, c.n_vars, c.d)), np.zeros((batch, 1, 1)))
        if c.variant == "wo_cma":
            h = nk.linear(nk.concat([x_dot, p_b], axis=-1), self.cat_w, self.cat_b)
        else:
            fused = cross_modality_attention(x_dot, p_b, self.cma, c.qkv_convention)
            h, scores["cma"] = fused.h, fused.s_n
        if c.variant != "wo_cmd":
            h, scores["cmd"] = cmd_decode(h, self.cmd)
        if c.task == "forecast":
            out = forecast_head(h, self.head)
        else:
            out = classify_head(h, self.head)
        return ForwardResult(out, scores)

    __call__ = forward


def ablation_variant(model: TimeMKG, variant: str) -> TimeMKG:
    """Copy of ``model`` (weights included) running the named ablation.

    ``wo_mkg`` changes only how prompts are built (query line, no triplets);
    the pipeline consults ``config.uses_mkg`` for that.
    """
    if variant not in VARIANTS:
        raise UnknownVariant(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    twin = model.copy()
    twin.config = replace(model.config, variant=variant)
    return twin
