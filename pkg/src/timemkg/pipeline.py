"""Glue between the graph, prompt embedding, model and training loop."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kgstore import DEFAULT_TEMPLATE, Mkg, assemble_prompt
from .model import ModelConfig, TimeMKG, ablation_variant
from .promptembed import EmbedderSpec, PromptRecord, Vocabulary, embed_prompts
from .training import (
    TrainConfig,
    WindowedDataset,
    default_spec,
    evaluate,
    gen_synthetic,
    make_windows,
    train,
)


def build_prompts(graph: Mkg, names: Sequence[str], template: str = DEFAULT_TEMPLATE, k: int = 2,
                  with_triplets: bool = True) -> list[PromptRecord]:
    """One prompt per series variable, in column order; variables missing from the graph get bare queries."""
    g = graph
    if any(n not in graph for n in names):
        g = graph.copy()
        for n in names:
            g.add_node(n)
    return [assemble_prompt(g, n, template, k, with_triplets) for n in names]


@dataclass
class PromptBank:
    records: list[PromptRecord]
    tokens: np.ndarray  # (N, l_max, D)
    vocab: Vocabulary = field(default_factory=Vocabulary)

    @classmethod
    def build(cls, records: Sequence[PromptRecord], embedder: EmbedderSpec, l_max: int,
              vocab: Vocabulary | None = None) -> "PromptBank":
        vocab = vocab if vocab is not None else Vocabulary()
        return cls(list(records), embed_prompts(records, embedder, l_max, vocab), vocab)


def prompt_bank_for(model: TimeMKG, graph: Mkg, names: Sequence[str], template: str = DEFAULT_TEMPLATE,
                    k: int = 2, embedder: EmbedderSpec | None = None, vocab: Vocabulary | None = None) -> PromptBank:
    """Prompts as the model's variant wants them (``wo_mkg`` drops the triplets)."""
    c = model.config
    embedder = embedder or EmbedderSpec(dim=c.token_dim)
    records = build_prompts(graph, names, template, k, with_triplets=c.uses_mkg)
    return PromptBank.build(records, embedder, c.l_max, vocab)


def fit_forecaster(series, names, graph: Mkg, config: ModelConfig, train_config: TrainConfig,
                   splits=(0.7, 0.1, 0.2), template: str = DEFAULT_TEMPLATE, k: int = 2):
    """Window ``series``, build prompts, train a fresh model; returns (model, dataset, bank, result)."""
    dataset = make_windows(series, config.history, config.horizon, splits, names)
    model = TimeMKG(config)
    bank = prompt_bank_for(model, graph, names, template, k)
    result = train(model, dataset, bank.tokens, train_config)
    return model, dataset, bank, result


def test_report(model: TimeMKG, dataset: WindowedDataset, bank: PromptBank, m: int = 1):
    return evaluate(model, dataset, "test", bank.tokens, m=m)


test_report.__test__ = False


@dataclass
class AblationSetup:
    """Desk-scale comparison of variants on synthetic data whose true graph feeds the prompts."""
    variants: tuple[str, ...] = ("full", "wo_cma", "wo_mkg")
    seeds: tuple[int, ...] = tuple(range(10))
    length: int = 480
    noise: float = 0.3
    history: int = 24
    horizon: int = 8
    splits: tuple[float, ...] = (0.6, 0.2, 0.2)
    d: int = 16
    depth: int = 1
    n_heads: int = 2
    l_max: int = 64
    token_dim: int = 16
    lr: float = 3e-3
    steps: int = 400
    batch_size: int = 32
    patience: int = 4
    eval_every: int = 25
    qkv_convention: str = "equation"


def run_ablation(setup: AblationSetup = AblationSetup()) -> dict[str, list[float]]:
    """Test MSE per variant and seed; every variant of one seed starts from identical weights."""
    out = {v: [] for v in setup.variants}
    for seed in setup.seeds:
        data = gen_synthetic(default_spec(seed=seed, length=setup.length, noise=setup.noise))
        ds = make_windows(data.series, setup.history, setup.horizon, setup.splits, data.names)
        cfg = ModelConfig(n_vars=len(data.names), history=setup.history, horizon=setup.horizon, d=setup.d,
                          depth=setup.depth, n_heads=setup.n_heads, l_max=setup.l_max, token_dim=setup.token_dim,
                          qkv_convention=setup.qkv_convention, seed=seed)
        base = TimeMKG(cfg)
        for v in setup.variants:
            model = ablation_variant(base, v)
            bank = prompt_bank_for(model, data.graph, data.names)
            train(model, ds, bank.tokens, TrainConfig(lr=setup.lr, steps=setup.steps, batch_size=setup.batch_size,
                                                      patience=setup.patience, eval_every=setup.eval_every, seed=seed))
            out[v].append(evaluate(model, ds, "test", bank.tokens).mse)
    return out
