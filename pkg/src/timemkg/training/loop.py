"""Mini-batch training with early stopping, prediction and evaluation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .. import numkernel as nk
from ..errors import DivergenceError, EmptySet
from ..model import TimeMKG
from .data import WindowedDataset
from .metrics import MetricsReport, evaluate_classification, evaluate_forecast
from .optim import Adam


@dataclass
class TrainConfig:
    lr: float = 1e-3
    steps: int = 300
    batch_size: int = 16
    patience: int = 5
    eval_every: int = 20
    clip_norm: float | None = 1.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    val_curve: list[tuple[int, float]] = field(default_factory=list)
    best_step: int = 0
    best_val: float | None = None
    stopped_early: bool = False
    steps_run: int = 0


def batch_loss(model: TimeMKG, x, y, prompt_tokens=None, prompt_vectors=None) -> nk.Tensor:
    out = model(x, prompt_tokens, prompt_vectors).output
    if model.config.task == "forecast":
        return nk.mse_loss(out, y)
    return nk.cross_entropy(out, y)


def predict(model: TimeMKG, x, prompt_tokens=None, prompt_vectors=None, batch_size: int = 256) -> np.ndarray:
    """Forward pass without graph recording; normalized-space outputs."""
    outs = []
    with nk.no_grad():
        vectors = prompt_vectors
        if vectors is None:
            vectors = model.prompt_vectors(prompt_tokens)
        for i in range(0, len(x), batch_size):
            outs.append(model(x[i:i + batch_size], prompt_vectors=vectors).output.data)
    if not outs:
        c = model.config
        tail = (c.horizon, c.n_vars) if c.task == "forecast" else (c.n_classes,)
        return np.zeros((0,) + tail)
    return np.concatenate(outs, axis=0)


def split_loss(model: TimeMKG, dataset: WindowedDataset, split: str, prompt_tokens=None,
               prompt_vectors=None) -> float:
    """Mean normalized-space loss over a whole split (the early-stopping metric)."""
    part = dataset[split]
    if len(part) == 0:
        raise EmptySet(f"split {split!r} holds no windows")
    pred = predict(model, part.history, prompt_tokens, prompt_vectors)
    with nk.no_grad():
        if model.config.task == "forecast":
            return float(np.mean((pred - part.target) ** 2))
        return nk.cross_entropy(pred, part.target).item()


def train(model: TimeMKG, dataset: WindowedDataset, prompt_tokens, config: TrainConfig) -> TrainResult:
    """Optimize ``model`` in place on the train split; restore the best validation weights.

    Deterministic for a fixed ``config.seed`` on one thread.
    """
    part = dataset["train"]
    if len(part) == 0:
        raise EmptySet("train split holds no windows")
    rng = np.random.default_rng(config.seed)
    params = model.named_parameters(active_only=True)
    opt = Adam(params, config.lr, config.betas, config.eps, config.clip_norm)
    has_val = "val" in dataset and config.patience > 0
    result = TrainResult()
    best_state = None
    bad_evals = 0
    order = np.array([], dtype=int)
    bs = min(config.batch_size, len(part))
    for step in range(1, config.steps + 1):
        if len(order) < bs:
            order = np.concatenate([order, rng.permutation(len(part))])
        idx, order = order[:bs], order[bs:]
        opt.zero_grad()
        loss = batch_loss(model, part.history[idx], part.target[idx], prompt_tokens)
        value = loss.item()
        if not np.isfinite(value):
            raise DivergenceError(f"non-finite training loss at step {step}")
        nk.backward(loss)
        opt.step()
        result.losses.append(value)
        result.steps_run = step
        if has_val and (step % config.eval_every == 0 or step == config.steps):
            val = split_loss(model, dataset, "val", prompt_tokens)
            result.val_curve.append((step, val))
            if result.best_val is None or val < result.best_val:
                result.best_val, result.best_step = val, step
                best_state = model.state_dict()
                bad_evals = 0
            else:
                bad_evals += 1
                if bad_evals >= config.patience:
                    result.stopped_early = True
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        result.best_step = result.steps_run
    return result


def evaluate(model: TimeMKG, dataset: WindowedDataset, split: str, prompt_tokens=None, prompt_vectors=None,
             m: int = 1) -> MetricsReport:
    """Metrics on ``split`` in the original units (forecasts de-normalized)."""
    part = dataset[split]
    if len(part) == 0:
        raise EmptySet(f"split {split!r} holds no windows")
    pred = predict(model, part.history, prompt_tokens, prompt_vectors)
    if model.config.task == "classify":
        return evaluate_classification(pred, part.target)
    stats = dataset.norm_stats
    return evaluate_forecast(stats.denormalize(pred), stats.denormalize(part.target),
                             stats.denormalize(part.history), m)
