"""Run configuration: an INI-style file with sections, plus ``section.key=value`` overrides.

Precedence, lowest first: built-in defaults, the config file, ``--set`` overrides.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .kgstore import DEFAULT_TEMPLATE
from .model import VARIANTS, ModelConfig
from .training import TrainConfig


@dataclass
class DataSection:
    path: str = ""
    task: str = "forecast"
    history: int = 96
    horizon: int = 96
    n_classes: int = 2
    splits: tuple[float, ...] = (0.7, 0.1, 0.2)
    seasonal_period: int = 1


@dataclass
class GraphSection:
    path: str = ""
    template: str = DEFAULT_TEMPLATE
    hops: int = 2


@dataclass
class ModelSection:
    d: int = 64
    depth: int = 2
    n_heads: int = 4
    d_ff: int = 0  # 0 -> 4 * d
    cmd_depth: int = 1
    l_max: int = 128
    token_dim: int = 64
    embed_seed: int = 0
    t2v_activation: str = "gelu"
    attn_bias: bool = True
    scale: str = "per_head"
    qkv_convention: str = "equation"
    per_variable_head: bool = False
    variant: str = "full"


@dataclass
class TrainSection:
    lr: float = 1e-3
    steps: int = 300
    batch_size: int = 16
    patience: int = 5
    eval_every: int = 20
    clip_norm: float = 1.0
    seed: int = 0


SECTIONS = {"data": DataSection, "graph": GraphSection, "model": ModelSection, "train": TrainSection}


def _parse(value: str, default):
    if isinstance(default, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(float(v) for v in value.split(",") if v.strip())
    return value


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)

    # -- (de)serialization ----------------------------------------------------

    def set(self, dotted: str, value: str):
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"unknown config key {dotted!r}")
        obj = getattr(self, section)
        names = {f.name for f in fields(obj)}
        if key not in names:
            raise ConfigError(f"unknown config key {dotted!r}")
        try:
            setattr(obj, key, _parse(value, getattr(type(obj)(), key)))
        except ValueError as exc:
            raise ConfigError(f"{dotted}: {exc}") from None

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, overrides: dict[str, str] | None = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config: {exc}") from None
        cfg = cls()
        for section in cp.sections():
            for key, value in cp[section].items():
                cfg.set(f"{section}.{key}", value)
        for key, value in (overrides or {}).items():
            cfg.set(key, value)
        return cfg

    @classmethod
    def load(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        cfg = cls.from_ini(text, overrides)
        base = Path(path).resolve().parent
        for section in (cfg.data, cfg.graph):
            if section.path and not Path(section.path).is_absolute():
                section.path = str(base / section.path)
        return cfg

    def save(self, path):
        Path(path).write_text(self.to_ini(), encoding="utf-8")

    # -- validation and derived configs -----------------------------------------

    def validate(self, check_files: bool = True) -> "RunConfig":
        d, m, t = self.data, self.model, self.train
        problems = []
        if d.task not in ("forecast", "classify"):
            problems.append(f"data.task must be forecast or classify, got {d.task!r}")
        if d.history < 1:
            problems.append("data.history must be >= 1")
        if d.task == "forecast" and d.horizon < 1:
            problems.append("data.horizon must be >= 1")
        if d.task == "classify" and d.n_classes < 2:
            problems.append("data.n_classes must be >= 2")
        if d.seasonal_period < 1:
            problems.append("data.seasonal_period must be >= 1")
        if not d.splits or abs(sum(d.splits) - 1.0) > 1e-9:
            problems.append("data.splits must sum to 1")
        if self.graph.hops < 0:
            problems.append("graph.hops must be >= 0")
        if "{variable}" not in self.graph.template:
            problems.append("graph.template needs a {variable} placeholder")
        if m.d < 1 or m.n_heads < 1 or m.d % m.n_heads:
            problems.append("model.d must be a positive multiple of model.n_heads")
        if m.depth < 1 or m.cmd_depth < 0 or m.l_max < 1 or m.token_dim < 1 or m.d_ff < 0:
            problems.append("model depth/cmd_depth/l_max/token_dim/d_ff out of range")
        if m.variant not in VARIANTS:
            problems.append(f"model.variant must be one of {VARIANTS}")
        if m.qkv_convention not in ("equation", "prose") or m.scale not in ("per_head", "model"):
            problems.append("model.qkv_convention / model.scale not recognised")
        if m.t2v_activation not in ("gelu", "identity"):
            problems.append("model.t2v_activation must be gelu or identity")
        if t.lr < 0 or t.steps < 1 or t.batch_size < 1 or t.patience < 0 or t.eval_every < 1:
            problems.append("train section out of range")
        if check_files:
            for label, p in (("data.path", d.path), ("graph.path", self.graph.path)):
                if not p or not Path(p).is_file():
                    problems.append(f"{label} {p!r} does not exist")
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def model_config(self, n_vars: int) -> ModelConfig:
        m = self.model
        return ModelConfig(
            n_vars=n_vars, history=self.data.history, horizon=self.data.horizon, task=self.data.task,
            n_classes=self.data.n_classes, d=m.d, depth=m.depth, n_heads=m.n_heads, d_ff=m.d_ff or None,
            cmd_depth=m.cmd_depth, l_max=m.l_max, token_dim=m.token_dim, t2v_activation=m.t2v_activation,
            attn_bias=m.attn_bias, scale=m.scale, qkv_convention=m.qkv_convention,
            per_variable_head=m.per_variable_head, variant=m.variant, seed=self.train.seed,
        )

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(lr=t.lr, steps=t.steps, batch_size=t.batch_size, patience=t.patience,
                           eval_every=t.eval_every, clip_norm=t.clip_norm or None, seed=t.seed)


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        out[key.strip()] = value.strip()
    return out
