"""Linear lagged structural processes with a known causal graph.

    x_j(t) = sum_{i -> j} c_ij * x_i(t - lag_ij) + A_j sin(2 pi t / P_j + phi_j) + noise_j(t)

The generator also returns the true graph as an :class:`~timemkg.kgstore.Mkg`
so the prompt branch can be fed a correct prior.
"""
from __future__ import annotations

import graphlib
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import BadSpec
from ..kgstore import Mkg, Triplet


@dataclass
class SyntheticVariable:
    name: str
    tags: list[str] = field(default_factory=list)
    description: str = ""
    period: float | None = None
    amplitude: float = 0.0
    phase: float = 0.0
    noise: float | None = None  # overrides the spec-wide level


@dataclass
class SyntheticEdge:
    head: str
    tail: str
    lag: int = 1
    coef: float = 0.5
    relation: str = "drives"


@dataclass
class SyntheticSpec:
    variables: list[SyntheticVariable]
    edges: list[SyntheticEdge] = field(default_factory=list)
    length: int = 500
    noise: float = 0.1
    seed: int = 0
    burn_in: int = 64

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        try:
            return cls(
                variables=[SyntheticVariable(**v) for v in d["variables"]],
                edges=[SyntheticEdge(**e) for e in d.get("edges", [])],
                **{k: d[k] for k in ("length", "noise", "seed", "burn_in") if k in d},
            )
        except (KeyError, TypeError) as exc:
            raise BadSpec(f"malformed synthetic spec: {exc}") from None

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.variables]


@dataclass
class SyntheticData:
    names: list[str]
    series: np.ndarray  # (length, N)
    graph: Mkg


def _validate(spec: SyntheticSpec) -> list[str]:
    names = spec.names
    if not names or len(set(names)) != len(names):
        raise BadSpec("variable names must be unique and nonempty")
    if spec.length < 1 or spec.burn_in < 0:
        raise BadSpec("length must be >= 1 and burn_in >= 0")
    known = set(names)
    ts = graphlib.TopologicalSorter({n: set() for n in names})
    for e in spec.edges:
        if e.head not in known or e.tail not in known:
            raise BadSpec(f"edge {e.head}->{e.tail} references an unknown variable")
        if e.lag < 0:
            raise BadSpec(f"edge {e.head}->{e.tail} has negative lag")
        if e.lag == 0:
            if e.head == e.tail:
                raise BadSpec(f"zero-lag self dependency on {e.head}")
            ts.add(e.tail, e.head)
    max_lag = max((e.lag for e in spec.edges), default=0)
    if spec.burn_in < max_lag:
        raise BadSpec(f"burn_in {spec.burn_in} shorter than the largest lag {max_lag}")
    try:
        return list(ts.static_order())
    except graphlib.CycleError as exc:
        raise BadSpec(f"cyclic zero-lag dependency: {exc.args[1]}") from None


def gen_synthetic(spec: SyntheticSpec) -> SyntheticData:
    order = _validate(spec)
    names = spec.names
    col = {n: i for i, n in enumerate(names)}
    total = spec.length + spec.burn_in
    rng = np.random.default_rng(spec.seed)
    n = len(names)
    levels = np.array([spec.noise if v.noise is None else v.noise for v in spec.variables])
    noise = rng.standard_normal((total, n)) * levels
    t = np.arange(total) - spec.burn_in
    x = noise.copy()
    for v in spec.variables:
        if v.period and v.amplitude:
            x[:, col[v.name]] += v.amplitude * np.sin(2.0 * np.pi * t / v.period + v.phase)
    incoming: dict[str, list[SyntheticEdge]] = {nm: [] for nm in names}
    for e in spec.edges:
        incoming[e.tail].append(e)
    start = max((e.lag for e in spec.edges), default=0)
    for step in range(start, total):
        for name in order:
            j = col[name]
            for e in incoming[name]:
                x[step, j] += e.coef * x[step - e.lag, col[e.head]]
    if not np.all(np.isfinite(x)):
        raise BadSpec("process diverged; reduce edge coefficients")
    return SyntheticData(names, x[spec.burn_in:], truth_graph(spec))


def truth_graph(spec: SyntheticSpec) -> Mkg:
    g = Mkg()
    for v in spec.variables:
        g.add_node(v.name, v.description, v.tags)
    for e in spec.edges:
        g.add_triplet(Triplet(e.head, e.relation, e.tail, "domain-knowledge", reflexive=e.head == e.tail))
    return g


def gen_synthetic_classification(class_specs: list[SyntheticSpec], per_class: int, seed: int = 0):
    """Labelled samples, one independent run per sample; class ``k`` follows ``class_specs[k]``.

    Samples are interleaved by class so chronological splits stay balanced.
    :return: (names, samples (M, length, N), labels (M,))
    """
    if len(class_specs) < 2:
        raise BadSpec("need at least two class specs")
    names = class_specs[0].names
    if any(s.names != names for s in class_specs):
        raise BadSpec("class specs must share the variable list")
    samples, labels = [], []
    rng = np.random.default_rng(seed)
    for i in range(per_class):
        for k, base in enumerate(class_specs):
            run = SyntheticSpec(base.variables, base.edges, base.length, base.noise,
                                int(rng.integers(2 ** 31)), base.burn_in)
            samples.append(gen_synthetic(run).series)
            labels.append(k)
    return names, np.stack(samples), np.array(labels)


def default_spec(seed: int = 0, length: int = 480, noise: float = 0.3) -> SyntheticSpec:
    """A small transformer-like system: two loads drive oil temperature, ambient is a distractor."""
    variables = [
        SyntheticVariable("HULL", ["load"], "high useful load", period=24, amplitude=1.0),
        SyntheticVariable("MULL", ["load"], "middle useful load", period=12, amplitude=0.8, phase=1.0),
        SyntheticVariable("AMB", ["weather"], "ambient temperature", period=48, amplitude=0.7, phase=0.5),
        SyntheticVariable("RES", ["grid"], "residual grid noise"),
        SyntheticVariable("OT", ["temperature"], "oil temperature"),
    ]
    edges = [
        SyntheticEdge("HULL", "OT", lag=3, coef=0.8, relation="heats"),
        SyntheticEdge("MULL", "OT", lag=5, coef=0.6, relation="heats"),
        SyntheticEdge("OT", "OT", lag=1, coef=0.3, relation="persists"),
    ]
    return SyntheticSpec(variables, edges, length=length, noise=noise, seed=seed)
