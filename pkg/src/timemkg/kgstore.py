"""Multivariate knowledge graph: variable nodes, typed directed edges, hybrid retrieval and prompts."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import BadTemplate, ParseError, UnknownNode
from .promptembed import PromptRecord

PROVENANCES = ("description", "domain-knowledge", "expert-experience", "external-extractor")
DEFAULT_TEMPLATE = "Describe the variable [{variable}] and its causal relations."


@dataclass
class VariableNode:
    id: str
    description: str = ""
    tags: set[str] = field(default_factory=set)

    def __post_init__(self):
        if not self.id:
            raise ValueError("variable id must be nonempty")
        self.tags = set(self.tags)


@dataclass(frozen=True)
class Triplet:
    head: str
    relation: str
    tail: str
    provenance: str = "external-extractor"
    reflexive: bool = False

    def __post_init__(self):
        if not self.head or not self.tail or not self.relation:
            raise ValueError("triplet fields must be nonempty")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.head == self.tail and not self.reflexive:
            raise ValueError(f"self-loop ({self.head}, {self.relation}) needs reflexive=True")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation, self.tail)

    @property
    def sort_key(self) -> tuple[str, str, str]:
        return (self.relation, self.head, self.tail)

    def render(self) -> str:
        return f"[{self.head}] -> {self.relation} -> [{self.tail}]"


@dataclass
class Subgraph:
    center: str
    triplets: list[Triplet]

    def __len__(self):
        return len(self.triplets)

    def keys(self) -> list[tuple[str, str, str]]:
        return [t.key for t in self.triplets]


class Mkg:
    """Directed multigraph over variables. Duplicate (head, relation, tail) edges collapse to one."""

    def __init__(self, auto_create: bool = True):
        self.nodes: dict[str, VariableNode] = {}
        self._edges: dict[tuple[str, str, str], Triplet] = {}
        self.auto_create = auto_create

    @property
    def edges(self) -> list[Triplet]:
        return list(self._edges.values())

    @property
    def relation_vocab(self) -> set[str]:
        return {t.relation for t in self._edges.values()}

    def __len__(self):
        return len(self._edges)

    def __contains__(self, node_id):
        return node_id in self.nodes

    def node(self, node_id: str) -> VariableNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown variable {node_id!r}") from None

    def add_node(self, node_id: str, description: str = "", tags: Iterable[str] = ()) -> VariableNode:
        node = self.nodes.get(node_id)
        if node is None:
            node = self.nodes[node_id] = VariableNode(node_id, description, set(tags))
        else:
            node.tags |= set(tags)
            if description and not node.description:
                node.description = description
        return node

    def add_triplet(self, t: Triplet) -> "Mkg":
        for end in (t.head, t.tail):
            if end not in self.nodes:
                if not self.auto_create:
                    raise UnknownNode(f"triplet endpoint {end!r} is not a node")
                self.add_node(end)
        self._edges.setdefault(t.key, t)
        return self

    def incident(self, v: str) -> list[Triplet]:
        return [t for t in self._edges.values() if v in (t.head, t.tail)]

    def hop_distances(self, v: str, max_hops: int) -> dict[str, int]:
        """Undirected BFS distances from ``v`` up to ``max_hops``."""
        adj: dict[str, set[str]] = {n: set() for n in self.nodes}
        for t in self._edges.values():
            adj[t.head].add(t.tail)
            adj[t.tail].add(t.head)
        dist = {v: 0}
        queue = deque([v])
        while queue:
            u = queue.popleft()
            if dist[u] >= max_hops:
                continue
            for w in sorted(adj[u]):
                if w not in dist:
                    dist[w] = dist[u] + 1
                    queue.append(w)
        return dist

    def copy(self) -> "Mkg":
        g = Mkg(self.auto_create)
        for n in self.nodes.values():
            g.add_node(n.id, n.description, n.tags)
        for t in self._edges.values():
            g.add_triplet(t)
        return g


def _sorted(triplets: Iterable[Triplet]) -> list[Triplet]:
    return sorted(triplets, key=lambda t: t.sort_key)


def retrieve_local(g: Mkg, v: str) -> Subgraph:
    """Triplets with ``v`` as head or tail, sorted by (relation, head, tail)."""
    g.node(v)
    return Subgraph(v, _sorted(g.incident(v)))


def retrieve_global(g: Mkg, v: str, k: int = 2) -> Subgraph:
    """Neighbourhood and grouping retrieval around ``v``.

    Returns the union of: the incident triplets, every triplet reachable by a
    walk of at most ``k`` edges from ``v`` (an endpoint lies within ``k - 1``
    hops), and every triplet whose head or tail shares a tag with ``v``.
    """
    center = g.node(v)
    found = {t.key: t for t in g.incident(v)}
    if k >= 1:
        dist = g.hop_distances(v, k - 1)
        for t in g.edges:
            if t.head in dist or t.tail in dist:
                found.setdefault(t.key, t)
    if center.tags:
        for t in g.edges:
            if center.tags & g.nodes[t.head].tags or center.tags & g.nodes[t.tail].tags:
                found.setdefault(t.key, t)
    return Subgraph(v, _sorted(found.values()))


def hybrid_retrieve(g: Mkg, v: str, k: int = 2) -> tuple[Subgraph, Subgraph]:
    """(local, global-only) triplet groups, each sorted; no triplet appears in both."""
    local = retrieve_local(g, v)
    seen = set(local.keys())
    glob = retrieve_global(g, v, k)
    return local, Subgraph(v, [t for t in glob.triplets if t.key not in seen])


def query_line(template: str, v: str) -> str:
    if "{variable}" not in template:
        raise BadTemplate("query template must contain a {variable} placeholder")
    return template.replace("{variable}", v)


def assemble_prompt(g: Mkg, v: str, query_template: str = DEFAULT_TEMPLATE, k: int = 2,
                    with_triplets: bool = True) -> PromptRecord:
    """Query line followed by one rendered triplet per line, local group first."""
    query = query_line(query_template, v)
    g.node(v)
    lines = [query]
    if with_triplets:
        local, global_only = hybrid_retrieve(g, v, k)
        lines += [t.render() for t in local.triplets]
        lines += [t.render() for t in global_only.triplets]
    return PromptRecord(v, "\n".join(lines))


# ----------------------------------------------------------------------------
# JSON Lines persistence


def _record(t: Triplet, g: Mkg) -> dict:
    return {
        "head": t.head,
        "relation": t.relation,
        "tail": t.tail,
        "tags_head": sorted(g.nodes[t.head].tags),
        "tags_tail": sorted(g.nodes[t.tail].tags),
        "provenance": t.provenance,
    }


def dumps_mkg(g: Mkg) -> str:
    lines = []
    covered = set()
    for t in _sorted(g.edges):
        rec = _record(t, g)
        if t.reflexive:
            rec["reflexive"] = True
        lines.append(json.dumps(rec, ensure_ascii=False, sort_keys=True))
        covered |= {t.head, t.tail}
    # nodes not reachable through an edge record, or carrying a description
    for node_id in sorted(g.nodes):
        node = g.nodes[node_id]
        if node_id not in covered or node.description:
            rec = {"node": node_id, "tags": sorted(node.tags)}
            if node.description:
                rec["description"] = node.description
            lines.append(json.dumps(rec, ensure_ascii=False, sort_keys=True))
    return "".join(line + "\n" for line in lines)


def save_mkg(g: Mkg, path):
    Path(path).write_text(dumps_mkg(g), encoding="utf-8", newline="\n")


def _tag_list(rec: dict, key: str, lineno: int) -> list[str]:
    tags = rec.get(key, [])
    if not isinstance(tags, list) or not all(isinstance(x, str) for x in tags):
        raise ParseError(f"{key!r} must be a list of strings", lineno)
    return tags


def loads_mkg(text: str, auto_create: bool = True) -> Mkg:
    g = Mkg(auto_create=True)
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        try:
            rec = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
        if not isinstance(rec, dict):
            raise ParseError("record must be a JSON object", lineno)
        if "node" in rec:
            if not isinstance(rec["node"], str) or not rec["node"]:
                raise ParseError("'node' must be a nonempty string", lineno)
            g.add_node(rec["node"], rec.get("description", ""), _tag_list(rec, "tags", lineno))
            continue
        missing = [f for f in ("head", "relation", "tail") if not isinstance(rec.get(f), str) or not rec.get(f)]
        if missing:
            raise ParseError(f"missing or empty field(s) {missing}", lineno)
        try:
            t = Triplet(rec["head"], rec["relation"], rec["tail"],
                        rec.get("provenance", "external-extractor"), bool(rec.get("reflexive", False)))
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        g.add_node(t.head, tags=_tag_list(rec, "tags_head", lineno))
        g.add_node(t.tail, tags=_tag_list(rec, "tags_tail", lineno))
        g.add_triplet(t)
    g.auto_create = auto_create
    return g


def load_mkg(path, auto_create: bool = True) -> Mkg:
    return loads_mkg(Path(path).read_text(encoding="utf-8"), auto_create)
