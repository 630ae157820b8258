"""Summary graphs with lagged edges and their finite unfoldings.

A :class:`SummaryGraph` describes a stationary multivariate process compactly:
an edge ``(src, dst, lag)`` means ``src`` at time ``t - lag`` is a parent of
``dst`` at time ``t``.  :func:`unfold` materializes the lag window ``[t-L, t]``
and the *dangling* parents that reach further back than ``L``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import networkx as nx
import yaml

from .errors import CyclicInstantaneousGraph, GraphError, SelfEdgeAtLagZero, UnknownNode

__all__ = [
    "LaggedEdge",
    "SummaryGraph",
    "TruncationMode",
    "UnfoldedNode",
    "UnfoldedGraph",
    "validate",
    "unfold",
    "effective_max_lag",
    "topological_order",
    "load_graph",
]


@dataclass(frozen=True, order=True)
class LaggedEdge:
    src: str
    dst: str
    lag: int

    def __post_init__(self):
        if not isinstance(self.lag, int) or isinstance(self.lag, bool):
            raise GraphError(f"edge lag must be an integer, got {self.lag!r}")
        if self.lag < 0:
            raise GraphError(f"edge {self.src}->{self.dst} has negative lag {self.lag}")


@dataclass(frozen=True, order=True)
class UnfoldedNode:
    """A summary node instantiated at time ``t - lag``."""

    node: str
    lag: int

    def __str__(self):
        return f"{self.node}[t-{self.lag}]" if self.lag else f"{self.node}[t]"


class TruncationMode(str, enum.Enum):
    TRUNCATED = "truncated"
    NON_TRUNCATED = "non-truncated"


@dataclass(frozen=True)
class SummaryGraph:
    nodes: tuple[str, ...]
    edges: frozenset[LaggedEdge] = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", frozenset(self.edges))

    @classmethod
    def from_triples(cls, nodes: Iterable[str], triples: Iterable[tuple[str, str, int]]):
        return cls(tuple(nodes), frozenset(LaggedEdge(s, d, int(l)) for s, d, l in triples))

    def parents(self, node: str) -> list[tuple[str, int]]:
        """Parents of ``node`` as sorted ``(src, lag)`` pairs."""
        return sorted((e.src, e.lag) for e in self.edges if e.dst == node)

    def children(self, node: str) -> list[tuple[str, int]]:
        return sorted((e.dst, e.lag) for e in self.edges if e.src == node)

    @property
    def max_lag(self) -> int:
        return max((e.lag for e in self.edges), default=0)

    def to_dict(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": [[e.src, e.dst, e.lag] for e in sorted(self.edges, key=lambda e: (e.dst, e.src, e.lag))],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "SummaryGraph":
        try:
            nodes = [str(n) for n in data["nodes"]]
            triples = [(str(s), str(d), int(l)) for s, d, l in data.get("edges") or []]
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph definition: {exc}") from exc
        return cls.from_triples(nodes, triples)


def load_graph(path: str | Path) -> tuple[SummaryGraph, str | None]:
    """Read a graph definition file; returns the graph and its declared target (if any)."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    graph = SummaryGraph.from_dict(data)
    validate(graph)
    return graph, data.get("target")


def dump_graph(graph: SummaryGraph, path: str | Path, target: str | None = None) -> None:
    data = graph.to_dict()
    if target is not None:
        data = {"target": target, **data}
    with open(path, "w") as fh:
        yaml.safe_dump(data, fh, sort_keys=False, default_flow_style=None)


def validate(graph: SummaryGraph) -> None:
    """Raise if the graph violates any structural invariant; return None otherwise."""
    names = set(graph.nodes)
    if len(names) != len(graph.nodes):
        raise GraphError("duplicate node names")
    if any(not n for n in graph.nodes):
        raise GraphError("node names must be non-empty")
    for e in graph.edges:
        for end in (e.src, e.dst):
            if end not in names:
                raise UnknownNode(f"edge {e.src}->{e.dst} (lag {e.lag}) references unknown node {end!r}")
        if e.src == e.dst and e.lag == 0:
            raise SelfEdgeAtLagZero(f"self-edge on {e.src} requires lag >= 1")
    instantaneous = nx.DiGraph()
    instantaneous.add_nodes_from(graph.nodes)
    instantaneous.add_edges_from((e.src, e.dst) for e in graph.edges if e.lag == 0)
    try:
        cycle = nx.find_cycle(instantaneous)
    except nx.NetworkXNoCycle:
        return None
    raise CyclicInstantaneousGraph([u for u, _ in cycle])


@dataclass(frozen=True)
class UnfoldedGraph:
    summary: SummaryGraph
    target: UnfoldedNode
    max_lag: int
    mode: TruncationMode
    window: tuple[UnfoldedNode, ...]
    dangling: frozenset[UnfoldedNode]
    parents: Mapping[UnfoldedNode, tuple[UnfoldedNode, ...]]

    @property
    def nodes(self) -> list[UnfoldedNode]:
        return list(self.window) + sorted(self.dangling)

    @property
    def edges(self) -> list[tuple[UnfoldedNode, UnfoldedNode]]:
        return [(p, c) for c in self.nodes for p in self.parents[c]]

    def is_dangling(self, node: UnfoldedNode) -> bool:
        return node in self.dangling

    def to_networkx(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def ancestors(self, node: UnfoldedNode) -> set[UnfoldedNode]:
        return nx.ancestors(self.to_networkx(), node)


def unfold(graph: SummaryGraph, target: str, L: int, mode: TruncationMode | str = TruncationMode.TRUNCATED) -> UnfoldedGraph:
    """Unfold ``graph`` over the lag window ``[0, L]`` relative to ``target``."""
    validate(graph)
    mode = TruncationMode(mode)
    if target not in graph.nodes:
        raise UnknownNode(f"target {target!r} is not a graph node")
    if L < 0:
        raise GraphError("L must be nonnegative")

    summary_parents = {n: graph.parents(n) for n in graph.nodes}
    window = tuple(UnfoldedNode(n, l) for l in range(L + 1) for n in graph.nodes)
    parents: dict[UnfoldedNode, tuple[UnfoldedNode, ...]] = {}
    dangling: set[UnfoldedNode] = set()
    for w in window:
        ps = tuple(UnfoldedNode(src, w.lag + k) for src, k in summary_parents[w.node])
        parents[w] = ps
        dangling.update(p for p in ps if p.lag > L)

    for d in dangling:
        if mode is TruncationMode.TRUNCATED:
            parents[d] = ()
        else:
            candidates = (UnfoldedNode(src, d.lag + k) for src, k in summary_parents[d.node])
            parents[d] = tuple(p for p in candidates if p in dangling)

    return UnfoldedGraph(
        summary=graph,
        target=UnfoldedNode(target, 0),
        max_lag=L,
        mode=mode,
        window=window,
        dangling=frozenset(dangling),
        parents=parents,
    )


def effective_max_lag(unfolded: UnfoldedGraph, node: str) -> int:
    if node not in unfolded.summary.nodes:
        raise UnknownNode(f"{node!r} is not part of the unfolded graph")
    lag = unfolded.max_lag
    if unfolded.mode is TruncationMode.NON_TRUNCATED:
        lag = max([lag] + [d.lag for d in unfolded.dangling if d.node == node])
    return lag


def topological_order(unfolded: UnfoldedGraph) -> list[UnfoldedNode]:
    """Parents-first ordering; ties go to the larger lag, then the node name."""
    return list(nx.lexicographical_topological_sort(unfolded.to_networkx(), key=lambda n: (-n.lag, n.node)))
