"""Residual peak attributions over a linearized dependency tree.

The rise of every node during the build-up of a peak is converted into
target units by the product of edge coefficients along its path to the
target.  A node keeps whatever part of its rise its parents do not explain.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import InsufficientData, MissingColumn, NoOvershootFound, NotATree, UnknownNode, ZeroVariance
from .graph import SummaryGraph

EXCLUDED = ("SOC", "BC", "DT")


@dataclass(frozen=True)
class LinearTree:
    edges: Mapping[tuple[str, str], float]  # (parent, child) -> coefficient
    target: str
    limit: float = 1500.0
    _child: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        child: dict[str, str] = {}
        for (p, c) in self.edges:
            if p == c:
                raise NotATree(f"self edge at {p}")
            if p in child:
                raise NotATree(f"{p} has more than one child ({child[p]}, {c})")
            child[p] = c
        if self.target in child:
            raise NotATree("the target must be the root of the tree")
        for node in child:
            seen = {node}
            cur = node
            while cur != self.target:
                if cur not in child:
                    raise NotATree(f"{node} has no path to {self.target}")
                cur = child[cur]
                if cur in seen:
                    raise NotATree(f"cycle through {cur}")
                seen.add(cur)
        object.__setattr__(self, "_child", child)

    @property
    def nodes(self) -> list[str]:
        return sorted({self.target, *self._child})

    def parents(self, node: str) -> list[str]:
        return sorted(p for (p, c) in self.edges if c == node)

    def path(self, node: str) -> list[str]:
        if node not in self._child and node != self.target:
            raise UnknownNode(f"{node} is not in the tree")
        out = [node]
        while out[-1] != self.target:
            out.append(self._child[out[-1]])
        return out

    def path_weight(self, node: str) -> float:
        p = self.path(node)
        return float(np.prod([self.edges[(a, b)] for a, b in zip(p[:-1], p[1:])])) if len(p) > 1 else 1.0

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "limit": self.limit,
            "edges": [[p, c, float(w)] for (p, c), w in sorted(self.edges.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LinearTree":
        return cls({(p, c): float(w) for p, c, w in d["edges"]}, d["target"], float(d.get("limit", 1500.0)))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "LinearTree":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def tree_edges(graph: SummaryGraph, exclude: Iterable[str] = EXCLUDED) -> list[tuple[str, str]]:
    """Instantaneous edges among the nodes that remain after dropping ``exclude``."""
    drop = set(exclude)
    return sorted({(e.src, e.dst) for e in graph.edges if e.lag == 0 and e.src not in drop and e.dst not in drop})


def _slope(x: np.ndarray, y: np.ndarray, name: str) -> float:
    if np.ptp(x) == 0:
        raise ZeroVariance(f"column {name} is constant")
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def fit_tree_coefficients(
    training, graph: SummaryGraph, target: str, limit: float = 1500.0, exclude: Iterable[str] = EXCLUDED
) -> LinearTree:
    frames = [training] if isinstance(training, pd.DataFrame) else [getattr(t, "frame", t) for t in (training if isinstance(training, (list, tuple)) else [training])]
    frames = [getattr(f, "frame", f) for f in frames]
    edges = tree_edges(graph, exclude)
    coef: dict[tuple[str, str], float] = {}
    for p, c in edges:
        if c == target:
            coef[(p, c)] = 1.0
            continue
        for name in (p, c):
            if any(name not in f.columns for f in frames):
                raise MissingColumn(f"training data has no column {name!r}")
        x = np.concatenate([f[p].to_numpy(dtype=np.float64) for f in frames])
        y = np.concatenate([f[c].to_numpy(dtype=np.float64) for f in frames])
        if len(x) < 3:
            raise InsufficientData(f"too few rows to regress {c} on {p}")
        coef[(p, c)] = _slope(x, y, p)
    return LinearTree(coef, target, limit)


def first_overshoot_lag(x: np.ndarray, t: int, limit: float) -> int:
    """Smallest ``s >= 0`` with ``x[t-s] > limit >= x[t-s-1]``."""
    if not x[t] > limit:
        raise NoOvershootFound(f"value at {t} does not exceed the limit")
    s = 0
    while t - s - 1 >= 0:
        if x[t - s] > limit >= x[t - s - 1]:
            return s
        s += 1
    raise NoOvershootFound(f"no crossing of {limit} before row {t}")


def heuristic_attributions(tree: LinearTree, frame, t: int, reference: str = "overshoot") -> dict[str, float]:
    """Residual attributions for a peak at row ``t`` of ``frame``.

    ``reference="overshoot"`` measures increases from the first overshoot
    sample; ``"pre-overshoot"`` from the sample just before it.
    """
    frame = getattr(frame, "frame", frame)
    x = frame[tree.target].to_numpy(dtype=np.float64)
    s = first_overshoot_lag(x, t, tree.limit)
    if reference == "pre-overshoot":
        s += 1
    elif reference != "overshoot":
        raise ValueError(f"unknown reference {reference!r}")
    delta = {}
    for node in tree.nodes:
        if node not in frame.columns:
            raise MissingColumn(f"frame has no column {node!r}")
        col = frame[node].to_numpy(dtype=np.float64)
        delta[node] = (col[t] - col[t - s]) * tree.path_weight(node)
    return {node: delta[node] - sum(delta[p] for p in tree.parents(node)) for node in tree.nodes}
