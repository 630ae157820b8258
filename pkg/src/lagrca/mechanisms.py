"""Functional causal models and noise models for unfolded graphs.

Every attributable node ``X = f(parents) + N`` is additive in its noise, so the
noise realization behind an observation is recovered by subtraction.  Nodes
with a known control law (the battery controller) consume no noise at all.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import (
    FitError,
    InsufficientData,
    MissingColumn,
    MissingDanglingValue,
    MissingNoise,
    MissingParentValue,
    NotInvertible,
)
from .graph import SummaryGraph, TruncationMode, UnfoldedGraph, UnfoldedNode, topological_order, unfold
from .plant.controller import control_from_dict

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAX_RESIDUALS = 20_000
MIN_EMPIRICAL = 30
RIDGE = 1e-6


class MechanismKind(str, enum.Enum):
    ROOT = "root"
    LINEAR = "linear-additive"
    DETERMINISTIC = "known-deterministic"


class NoiseKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    EMPIRICAL = "empirical"


@dataclass(frozen=True, eq=False)
class NoiseModel:
    kind: NoiseKind
    mean: float = 0.0
    std: float = 1.0
    residuals: np.ndarray | None = None

    def __post_init__(self):
        if self.kind is NoiseKind.GAUSSIAN and not self.std > 0:
            raise FitError("gaussian noise needs a positive standard deviation")
        if self.kind is NoiseKind.EMPIRICAL:
            if self.residuals is None or len(self.residuals) < MIN_EMPIRICAL:
                raise FitError(f"empirical noise needs at least {MIN_EMPIRICAL} residuals")
            res = np.ascontiguousarray(self.residuals, dtype=np.float64)
            res.setflags(write=False)
            object.__setattr__(self, "residuals", res)

    @classmethod
    def gaussian(cls, mean: float, std: float) -> "NoiseModel":
        return cls(NoiseKind.GAUSSIAN, float(mean), float(std))

    @classmethod
    def empirical(cls, residuals, rng: np.random.Generator | None = None, max_size: int = MAX_RESIDUALS):
        res = np.asarray(residuals, dtype=np.float64)
        if len(res) > max_size:
            rng = rng if rng is not None else np.random.default_rng(0)
            res = res[np.sort(rng.choice(len(res), size=max_size, replace=False))]
        return cls(NoiseKind.EMPIRICAL, float(res.mean()) if len(res) else 0.0, float(res.std()) if len(res) else 0.0, res)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if self.kind is NoiseKind.GAUSSIAN:
            return rng.normal(self.mean, self.std, size=size)
        idx = rng.integers(0, len(self.residuals), size=size)
        return self.residuals[idx]

    def quantiles(self, qs: Sequence[float]) -> np.ndarray:
        if self.kind is NoiseKind.GAUSSIAN:
            from statistics import NormalDist

            dist = NormalDist(self.mean, self.std)
            return np.array([dist.inv_cdf(q) for q in qs])
        return np.quantile(self.residuals, qs)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value, "mean": self.mean, "std": self.std}
        if self.kind is NoiseKind.EMPIRICAL:
            out["residuals"] = self.residuals.tolist()
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "NoiseModel":
        kind = NoiseKind(data["kind"])
        if kind is NoiseKind.GAUSSIAN:
            return cls.gaussian(data["mean"], data["std"])
        return cls(kind, data["mean"], data["std"], np.asarray(data["residuals"], dtype=np.float64))


@dataclass(frozen=True, eq=False)
class Mechanism:
    """A structural assignment with parents given as ``(node, relative lag)``."""

    kind: MechanismKind
    parents: tuple[tuple[str, int], ...] = ()
    coefficients: np.ndarray = field(default_factory=lambda: np.zeros(0))
    intercept: float = 0.0
    control: Any = None

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple((str(n), int(k)) for n, k in self.parents))
        coef = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if self.kind is MechanismKind.LINEAR and len(coef) != len(self.parents):
            raise FitError("linear mechanism needs exactly one coefficient per parent")
        if self.kind is MechanismKind.ROOT and self.parents:
            raise FitError("root mechanism cannot have parents")
        if self.kind is MechanismKind.DETERMINISTIC and self.control is None:
            raise FitError("known-deterministic mechanism needs a control function")
        coef.setflags(write=False)
        object.__setattr__(self, "coefficients", coef)

    @property
    def consumes_noise(self) -> bool:
        return self.kind is not MechanismKind.DETERMINISTIC

    def deterministic_part(self, values: Mapping[tuple[str, int], Any]):
        try:
            if self.kind is MechanismKind.DETERMINISTIC:
                return self.control({k: values[k] for k in self.control.inputs})
            out = self.intercept
            for (p, w) in zip(self.parents, self.coefficients):
                out = out + w * values[p]
            return out
        except KeyError as exc:
            raise MissingParentValue(f"missing parent value {exc.args[0]}") from None

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind.value, "parents": [list(p) for p in self.parents]}
        if self.kind is MechanismKind.DETERMINISTIC:
            out["control"] = self.control.to_dict()
        else:
            out["coefficients"] = self.coefficients.tolist()
            out["intercept"] = self.intercept
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "Mechanism":
        kind = MechanismKind(data["kind"])
        parents = tuple((p[0], int(p[1])) for p in data.get("parents", []))
        if kind is MechanismKind.DETERMINISTIC:
            return cls(kind, parents, control=control_from_dict(data["control"]))
        return cls(kind, parents, np.asarray(data.get("coefficients", []), dtype=np.float64), float(data["intercept"]))


@dataclass(frozen=True)
class MechanismPolicy:
    """How mechanisms are assigned when fitting.

    ``known`` maps summary-node names to control functions that replace any
    regression.  ``per_lag`` fits a separate mechanism for every lag instead of
    sharing one per summary node.
    """

    known: Mapping[str, Any] = field(default_factory=dict)
    noise: NoiseKind = NoiseKind.EMPIRICAL
    per_lag: bool = False
    max_residuals: int = MAX_RESIDUALS
    ridge: float = RIDGE
    seed: int = 0


@dataclass
class TrainingInfo:
    n_rows: int
    residual_variance: dict[str, float]
    ridge_fallback: list[str]
    target_mean: float
    target_std: float


@dataclass(eq=False)
class FittedSCM:
    unfolded: UnfoldedGraph
    mechanisms: dict[UnfoldedNode, Mechanism]
    noise: dict[UnfoldedNode, NoiseModel]
    training: TrainingInfo
    policy_per_lag: bool = False
    _order: list[UnfoldedNode] | None = field(default=None, repr=False)

    @property
    def target(self) -> UnfoldedNode:
        return self.unfolded.target

    @property
    def mode(self) -> TruncationMode:
        return self.unfolded.mode

    @property
    def order(self) -> list[UnfoldedNode]:
        if self._order is None:
            self._order = topological_order(self.unfolded)
        return self._order

    @property
    def attributable(self) -> list[UnfoldedNode]:
        """The index set U: nodes whose noise can be re-randomized, in topological order."""
        return [n for n in self.order if n in self.noise]

    def mechanism_parents(self, node: UnfoldedNode) -> list[UnfoldedNode]:
        mech = self.mechanisms[node]
        if mech.kind is MechanismKind.DETERMINISTIC:
            return [UnfoldedNode(p, node.lag + k) for p, k in mech.control.inputs]
        return [UnfoldedNode(p, node.lag + k) for p, k in mech.parents]

    def is_fixed(self, node: UnfoldedNode) -> bool:
        """Nodes without a mechanism are conditioned on their observed values."""
        return node not in self.mechanisms

    def to_dict(self) -> dict:
        mech_ids: dict[int, int] = {}
        mech_table: list[dict] = []
        noise_ids: dict[int, int] = {}
        noise_table: list[dict] = []

        def intern(obj, ids, table):
            if id(obj) not in ids:
                ids[id(obj)] = len(table)
                table.append(obj.to_dict())
            return ids[id(obj)]

        nodes = []
        for n in self.unfolded.nodes:
            entry: dict[str, Any] = {"node": n.node, "lag": n.lag}
            if n in self.mechanisms:
                entry["mechanism"] = intern(self.mechanisms[n], mech_ids, mech_table)
            if n in self.noise:
                entry["noise"] = intern(self.noise[n], noise_ids, noise_table)
            nodes.append(entry)
        t = self.training
        return {
            "format": "lagrca-fitted-scm",
            "version": FORMAT_VERSION,
            "graph": self.unfolded.summary.to_dict(),
            "target": self.target.node,
            "max_lag": self.unfolded.max_lag,
            "mode": self.mode.value,
            "per_lag": self.policy_per_lag,
            "training": {
                "n_rows": t.n_rows,
                "residual_variance": t.residual_variance,
                "ridge_fallback": t.ridge_fallback,
                "target_mean": t.target_mean,
                "target_std": t.target_std,
            },
            "mechanisms": mech_table,
            "noise_models": noise_table,
            "nodes": nodes,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "FittedSCM":
        if data.get("format") != "lagrca-fitted-scm" or data.get("version") != FORMAT_VERSION:
            raise FitError("unsupported fitted-model file")
        graph = SummaryGraph.from_dict(data["graph"])
        unfolded = unfold(graph, data["target"], int(data["max_lag"]), data["mode"])
        mechs = [Mechanism.from_dict(m) for m in data["mechanisms"]]
        noises = [NoiseModel.from_dict(m) for m in data["noise_models"]]
        mechanisms, noise = {}, {}
        for entry in data["nodes"]:
            node = UnfoldedNode(entry["node"], int(entry["lag"]))
            if "mechanism" in entry:
                mechanisms[node] = mechs[entry["mechanism"]]
            if "noise" in entry:
                noise[node] = noises[entry["noise"]]
        t = data["training"]
        info = TrainingInfo(t["n_rows"], dict(t["residual_variance"]), list(t["ridge_fallback"]), t["target_mean"], t["target_std"])
        return cls(unfolded, mechanisms, noise, info, bool(data.get("per_lag", False)))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "FittedSCM":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_frames(training) -> list[pd.DataFrame]:
    if isinstance(training, pd.DataFrame):
        return [training]
    if hasattr(training, "frame"):
        return [training.frame]
    frames = []
    for item in training:
        frames.extend(_as_frames(item))
    return frames


def _lstsq(X: np.ndarray, y: np.ndarray, ridge: float) -> tuple[np.ndarray, bool]:
    """OLS with intercept in the last column; falls back to ridge on rank deficiency."""
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank >= X.shape[1]:
        return coef, False
    gram = X.T @ X
    scale = max(np.trace(gram) / gram.shape[0], 1.0)
    coef = np.linalg.solve(gram + ridge * scale * np.eye(gram.shape[0]), X.T @ y)
    return coef, True


class _Fitter:
    def __init__(self, frames: list[pd.DataFrame], policy: MechanismPolicy):
        self.frames = frames
        self.policy = policy
        self.rng = np.random.default_rng(policy.seed)
        self.cache: dict[tuple, tuple[Mechanism, NoiseModel | None]] = {}
        self.residual_variance: dict[str, float] = {}
        self.ridge_fallback: list[str] = []

    def columns(self, name: str) -> list[np.ndarray]:
        try:
            return [f[name].to_numpy(dtype=np.float64) for f in self.frames]
        except KeyError:
            raise MissingColumn(f"training data has no column {name!r}") from None

    def fit(self, node: str, parents: tuple[tuple[str, int], ...], offset: int = 0, label: str | None = None):
        key = (node, parents, offset)
        if key in self.cache:
            return self.cache[key]
        label = label or node
        if node in self.policy.known:
            control = self.policy.known[node]
            result = (Mechanism(MechanismKind.DETERMINISTIC, control.inputs, control=control), None)
            self.cache[key] = result
            return result

        start = max([k for _, k in parents], default=0) + offset
        ys, xs = [], []
        for i, y in enumerate(self.columns(node)):
            if len(y) <= start:
                continue
            ys.append(y[start:])
            cols = [self.columns(p)[i][start - k : len(y) - k] for p, k in parents]
            cols.append(np.ones(len(y) - start))
            xs.append(np.column_stack(cols))
        if not ys:
            raise InsufficientData(f"no usable rows to fit {label}")
        y = np.concatenate(ys)
        X = np.vstack(xs)
        coef, ridged = _lstsq(X, y, self.policy.ridge)
        if ridged:
            log.warning("singular regression for %s; used ridge fallback", label)
            self.ridge_fallback.append(label)
        resid = y - X @ coef
        if parents:
            mech = Mechanism(MechanismKind.LINEAR, parents, coef[:-1], float(coef[-1]))
        else:
            mech = Mechanism(MechanismKind.ROOT, (), np.zeros(0), float(coef[-1]))
        if self.policy.noise is NoiseKind.GAUSSIAN:
            noise = NoiseModel.gaussian(0.0, max(float(resid.std()), 1e-12))
        else:
            noise = NoiseModel.empirical(resid, self.rng, self.policy.max_residuals)
        self.residual_variance[label] = float(resid.var())
        self.cache[key] = (mech, noise)
        return mech, noise


def fit(unfolded: UnfoldedGraph, training, policy: MechanismPolicy | None = None, target_column: str | None = None) -> FittedSCM:
    """Fit mechanisms and noise models for every node of ``unfolded``.

    ``training`` is a DataFrame, a trace object with a ``frame`` attribute, or
    a list of either; lags never straddle two separate training series.
    """
    policy = policy or MechanismPolicy()
    frames = _as_frames(training)
    summary = unfolded.summary
    for name in summary.nodes:
        for f in frames:
            if name not in f.columns:
                raise MissingColumn(f"training data has no column {name!r}")
    needed = max(n.lag for n in unfolded.nodes) + 100
    n_rows = sum(len(f) for f in frames)
    if not frames or max(len(f) for f in frames) < needed:
        raise InsufficientData(f"training series need at least {needed} rows")

    fitter = _Fitter(frames, policy)
    mechanisms: dict[UnfoldedNode, Mechanism] = {}
    noise: dict[UnfoldedNode, NoiseModel] = {}
    for w in unfolded.window:
        parents = tuple(summary.parents(w.node))
        offset = w.lag if policy.per_lag else 0
        label = f"{w.node}@{w.lag}" if policy.per_lag else w.node
        mech, nm = fitter.fit(w.node, parents, offset, label)
        mechanisms[w] = mech
        if nm is not None:
            noise[w] = nm

    if unfolded.mode is TruncationMode.NON_TRUNCATED:
        for d in sorted(unfolded.dangling):
            if d.node in policy.known:
                continue  # known control laws cannot be refit on a partial parent set
            parents = tuple(sorted((p.node, p.lag - d.lag) for p in unfolded.parents[d]))
            label = f"{d.node}@{d.lag}~" + ",".join(f"{p}{k}" for p, k in parents)
            mech, nm = fitter.fit(d.node, parents, d.lag if policy.per_lag else 0, label)
            mechanisms[d] = mech
            noise[d] = nm

    target = unfolded.target.node
    tcol = np.concatenate(fitter.columns(target_column or target))
    info = TrainingInfo(
        n_rows=n_rows,
        residual_variance=fitter.residual_variance,
        ridge_fallback=fitter.ridge_fallback,
        target_mean=float(tcol.mean()),
        target_std=float(tcol.std()),
    )
    return FittedSCM(unfolded, mechanisms, noise, info, policy.per_lag)


def _relative_values(scm: FittedSCM, node: UnfoldedNode, parent_values) -> dict[tuple[str, int], Any]:
    parents = scm.mechanism_parents(node)
    if isinstance(parent_values, Mapping):
        out = {}
        for p in parents:
            if p not in parent_values:
                raise MissingParentValue(f"no value for parent {p} of {node}")
            out[(p.node, p.lag - node.lag)] = parent_values[p]
        return out
    values = list(parent_values)
    if len(values) != len(parents):
        raise MissingParentValue(f"{node} needs {len(parents)} parent values, got {len(values)}")
    return {(p.node, p.lag - node.lag): v for p, v in zip(parents, values)}


def evaluate(scm: FittedSCM, node: UnfoldedNode, parent_values, noise_value=0.0):
    """Value of ``node`` given its parents' values and its noise realization.

    ``parent_values`` is a mapping keyed by :class:`UnfoldedNode` or a sequence
    ordered like :meth:`FittedSCM.mechanism_parents`.
    """
    mech = scm.mechanisms[node]
    base = mech.deterministic_part(_relative_values(scm, node, parent_values))
    if mech.kind is MechanismKind.DETERMINISTIC:
        return base
    return base + noise_value


def invert_noise(scm: FittedSCM, node: UnfoldedNode, parent_values, observed_value):
    mech = scm.mechanisms.get(node)
    if mech is None or not mech.consumes_noise:
        raise NotInvertible(f"{node} has no noise to recover")
    return observed_value - mech.deterministic_part(_relative_values(scm, node, parent_values))


def sample_noise(scm: FittedSCM, node: UnfoldedNode, rng: np.random.Generator, size: int | None = None):
    if node not in scm.noise:
        raise NotInvertible(f"{node} is not attributable")
    return scm.noise[node].sample(rng, size)


def observed_noises(scm: FittedSCM, observed: Mapping[UnfoldedNode, float]) -> dict[UnfoldedNode, float]:
    """Invert every attributable node's noise from a full set of observations."""
    out = {}
    for u in scm.attributable:
        parents = {p: observed[p] for p in scm.mechanism_parents(u)}
        out[u] = invert_noise(scm, u, parents, observed[u])
    return out


def propagate(
    scm: FittedSCM,
    fixed_noises: Mapping[UnfoldedNode, Any],
    dangling_values: Mapping[UnfoldedNode, Any] | None = None,
    return_all: bool = False,
):
    """Evaluate the unfolded model in topological order and return the target value.

    Nodes without a mechanism (truncated dangling parents, and dangling control
    nodes in non-truncated mode) take their value from ``dangling_values``;
    every noise-consuming node needs an entry in ``fixed_noises``.  Values may
    be scalars or equally shaped arrays.
    """
    dangling_values = dangling_values or {}
    values: dict[UnfoldedNode, Any] = {}
    for node in scm.order:
        if scm.is_fixed(node):
            if node not in dangling_values:
                raise MissingDanglingValue(f"no observed value for dangling node {node}")
            values[node] = dangling_values[node]
            continue
        mech = scm.mechanisms[node]
        rel = {(p.node, p.lag - node.lag): values[p] for p in scm.mechanism_parents(node)}
        if mech.consumes_noise:
            if node not in fixed_noises:
                raise MissingNoise(f"no noise value for {node}")
            values[node] = mech.deterministic_part(rel) + fixed_noises[node]
        else:
            values[node] = mech.deterministic_part(rel)
    return values if return_all else values[scm.target]


def default_policy(controller=None, **kwargs) -> MechanismPolicy:
    """The plant policy: regressions everywhere except the known battery controller."""
    from .plant.controller import BatteryController

    controller = controller or BatteryController()
    return MechanismPolicy(known={controller.self_node: controller}, **kwargs)
