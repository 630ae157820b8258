"""Benchmark orchestration with content-addressed, resumable artifacts.

A run directory is named by the hash of its manifest.  Each stage writes its
artifact atomically and is skipped when the artifact already exists, so an
interrupted run picks up where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Callable

import numpy as np
import yaml

from . import __version__
from .attribution import AttributionResult, attribute
from .errors import InsufficientData, InvalidManifest, IoFailure
from .evaluation import HEURISTIC, BenchmarkReport, build_report, peak_record, predicted_time, ranked
from .graph import SummaryGraph, TruncationMode, effective_max_lag, load_graph, unfold
from .heuristic import LinearTree, fit_tree_coefficients, heuristic_attributions
from .injection import KINDS, AttributablePeak, Corpus, build_corpus
from .mechanisms import FittedSCM, default_policy, fit
from .plant import PlantConfig, PlantTrace, load_config, plant_graph_path, simulate

log = logging.getLogger(__name__)

OUT_ENV = "LAGRCA_OUT"
MINUTES_PER_DAY = 1440


@dataclass
class RunManifest:
    config: str | None = None  # plant config file; None selects the bundled default
    graph: str | None = None  # summary graph file; None selects the plant graph
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    training_seeds: list[int] = field(default_factory=lambda: [1000, 1001, 1002])
    training_days: int = 31
    kinds: list[str] = field(default_factory=lambda: list(KINDS))
    t_start: int = 5 * MINUTES_PER_DAY
    t_injection: int = 5 * MINUTES_PER_DAY + 14 * 60
    tau: int = 60
    truncated_lags: list[int] = field(default_factory=lambda: [0, 3, 7, 10])
    non_truncated_lags: list[int] = field(default_factory=list)
    aggs: list[str] = field(default_factory=lambda: ["sum", "max"])
    samples: int = 2000
    permutations: int = 200
    seed: int = 0
    ks: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    heuristic: bool = True
    heuristic_reference: str = "overshoot"
    short_delay: int = 10
    version: str = __version__

    def __post_init__(self):
        problems = []
        if self.samples < 1 or self.permutations < 1:
            problems.append("samples and permutations must be positive")
        if any(l < 0 for l in self.truncated_lags + self.non_truncated_lags):
            problems.append("lags must be nonnegative")
        if not set(self.aggs) <= {"sum", "max"} or not self.aggs:
            problems.append("aggs must be a nonempty subset of {sum, max}")
        unknown = set(self.kinds) - set(KINDS)
        if unknown:
            problems.append(f"unknown injection kinds {sorted(unknown)}")
        if self.tau < 0:
            problems.append("tau must be nonnegative")
        if self.training_days < 1:
            problems.append("training_days must be positive")
        if problems:
            raise InvalidManifest("; ".join(problems))

    @classmethod
    def from_dict(cls, data: dict) -> "RunManifest":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidManifest(f"unknown manifest keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise InvalidManifest(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise InvalidManifest(f"cannot read manifest {path}: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise InvalidManifest("manifest must be a mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        content = self.to_dict()
        # hash file contents rather than paths so edits invalidate cached artifacts
        for key in ("config", "graph"):
            if content[key] is not None:
                content[key] = _file_digest(content[key])
        blob = json.dumps(content, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def plant_config(self) -> PlantConfig:
        return load_config(self.config)

    def summary_graph(self) -> tuple[SummaryGraph, str]:
        graph, target = load_graph(self.graph or plant_graph_path())
        return graph, target or "Grid"

    def models(self) -> list[tuple[str, int]]:
        return [(TruncationMode.TRUNCATED.value, L) for L in self.truncated_lags] + [
            (TruncationMode.NON_TRUNCATED.value, L) for L in self.non_truncated_lags
        ]


def _file_digest(path: str) -> str:
    try:
        return hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def output_root(out: str | Path | None = None) -> Path:
    return Path(out or os.environ.get(OUT_ENV) or "lagrca-out")


def atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        writer(tmp)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_json(path: Path, data: Any) -> None:
    def w(p):
        with open(p, "w") as fh:
            json.dump(data, fh, indent=1, sort_keys=True)
            fh.write("\n")

    atomic_write(path, w)


def peak_id(peak: AttributablePeak) -> str:
    return f"{peak.spec.kind}:{peak.seed}:{peak.peak.t}"


def peak_seed(master: int, pid: str) -> int:
    """Per-peak estimator seed derived from the manifest seed."""
    ss = np.random.SeedSequence([int(master), zlib.crc32(pid.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class BenchRun:
    """Stages of one benchmark run inside ``<out>/<manifest hash>/``."""

    def __init__(self, manifest: RunManifest, out: str | Path | None = None):
        self.manifest = manifest
        self.hash = manifest.digest()
        self.dir = output_root(out) / self.hash
        self.config = manifest.plant_config()
        self.graph, self.target = manifest.summary_graph()
        self._training: list[PlantTrace] | None = None
        self._corpus: Corpus | None = None

    # -- training data --------------------------------------------------------
    def training(self) -> list[PlantTrace]:
        if self._training is not None:
            return self._training
        m = self.manifest
        if not m.training_seeds:
            raise InsufficientData("manifest lists no training seeds")
        traces = []
        for s in m.training_seeds:
            path = self.dir / "training" / f"seed_{s}.csv"
            if path.exists():
                traces.append(PlantTrace.from_csv(path))
                continue
            log.info("simulating training month for seed %s", s)
            tr = simulate(self.config, s, 0, m.training_days * MINUTES_PER_DAY)
            atomic_write(path, tr.to_csv)
            traces.append(tr)
        self._training = traces
        return traces

    # -- corpus ---------------------------------------------------------------
    def corpus(self) -> Corpus:
        if self._corpus is not None:
            return self._corpus
        m = self.manifest
        index = self.dir / "corpus" / "peaks.json"
        if index.exists():
            self._corpus = self._load_corpus(index)
            return self._corpus
        log.info("building corpus over %d seeds", len(m.seeds))
        corpus = build_corpus(self.config, m.seeds, m.kinds, m.t_start, m.t_injection, m.tau)
        for (kind, seed), tr in sorted(corpus.traces.items()):
            atomic_write(self.dir / "corpus" / "traces" / f"{kind}_{seed}.csv", tr.to_csv)
        write_json(index, {
            "t_start": corpus.t_start,
            "t_injection": corpus.t_injection,
            "tau": corpus.tau,
            "counts": corpus.counts(),
            "peaks": [p.to_dict() for p in corpus.peaks],
        })
        self._corpus = corpus
        return corpus

    def _load_corpus(self, index: Path) -> Corpus:
        with open(index) as fh:
            data = json.load(fh)
        peaks = [AttributablePeak.from_dict(d) for d in data["peaks"]]
        traces = {}
        for p in peaks:
            key = (p.spec.kind, p.seed)
            if key not in traces:
                traces[key] = PlantTrace.from_csv(self.dir / "corpus" / "traces" / f"{key[0]}_{key[1]}.csv")
        return Corpus(peaks, traces, {}, data["t_start"], data["t_injection"], data["tau"])

    # -- models ---------------------------------------------------------------
    def model(self, mode: str, L: int) -> FittedSCM:
        path = self.dir / "models" / f"{mode}_L{L}.json"
        if path.exists():
            return FittedSCM.load(path)
        unfolded = unfold(self.graph, self.target, L, mode)
        policy = default_policy(self.config.controller, seed=self.manifest.seed)
        scm = fit(unfolded, self.training(), policy)
        atomic_write(path, scm.save)
        return scm

    def tree(self) -> LinearTree:
        path = self.dir / "models" / "heuristic_tree.json"
        if path.exists():
            return LinearTree.load(path)
        tree = fit_tree_coefficients(self.training(), self.graph, self.target, self.config.peak_limit_kw)
        atomic_write(path, tree.save)
        return tree

    # -- attributions ---------------------------------------------------------
    def attributions(self, mode: str, L: int) -> dict[str, AttributionResult]:
        path = self.dir / "attributions" / f"{mode}_L{L}.json"
        if path.exists():
            with open(path) as fh:
                return {k: AttributionResult.from_dict(v) for k, v in json.load(fh).items()}
        m = self.manifest
        scm = self.model(mode, L)
        corpus = self.corpus()
        results = {}
        for p in corpus.peaks:
            pid = peak_id(p)
            tr = corpus.trace_of(p)
            results[pid] = attribute(
                scm, tr.frame, tr.row_of(p.peak.t), samples=m.samples, permutations=m.permutations, seed=peak_seed(m.seed, pid)
            )
        log.info("attributed %d peaks with %s L=%d", len(results), mode, L)
        write_json(path, {k: v.to_dict() for k, v in results.items()})
        return results

    def heuristic_scores(self) -> dict[str, dict[str, float]]:
        path = self.dir / "attributions" / "heuristic.json"
        if path.exists():
            with open(path) as fh:
                return json.load(fh)
        tree = self.tree()
        corpus = self.corpus()
        out = {}
        for p in corpus.peaks:
            tr = corpus.trace_of(p)
            out[peak_id(p)] = heuristic_attributions(tree, tr.frame, tr.row_of(p.peak.t), self.manifest.heuristic_reference)
        write_json(path, out)
        return out

    # -- report ---------------------------------------------------------------
    def report(self) -> BenchmarkReport:
        m = self.manifest
        corpus = self.corpus()
        nodes = list(self.graph.nodes)
        records, phi_rows = [], []
        for mode, L in m.models():
            results = self.attributions(mode, L)
            unfolded = unfold(self.graph, self.target, L, mode)
            for p in corpus.peaks:
                pid = peak_id(p)
                res = results[pid]
                for u, v in sorted(res.phi.items()):
                    phi_rows.append({"peak_id": pid, "source": mode, "max_lag": L, "node": u.node, "lag": u.lag, "phi": v})
                t_hat = predicted_time(res, p.node, p.peak.t) if p.node in res.per_node() else None
                eff = effective_max_lag(unfolded, p.node)
                for agg in m.aggs:
                    records.append(peak_record(pid, p, ranked(res, nodes, mode, agg), t_hat, eff))
        if m.heuristic:
            scores = self.heuristic_scores()
            for p in corpus.peaks:
                pid = peak_id(p)
                records.append(peak_record(pid, p, ranked(scores[pid], nodes, HEURISTIC, None), None, None))
        report = build_report(records, phi_rows, corpus.peaks, m.ks, m.short_delay, meta={"manifest": self.hash})
        report.save(self.dir / "report")
        return report

    def run(self) -> BenchmarkReport:
        self.dir.mkdir(parents=True, exist_ok=True)
        write_json(self.dir / "manifest.json", {"hash": self.hash, **self.manifest.to_dict()})
        self.training()
        self.corpus()
        return self.report()
