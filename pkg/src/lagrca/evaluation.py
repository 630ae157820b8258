"""Scoring attributions against injection ground truth.

Per-peak records are the unit of storage.  Every table of the benchmark
report is a deterministic aggregation of those records, so reports can be
rebuilt from disk without re-running attribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import EmptyCorpus, NodeNotAttributable

AGGREGATIONS = ("sum", "max")
HEURISTIC = "heuristic"

RECORD_COLUMNS = [
    "peak_id", "kind", "seed", "truth", "t_peak", "t_injection", "duration", "delay",
    "source", "max_lag", "agg", "effective_lag", "truth_rank", "top1", "top2", "top3", "t_hat", "d",
]


def aggregate_lags(result, agg: str = "sum") -> dict[str, float]:
    """Fold per-lag attributions into one score per summary node."""
    per_node = result.per_node() if hasattr(result, "per_node") else result
    if agg == "sum":
        return {n: float(math.fsum(v.values())) for n, v in per_node.items()}
    if agg == "max":
        return {n: float(max(v.values())) for n, v in per_node.items()}
    raise ValueError(f"unknown aggregation {agg!r}; expected one of {AGGREGATIONS}")


def rank_nodes(scores: Mapping[str, float], nodes: Iterable[str] | None = None) -> list[str]:
    """Descending by score, ties by name; nodes missing from ``scores`` go last."""
    scored = sorted(scores, key=lambda n: (-scores[n], n))
    rest = sorted(set(nodes or ()) - set(scores))
    return scored + rest


@dataclass
class RankedAttribution:
    scores: dict[str, float]
    ranking: list[str]
    source: str
    max_lag: int | None = None
    agg: str | None = None

    def rank_of(self, node: str) -> int:
        """1-based rank; nodes the ranking does not know rank after everything."""
        return self.ranking.index(node) + 1 if node in self.ranking else len(self.ranking) + 1

    def top(self, k: int) -> list[str]:
        return self.ranking[:k]


def ranked(result, nodes: Iterable[str], source: str, agg: str | None = "sum") -> RankedAttribution:
    if source == HEURISTIC or agg is None:
        scores = dict(result)
        agg = None
        max_lag = None
    else:
        scores = aggregate_lags(result, agg)
        max_lag = result.max_lag
    return RankedAttribution(scores, rank_nodes(scores, nodes), source, max_lag, agg)


def hit_at_k(rankings: Sequence[RankedAttribution], truths: Sequence[str], k: int) -> float:
    if len(rankings) == 0:
        raise EmptyCorpus("no peaks to score")
    if len(rankings) != len(truths):
        raise ValueError("rankings and truths differ in length")
    return float(np.mean([r.rank_of(c) <= k for r, c in zip(rankings, truths)]))


def predicted_time(result, node: str, t_peak: int) -> int:
    """Peak time minus the lag at which ``node`` receives its largest attribution."""
    per_lag = result.per_node().get(node) if hasattr(result, "per_node") else result.get(node)
    if not per_lag:
        raise NodeNotAttributable(f"{node} has no attributable lag")
    best = max(per_lag.values())
    lag = min(l for l, v in per_lag.items() if v == best)
    return int(t_peak - lag)


def time_difference(t_injection: int, duration: int, t_hat: int) -> int:
    """0 inside the active window, otherwise the signed offset from the window end."""
    end = t_injection + duration
    if t_injection <= t_hat <= end:
        return 0
    return int(t_hat - end)


def peak_record(peak_id: str, peak, ranking: RankedAttribution, t_hat: int | None, effective_lag: int | None) -> dict:
    """One row of the per-peak table; ``peak`` is an attributable peak."""
    spec = peak.spec
    top = ranking.top(3) + [""] * 3
    d = time_difference(spec.t_injection, spec.duration, t_hat) if t_hat is not None else None
    return {
        "peak_id": peak_id,
        "kind": spec.kind,
        "seed": peak.seed,
        "truth": peak.node,
        "t_peak": peak.peak.t,
        "t_injection": spec.t_injection,
        "duration": spec.duration,
        "delay": peak.delay,
        "source": ranking.source,
        "max_lag": ranking.max_lag if ranking.max_lag is not None else -1,
        "agg": ranking.agg or "",
        "effective_lag": effective_lag if effective_lag is not None else -1,
        "truth_rank": ranking.rank_of(peak.node),
        "top1": top[0],
        "top2": top[1],
        "top3": top[2],
        "t_hat": t_hat,
        "d": d,
    }


FLOAT_COLUMNS = frozenset({"hit", "mean_d", "abs_mean_d", "q25", "median", "q75", "zero_share", "median_delay", "phi"})


def _model_keys(records: pd.DataFrame) -> list[str]:
    return ["source", "max_lag", "agg"]


def hit_table(records: pd.DataFrame, ks: Sequence[int]) -> pd.DataFrame:
    """HIT@k per model and injection kind; the ``overall`` kind pools all peaks."""
    cols = ["source", "max_lag", "agg", "kind", "k", "n_peaks", "hit"]
    if records.empty:
        return pd.DataFrame(columns=cols)
    rows = []
    for key, grp in records.groupby(_model_keys(records), sort=True):
        parts = [("overall", grp)] + [(kind, g) for kind, g in grp.groupby("kind", sort=True)]
        for kind, g in parts:
            ranks = g["truth_rank"].to_numpy()
            for k in ks:
                rows.append((*key, kind, int(k), len(g), float(np.mean(ranks <= k))))
    return pd.DataFrame(rows, columns=cols)


def time_table(records: pd.DataFrame, max_delay: int | None = None) -> pd.DataFrame:
    """Distribution of ``d`` per model and kind, optionally only for delays up to ``max_delay``."""
    cols = ["source", "max_lag", "agg", "kind", "n_peaks", "mean_d", "abs_mean_d", "q25", "median", "q75", "zero_share"]
    recs = records[records["d"].notna()] if not records.empty else records
    if max_delay is not None and not recs.empty:
        recs = recs[recs["delay"] <= max_delay]
    if recs.empty:
        return pd.DataFrame(columns=cols)
    rows = []
    for key, grp in recs.groupby(_model_keys(recs), sort=True):
        parts = [("overall", grp)] + [(kind, g) for kind, g in grp.groupby("kind", sort=True)]
        for kind, g in parts:
            d = g["d"].to_numpy(dtype=np.float64)
            m = float(np.mean(d))
            q25, med, q75 = np.quantile(d, [0.25, 0.5, 0.75])
            rows.append((*key, kind, len(g), m, abs(m), float(q25), float(med), float(q75), float(np.mean(d == 0))))
    return pd.DataFrame(rows, columns=cols)


def effective_lag_table(records: pd.DataFrame, k: int = 3) -> pd.DataFrame:
    """HIT@k re-indexed by the ground-truth node's effective maximum lag."""
    cols = ["source", "agg", "kind", "effective_lag", "n_peaks", "hit"]
    recs = records[records["source"] != HEURISTIC] if not records.empty else records
    if recs.empty:
        return pd.DataFrame(columns=cols)
    rows = []
    for (source, agg), grp in recs.groupby(["source", "agg"], sort=True):
        for kind, g in [("overall", grp)] + list(grp.groupby("kind", sort=True)):
            for eff, h in g.groupby("effective_lag", sort=True):
                rows.append((source, agg, kind, int(eff), len(h), float(np.mean(h["truth_rank"].to_numpy() <= k))))
    return pd.DataFrame(rows, columns=cols)


def inventory_table(peaks) -> pd.DataFrame:
    cols = ["kind", "node", "n_peaks", "n_seeds", "median_delay"]
    rows = {}
    for p in peaks:
        rows.setdefault((p.spec.kind, p.node), []).append(p)
    out = [
        (kind, node, len(ps), len({p.seed for p in ps}), float(np.median([p.delay for p in ps])))
        for (kind, node), ps in sorted(rows.items())
    ]
    return pd.DataFrame(out, columns=cols)


@dataclass
class BenchmarkReport:
    records: pd.DataFrame
    phi: pd.DataFrame  # raw per-(peak, model, node, lag) attributions
    inventory: pd.DataFrame
    hits: pd.DataFrame
    timing: pd.DataFrame
    timing_short: pd.DataFrame
    effective: pd.DataFrame
    meta: dict = field(default_factory=dict)

    TABLES = ("records", "phi", "inventory", "hits", "timing", "timing_short", "effective")

    def overall_hit(self, source: str, k: int, max_lag: int | None = None, agg: str | None = "sum") -> float:
        h = self.hits
        sel = (h["source"] == source) & (h["kind"] == "overall") & (h["k"] == k)
        if source == HEURISTIC:
            sel &= h["max_lag"] == -1
        else:
            sel &= (h["max_lag"] == max_lag) & (h["agg"] == agg)
        vals = h.loc[sel, "hit"]
        if vals.empty:
            raise EmptyCorpus(f"no hit rate for {source} L={max_lag} agg={agg}")
        return float(vals.iloc[0])

    def save(self, directory: str | Path) -> list[Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = []
        for name in self.TABLES:
            path = directory / f"{name}.csv"
            getattr(self, name).to_csv(path, index=False, float_format="%.10g", lineterminator="\n")
            written.append(path)
        path = directory / "summary.txt"
        path.write_text(render_summary(self))
        written.append(path)
        return written

    @classmethod
    def load(cls, directory: str | Path, meta: dict | None = None) -> "BenchmarkReport":
        directory = Path(directory)
        tables = {}
        for name in cls.TABLES:
            path = directory / f"{name}.csv"
            try:
                tables[name] = pd.read_csv(path, keep_default_na=False, na_values=[""], float_precision="round_trip")
            except pd.errors.EmptyDataError:
                tables[name] = pd.DataFrame()
        for col in ("agg", "top1", "top2", "top3"):
            if col in tables["records"]:
                tables["records"][col] = tables["records"][col].fillna("")
        for name in ("hits", "timing", "timing_short", "effective"):
            if "agg" in tables[name]:
                tables[name]["agg"] = tables[name]["agg"].fillna("")
        # CSV drops the float/int distinction for whole numbers; restore it so re-rendering is byte-stable
        for name, frame in tables.items():
            for col in FLOAT_COLUMNS.intersection(frame.columns):
                frame[col] = frame[col].astype(np.float64)
        return cls(**tables, meta=meta or {})


def build_report(records: Iterable[dict], phi_rows: Iterable[dict], peaks, ks: Sequence[int] = (1, 2, 3, 4, 5),
                 short_delay: int = 10, meta: dict | None = None) -> BenchmarkReport:
    records = pd.DataFrame(list(records), columns=RECORD_COLUMNS)
    if not records.empty:
        records = records.sort_values(["source", "max_lag", "agg", "peak_id"], kind="mergesort").reset_index(drop=True)
    phi = pd.DataFrame(list(phi_rows), columns=["peak_id", "source", "max_lag", "node", "lag", "phi"])
    if not phi.empty:
        phi = phi.sort_values(["source", "max_lag", "peak_id", "node", "lag"], kind="mergesort").reset_index(drop=True)
    return BenchmarkReport(
        records=records,
        phi=phi,
        inventory=inventory_table(peaks),
        hits=hit_table(records, ks),
        timing=time_table(records),
        timing_short=time_table(records, short_delay),
        effective=effective_lag_table(records),
        meta=dict(meta or {}),
    )


def _fmt(df: pd.DataFrame) -> str:
    return df.to_string(index=False, float_format=lambda v: f"{v:.4f}") if not df.empty else "(empty)"


def render_summary(report: BenchmarkReport) -> str:
    lines = ["attributable peaks", _fmt(report.inventory), ""]
    h = report.hits
    if not h.empty:
        overall = h[(h["kind"] == "overall") & (h["k"].isin([1, 3]))]
        wide = overall.pivot_table(index=["source", "max_lag", "agg"], columns="k", values="hit").reset_index()
        wide.columns = [f"hit{c}" if isinstance(c, (int, np.integer)) else c for c in wide.columns]
        lines += ["overall hit rates", _fmt(wide), ""]
        per_kind = h[(h["k"] == 3) & (h["kind"] != "overall")]
        wide = per_kind.pivot_table(index=["source", "max_lag", "agg"], columns="kind", values="hit").reset_index()
        lines += ["hit3 per injection", _fmt(wide), ""]
    for title, tab in (("time localization d (all peaks)", report.timing), ("time localization d (delay <= 10)", report.timing_short)):
        if not tab.empty:
            tab = tab[tab["kind"] == "overall"][["source", "max_lag", "agg", "n_peaks", "mean_d", "abs_mean_d", "median", "zero_share"]]
        lines += [title, _fmt(tab), ""]
    return "\n".join(lines)
