"""Figures rendered from report tables.

PNG metadata is stripped of the software/date fields so identical tables give
byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .evaluation import HEURISTIC, BenchmarkReport  # noqa: E402

PNG_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=110, metadata=PNG_META)
    plt.close(fig)
    return path


def hit_curve(report: BenchmarkReport, path: Path, k: int = 3, agg: str = "sum") -> Path | None:
    h = report.hits
    if h.empty:
        return None
    h = h[(h["kind"] == "overall") & (h["k"] == k)]
    fig, ax = plt.subplots(figsize=(6, 4))
    for source, grp in h[h["source"] != HEURISTIC].groupby("source", sort=True):
        grp = grp[grp["agg"] == agg].sort_values("max_lag")
        ax.plot(grp["max_lag"], grp["hit"], marker="o", label=f"{source} ({agg})")
    base = h[h["source"] == HEURISTIC]
    if not base.empty:
        ax.axhline(float(base["hit"].iloc[0]), color="gray", linestyle="--", label="heuristic")
    ax.set_xlabel("maximum lag L")
    ax.set_ylabel(f"HIT{k}")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def hit_per_kind(report: BenchmarkReport, path: Path, k: int = 3, agg: str = "sum", source: str = "truncated") -> Path | None:
    h = report.hits
    if h.empty:
        return None
    h = h[(h["kind"] != "overall") & (h["k"] == k) & (h["source"] == source) & (h["agg"] == agg)]
    if h.empty:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    for kind, grp in h.groupby("kind", sort=True):
        grp = grp.sort_values("max_lag")
        ax.plot(grp["max_lag"], grp["hit"], marker=".", label=kind)
    ax.set_xlabel("maximum lag L")
    ax.set_ylabel(f"HIT{k} ({source}, {agg})")
    ax.set_ylim(-0.05, 1.05)
    ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def delay_distribution(report: BenchmarkReport, path: Path) -> Path | None:
    recs = report.records
    if recs.empty:
        return None
    peaks = recs.drop_duplicates("peak_id")
    kinds = sorted(peaks["kind"].unique())
    fig, ax = plt.subplots(figsize=(6, 4))
    data = [peaks.loc[peaks["kind"] == k, "delay"].to_numpy() for k in kinds]
    ax.boxplot(data, orientation="horizontal")
    ax.set_yticks(np.arange(1, len(kinds) + 1), kinds)
    ax.axvline(0, color="red", linestyle=":")
    ax.set_xlabel("peak delay after injection end (minutes)")
    return _save(fig, path)


def time_boxplot(report: BenchmarkReport, path: Path, agg: str = "sum", max_delay: int | None = 10) -> Path | None:
    recs = report.records
    if recs.empty:
        return None
    recs = recs[(recs["source"] != HEURISTIC) & (recs["agg"] == agg) & recs["d"].notna()]
    if max_delay is not None:
        recs = recs[recs["delay"] <= max_delay]
    if recs.empty:
        return None
    groups = sorted(recs.groupby(["source", "max_lag"]).groups)
    data = [recs.loc[(recs["source"] == s) & (recs["max_lag"] == L), "d"].to_numpy(dtype=float) for s, L in groups]
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot(data)
    ax.set_xticks(np.arange(1, len(groups) + 1), [f"{s[:5]} L={L}" for s, L in groups], rotation=45, fontsize=7)
    ax.axhline(0, color="gray", linestyle=":")
    ax.set_ylabel("d (minutes)")
    fig.tight_layout()
    return _save(fig, path)


def trace_plot(baseline: pd.DataFrame | None, injected: pd.DataFrame, path: Path, limit: float = 1500.0,
               t_injection: int | None = None, columns=("Grid", "TPa", "CL", "BU", "SOC")) -> Path:
    fig, axes = plt.subplots(len(columns), 1, figsize=(7, 1.6 * len(columns)), sharex=True)
    for ax, col in zip(np.atleast_1d(axes), columns):
        if baseline is not None:
            ax.plot(baseline["time"], baseline[col], lw=0.8, label="baseline")
        ax.plot(injected["time"], injected[col], lw=0.8, label="injected")
        if col == "Grid":
            ax.axhline(limit, color="gray", linestyle=":")
        if t_injection is not None:
            ax.axvline(t_injection, color="black", linestyle=":")
        ax.set_ylabel(col)
    np.atleast_1d(axes)[0].legend(fontsize=7)
    fig.tight_layout()
    return _save(fig, path)


def explain_plot(phi: pd.DataFrame, path: Path) -> Path:
    """Per-(node, lag) attributions of one peak as a heat map."""
    table = phi.pivot_table(index="node", columns="lag", values="phi", aggfunc="sum").fillna(0.0)
    fig, ax = plt.subplots(figsize=(max(4, 0.45 * table.shape[1] + 2), 0.4 * table.shape[0] + 1.5))
    vmax = float(np.abs(table.to_numpy()).max()) or 1.0
    im = ax.imshow(table.to_numpy(), cmap="RdBu_r", vmin=-vmax, vmax=vmax, aspect="auto")
    ax.set_yticks(np.arange(table.shape[0]), table.index)
    ax.set_xticks(np.arange(table.shape[1]), table.columns)
    ax.set_xlabel("lag")
    fig.colorbar(im, ax=ax, label="phi")
    fig.tight_layout()
    return _save(fig, path)


def render_report_figures(report: BenchmarkReport, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for agg in sorted(set(report.hits["agg"]) - {""}) if not report.hits.empty else []:
        out.append(hit_curve(report, directory / f"hit3_vs_lag_{agg}.png", agg=agg))
        out.append(hit_per_kind(report, directory / f"hit3_per_kind_{agg}.png", agg=agg))
        out.append(time_boxplot(report, directory / f"d_short_delay_{agg}.png", agg=agg))
    out.append(delay_distribution(report, directory / "peak_delays.png"))
    return [p for p in out if p is not None]
