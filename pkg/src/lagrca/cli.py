"""Command-line interface.

Errors are reported on stderr as ``error: CODE: message`` with a nonzero exit
status that depends on the error family.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .attribution import DEFAULT_PERMUTATIONS, DEFAULT_SAMPLES, CoalitionEstimator, attribute, make_event, shapley_attributions
from .errors import IoFailure, LagRCAError, PeakNotFound, UnknownNode
from .graph import TruncationMode, load_graph, unfold
from .injection import DEFAULT_TAU, KINDS, InjectionSpec, attributable_peaks, paired_run
from .mechanisms import FittedSCM, default_policy, fit
from .pipeline import BenchRun, RunManifest, atomic_write, output_root, write_json
from .plant import PlantTrace, detect_peaks, load_config, plant_graph_path, simulate

log = logging.getLogger("lagrca")


def _lags(text: str) -> list[int]:
    """Parse ``"0,3,7"`` or ``"1-5"`` (or a mix) into a sorted list of lags."""
    out: set[int] = set()
    for part in filter(None, (p.strip() for p in text.split(","))):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.update(range(int(lo), int(hi) + 1))
        else:
            out.add(int(part))
    return sorted(out)


def _seeds(text: str) -> list[int]:
    return _lags(text)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="plant config YAML (default: bundled)")
    p.add_argument("--out", help="output path or directory (default: $LAGRCA_OUT or ./lagrca-out)")


def _estimator_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, default=DEFAULT_SAMPLES, help="Monte-Carlo noise draws M")
    p.add_argument("--permutations", type=int, default=DEFAULT_PERMUTATIONS, help="sampled permutations P")
    p.add_argument("--seed", type=int, default=0)


def _out_dir(args, default: str) -> Path:
    return Path(args.out) if args.out else output_root() / default


def _graph(path: str | None):
    graph, target = load_graph(path or plant_graph_path())
    return graph, target or "Grid"


def _trace_row(trace: PlantTrace, t: int) -> int:
    row = trace.row_of(t)
    if not 0 <= row < len(trace):
        raise PeakNotFound(f"time {t} is outside the trace [{trace.t_start}, {trace.t_start + len(trace) - 1}]")
    return row


# -- subcommands --------------------------------------------------------------
def cmd_simulate(args) -> int:
    config = load_config(args.config)
    out = Path(args.out) if args.out else output_root() / f"trace_seed{args.seed}.csv"
    trace = simulate(config, args.seed, args.t_start, args.duration)
    atomic_write(out, trace.to_csv)
    print(out)
    return 0


def cmd_inject(args) -> int:
    config = load_config(args.config)
    t_inj = args.t_injection if args.t_injection is not None else args.t_start + config.warm_up_min
    spec = InjectionSpec.make(args.kind, t_inj)
    run = paired_run(config, args.seed, spec, args.t_start, args.tau)
    peaks = attributable_peaks(run, args.tau, config.peak_limit_kw, config.peak_min_width)
    out = _out_dir(args, f"inject_{args.kind}_seed{args.seed}")
    atomic_write(out / "baseline.csv", run.baseline.to_csv)
    atomic_write(out / "injected.csv", run.injected.to_csv)
    write_json(out / "peaks.json", {"spec": spec.to_dict(), "seed": args.seed, "peaks": [p.to_dict() for p in peaks]})
    if args.plot:
        from .plotting import trace_plot

        trace_plot(run.baseline.frame, run.injected.frame, out / "trace.png", config.peak_limit_kw, spec.t_injection)
    print(f"{len(peaks)} attributable peaks -> {out}")
    return 0


def cmd_fit(args) -> int:
    graph, target = _graph(args.graph)
    config = load_config(args.config)
    if args.train:
        training = [PlantTrace.from_csv(p) for p in args.train]
    else:
        training = [simulate(config, s, 0, args.days * 1440) for s in _seeds(args.train_seeds)]
    out = _out_dir(args, "models")
    policy = default_policy(config.controller, seed=args.seed)
    for L in _lags(args.lags):
        scm = fit(unfold(graph, target, L, args.mode), training, policy)
        path = out / f"{args.mode}_L{L}.json"
        atomic_write(path, scm.save)
        print(path)
    return 0


def cmd_attribute(args) -> int:
    scm = FittedSCM.load(args.model)
    trace = PlantTrace.from_csv(args.trace)
    if args.time:
        times = args.time
    else:
        config = load_config(args.config)
        times = [p.t for p in detect_peaks(trace, config.peak_limit_kw, config.peak_min_width)]
    rows = []
    results = {}
    for t in times:
        res = attribute(scm, trace.frame, _trace_row(trace, t), args.samples, args.permutations, args.seed, args.strategy)
        results[str(t)] = res.to_dict()
        for u, v in sorted(res.phi.items()):
            rows.append({"t": t, "node": u.node, "lag": u.lag, "phi": v})
    out = _out_dir(args, "attributions")
    write_json(out / "attributions.json", results)
    frame = pd.DataFrame(rows, columns=["t", "node", "lag", "phi"])
    atomic_write(out / "attributions.csv", lambda p: frame.to_csv(p, index=False, float_format="%.10g"))
    for t in times:
        r = results[str(t)]
        print(f"t={t} it_score={r['it_score']:.4f}")
    print(out)
    return 0


def cmd_explain(args) -> int:
    scm = FittedSCM.load(args.model)
    trace = PlantTrace.from_csv(args.trace)
    row = _trace_row(trace, args.time)
    nodes = scm.unfolded.summary.nodes
    for n in args.node or []:
        if n not in nodes:
            raise UnknownNode(f"{n!r} is not a graph node")
    event = make_event(scm, trace.frame, row)
    est = CoalitionEstimator(scm, event, args.samples, args.seed)
    res = shapley_attributions(event, est, args.strategy, args.permutations)
    table = []
    for u in scm.attributable:
        if args.node and u.node not in args.node:
            continue
        q25, q75 = scm.noise[u].quantiles([0.25, 0.75])
        table.append({
            "node": u.node, "lag": u.lag, "time": int(args.time - u.lag), "phi": res.phi[u],
            "noise": est.observed_noise[u], "q25": float(q25), "q75": float(q75),
        })
    frame = pd.DataFrame(table, columns=["node", "lag", "time", "phi", "noise", "q25", "q75"])
    out = _out_dir(args, f"explain_t{args.time}")
    atomic_write(out / "explain.csv", lambda p: frame.to_csv(p, index=False, float_format="%.10g"))
    write_json(out / "attribution.json", res.to_dict())
    if args.plot and not frame.empty:
        from .plotting import explain_plot

        explain_plot(frame, out / "explain.png")
    print(f"t={args.time} target={event.target_value:.2f} z={event.score:.3f} it_score={res.it_score:.4f}")
    top = frame.reindex(frame["phi"].abs().sort_values(ascending=False).index).head(args.top)
    print(top.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    print(out)
    return 0


def _manifest_from_args(args) -> RunManifest:
    manifest = RunManifest.load(args.manifest) if args.manifest else RunManifest()
    data = manifest.to_dict()
    overrides = {
        "config": args.config,
        "seeds": _seeds(args.seeds) if args.seeds else None,
        "truncated_lags": _lags(args.lags) if args.lags is not None else None,
        "non_truncated_lags": _lags(args.nt_lags) if args.nt_lags is not None else None,
        "aggs": args.agg,
        "samples": args.samples,
        "permutations": args.permutations,
        "tau": args.tau,
        "seed": args.seed,
    }
    if args.mode == TruncationMode.NON_TRUNCATED.value and args.lags is not None:
        overrides["non_truncated_lags"] = overrides.pop("truncated_lags")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return RunManifest.from_dict(data)


def cmd_bench(args) -> int:
    manifest = _manifest_from_args(args)
    run = BenchRun(manifest, args.out)
    if args.stage == "corpus":
        run.dir.mkdir(parents=True, exist_ok=True)
        write_json(run.dir / "manifest.json", {"hash": run.hash, **manifest.to_dict()})
        corpus = run.corpus()
        for kind, n in corpus.counts().items():
            print(f"{kind:18s} {n}")
        print(run.dir)
        return 0
    report = run.run()
    from .plotting import render_report_figures

    render_report_figures(report, run.dir / "report" / "figures")
    print((run.dir / "report" / "summary.txt").read_text())
    print(run.dir)
    return 0


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    try:
        with open(run_dir / "manifest.json") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"no manifest in {run_dir}: {exc}") from exc
    data.pop("hash", None)
    manifest = RunManifest.from_dict(data)
    run = BenchRun(manifest, run_dir.parent)
    report = run.report()
    if not args.no_figures:
        from .plotting import render_report_figures

        render_report_figures(report, run.dir / "report" / "figures")
    if args.agg:
        h = report.hits
        h = h[(h["kind"] == "overall") & ((h["agg"] == args.agg) | (h["agg"] == ""))]
        print(h.pivot_table(index=["source", "max_lag"], columns="k", values="hit").to_string(float_format=lambda v: f"{v:.4f}"))
    else:
        print((run.dir / "report" / "summary.txt").read_text())
    return 0


# -- parser -------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lagrca", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate the plant and write a trace CSV")
    _common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-start", type=int, default=0)
    p.add_argument("--duration", type=int, default=1440, help="minutes")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inject", help="paired baseline/injected run with attributable peaks")
    _common(p)
    p.add_argument("--kind", required=True, choices=sorted(KINDS))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t-start", type=int, default=0)
    p.add_argument("--t-injection", type=int)
    p.add_argument("--tau", type=int, default=DEFAULT_TAU)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("fit", help="fit unfolded SCMs")
    _common(p)
    p.add_argument("--graph", help="summary graph YAML (default: plant graph)")
    p.add_argument("--train", nargs="+", help="training trace CSVs")
    p.add_argument("--train-seeds", default="1000-1002", help="simulate training months for these seeds")
    p.add_argument("--days", type=int, default=31)
    p.add_argument("--lags", default="7")
    p.add_argument("--mode", choices=[m.value for m in TruncationMode], default="truncated")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("attribute", help="attribute peaks of a trace")
    _common(p)
    _estimator_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--time", type=int, nargs="*", help="absolute minutes (default: every detected peak)")
    p.add_argument("--strategy", choices=["permutations", "exact", "auto"], default="permutations")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("bench", help="benchmark pipeline")
    _common(p)
    p.add_argument("stage", choices=["corpus", "run"])
    p.add_argument("--manifest")
    p.add_argument("--seeds", help="e.g. 0-9")
    p.add_argument("--lags", help="lags for --mode (default: truncated), e.g. 0,3,7,10")
    p.add_argument("--nt-lags", help="non-truncated lags")
    p.add_argument("--mode", choices=[m.value for m in TruncationMode])
    p.add_argument("--agg", nargs="+", choices=["sum", "max"])
    p.add_argument("--samples", type=int)
    p.add_argument("--permutations", type=int)
    p.add_argument("--tau", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("explain", help="per-lag attribution table for one peak")
    _common(p)
    _estimator_flags(p)
    p.add_argument("--model", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--time", type=int, required=True)
    p.add_argument("--node", nargs="+", help="restrict the table to these nodes")
    p.add_argument("--strategy", choices=["permutations", "exact", "auto"], default="permutations")
    p.add_argument("--top", type=int, default=15)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("report", help="rebuild report tables and figures of a bench run")
    p.add_argument("--run", required=True, help="run directory (contains manifest.json)")
    p.add_argument("--agg", choices=["sum", "max"])
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except LagRCAError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_status
    except OSError as exc:
        print(f"error: {IoFailure.code}: {exc}", file=sys.stderr)
        return IoFailure.exit_status


if __name__ == "__main__":
    sys.exit(main())
