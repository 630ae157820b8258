import numpy as np
import pytest

from lagrca.attribution import AttributionResult
from lagrca.errors import EmptyCorpus, NodeNotAttributable
from lagrca.evaluation import (
    HEURISTIC,
    BenchmarkReport,
    aggregate_lags,
    build_report,
    hit_at_k,
    peak_record,
    predicted_time,
    rank_nodes,
    ranked,
    time_difference,
)
from lagrca.graph import UnfoldedNode
from lagrca.injection import AttributablePeak, InjectionSpec
from lagrca.plant import PeakEvent

NODES = ["A", "B", "C", "SOC"]


def result(phi: dict, max_lag=3):
    return AttributionResult(
        phi={UnfoldedNode(n, l): v for (n, l), v in phi.items()}, it_score=sum(phi.values()), samples=10,
        permutations=5, exact=False, seed=0, mode="truncated", max_lag=max_lag, t=0, meta={},
    )


def test_aggregation_examples():
    r = {"A": {0: 1.0, 3: 2.0}, "B": {1: -0.5}}
    assert aggregate_lags(r, "sum") == {"A": 3.0, "B": -0.5}
    assert aggregate_lags(r, "max") == {"A": 2.0, "B": -0.5}
    with pytest.raises(ValueError):
        aggregate_lags(r, "median")


def test_ranking_ties_and_absent_nodes():
    assert rank_nodes({"B": 1.0, "A": 1.0, "C": 3.0}, NODES) == ["C", "A", "B", "SOC"]
    heur = ranked({"A": 2.0, "B": 5.0}, NODES, HEURISTIC, None)
    assert heur.ranking == ["B", "A", "C", "SOC"]
    assert heur.rank_of("SOC") == 4 and heur.rank_of("ghost") == 5


def test_ranking_invariant_to_positive_scaling():
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = dict(zip(NODES, rng.normal(size=4)))
        c = float(rng.uniform(0.01, 100))
        assert rank_nodes(s) == rank_nodes({k: c * v for k, v in s.items()})


def test_hit_at_k():
    rs = [ranked({"A": 3.0, "B": 1.0}, NODES, HEURISTIC, None)] * 4
    assert hit_at_k(rs, ["A"] * 4, 1) == 1.0
    assert hit_at_k(rs, ["A", "B", "C", "SOC"], 1) == 0.25
    assert [hit_at_k(rs, ["A", "B", "C", "SOC"], k) for k in (1, 2, 3, 4)] == [0.25, 0.5, 0.75, 1.0]
    with pytest.raises(EmptyCorpus):
        hit_at_k([], [], 3)


def test_predicted_time():
    assert predicted_time(result({("A", 0): 0.1, ("A", 4): 2.0, ("A", 2): 1.0}), "A", 100) == 96
    assert predicted_time(result({("A", 5): -1.0}), "A", 100) == 95
    assert predicted_time(result({("A", 0): 1.0, ("A", 1): 1.0, ("A", 2): 1.0}), "A", 100) == 100
    with pytest.raises(NodeNotAttributable):
        predicted_time(result({("A", 0): 1.0}), "SOC", 100)


def test_time_difference_verbatim():
    assert time_difference(100, 10, 100) == 0
    assert time_difference(100, 10, 105) == 0
    assert time_difference(100, 10, 110) == 0
    assert time_difference(100, 10, 113) == 3
    # early predictions are measured from the window end as well
    assert time_difference(100, 10, 97) == -13


def fake_peak(kind, seed, t):
    spec = InjectionSpec.make(kind, 1000)
    return AttributablePeak(PeakEvent(t, 1600.0, t - 2, t + 2), spec, seed)


def records_for(peaks, scores):
    recs = []
    for i, p in enumerate(peaks):
        res = result(scores[i])
        for agg in ("sum", "max"):
            recs.append(peak_record(f"p{i}", p, ranked(res, ["T", "CL", "BU", "Grid"], "truncated", agg), predicted_time(res, p.node, p.peak.t), 3))
        recs.append(peak_record(f"p{i}", p, ranked(aggregate_lags(res, "sum"), ["T", "CL", "BU", "Grid"], HEURISTIC, None), None, None))
    return recs


def sample_report():
    peaks = [fake_peak("temperature-surge", 0, 1012), fake_peak("bat-fail", 1, 1020), fake_peak("grid-noise", 2, 1005)]
    scores = [
        {("T", 3): 2.0, ("CL", 0): 1.0},
        {("BU", 0): 0.5, ("CL", 1): 0.7, ("T", 2): 0.1},
        {("Grid", 0): 4.0},
    ]
    return build_report(records_for(peaks, scores), [], peaks, ks=(1, 3))


def test_report_tables():
    rep = sample_report()
    assert rep.overall_hit("truncated", 1, 3, "sum") == pytest.approx(2 / 3)
    assert rep.overall_hit("truncated", 3, 3, "sum") == 1.0
    h = rep.hits
    assert set(h["kind"]) == {"overall", "temperature-surge", "bat-fail", "grid-noise"}
    for _, grp in h.groupby(["source", "max_lag", "agg", "kind"]):
        assert grp.sort_values("k")["hit"].is_monotonic_increasing
    t = rep.timing[rep.timing["kind"] == "overall"].set_index(["source", "agg"])
    # temperature-surge: t_hat 1009 inside [1000, 1010]; bat-fail 1020 beyond 1015 -> 5; grid-noise 1005 -> 0
    assert t.loc[("truncated", "sum"), "mean_d"] == pytest.approx(5 / 3)
    assert rep.inventory.set_index("kind").loc["grid-noise", "n_peaks"] == 1


def test_empty_report(tmp_path):
    rep = build_report([], [], [], ks=(1, 3))
    assert rep.records.empty and rep.hits.empty
    rep.save(tmp_path)
    assert (tmp_path / "summary.txt").exists()


def test_report_save_load_bytes(tmp_path):
    rep = sample_report()
    rep.save(tmp_path / "a")
    again = BenchmarkReport.load(tmp_path / "a")
    again.save(tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
