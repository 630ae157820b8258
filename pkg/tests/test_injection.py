import numpy as np
import pytest

from lagrca.errors import PrefixDivergence, SimulationError, UnknownInjectionKind
from lagrca.injection import KINDS, InjectionSpec, apply_injection, build_corpus, check_prefix, paired_run, select_attributable
from lagrca.plant import PeakEvent

T0 = 720
T_I = 840


def run(plant_config, kind, seed=0, tau=40):
    return paired_run(plant_config, seed, InjectionSpec.make(kind, T_I), T0, tau)


@pytest.mark.parametrize("kind", sorted(KINDS))
def test_prefix_identical_for_every_kind(plant_config, kind):
    r = run(plant_config, kind, seed=5)
    n = r.baseline.row_of(T_I)
    assert r.baseline.frame.iloc[:n].equals(r.injected.frame.iloc[:n])
    assert not r.baseline.frame.equals(r.injected.frame)


def test_grid_noise_scale(plant_config):
    pooled = []
    for seed in range(20):
        r = run(plant_config, "grid-noise", seed, tau=10)
        lo, hi = r.injected.row_of(T_I), r.injected.row_of(T_I + 10)
        pooled.append(r.injected.grid_noise[lo:hi])
    assert abs(np.std(np.concatenate(pooled)) - 550.0) < 55.0


def test_soc_loss_triggers_loading(plant_config):
    r = run(plant_config, "soc-loss")
    f = r.injected.frame.set_index("time")
    assert f.loc[T_I, "SOC"] == 0.69
    assert f.loc[T_I + 1, "BC"] == plant_config.battery_load_kw


def test_bat_fail_and_temperature_surge(plant_config):
    f = run(plant_config, "bat-fail").injected.frame.set_index("time")
    assert (f.loc[T_I:T_I + 14, "BU"] == 0.0).all()
    f = run(plant_config, "temperature-surge").injected.frame.set_index("time")
    assert (f.loc[T_I:T_I + 9, "T"] == 31.0).all()
    assert f.loc[T_I + 10, "T"] != 31.0


def test_work_arrival_adds_one_item_per_minute():
    spec = InjectionSpec.make("work-arrival", T_I)
    extras = [spec.overrides(t).extra_arrivals_a if spec.overrides(t) else 0 for t in range(T_I - 2, T_I + 6)]
    assert extras == [0, 0, 1, 1, 1, 0, 0, 0]


def test_null_spec_matches_baseline(plant_config):
    a = apply_injection(None, plant_config, 3, T0, 300)
    r = run(plant_config, "grid-noise", seed=3)
    assert a.frame.iloc[: r.baseline.row_of(T_I)].equals(r.baseline.frame.iloc[: r.baseline.row_of(T_I)])
    assert apply_injection(None, plant_config, 3, T0, 300).frame.equals(a.frame)


def test_prefix_check_detects_divergence(plant_config):
    r = run(plant_config, "bat-fail")
    other = apply_injection(None, plant_config, 99, T0, len(r.baseline))
    with pytest.raises(PrefixDivergence):
        check_prefix(r.baseline, other, T_I)


def test_unknown_kind_and_warm_up(plant_config):
    with pytest.raises(UnknownInjectionKind):
        InjectionSpec.make("meteor", T_I)
    with pytest.raises(SimulationError):
        paired_run(plant_config, 0, InjectionSpec.make("bat-fail", T0 + 50), T0, 10)


def pk(t, m, start, end):
    return PeakEvent(t, m, start, end)


def test_magnitude_rule():
    inj = [pk(105, 1600.0, 103, 108), pk(130, 1700.0, 128, 133), pk(150, 1550.0, 149, 152)]
    base = [pk(106, 1650.0, 104, 109), pk(131, 1690.0, 129, 134), pk(300, 2000.0, 298, 302)]
    kept = select_attributable(inj, base, 100, 60)
    assert kept == [inj[1], inj[2]]
    assert select_attributable([], base, 100, 60) == []
    assert select_attributable([pk(100, 1600.0, 99, 101), pk(101, 1600.0, 100, 102)], [], 100, 0) == [pk(100, 1600.0, 99, 101)]


def test_empty_corpus(plant_config):
    c = build_corpus(plant_config, [], t_start=T0, t_injection=T_I)
    assert c.peaks == [] and all(v == 0 for v in c.counts().values())


def test_spec_round_trip():
    spec = InjectionSpec.make("cooling-scale", 1234)
    assert InjectionSpec.from_dict(spec.to_dict()) == spec
    assert spec.affected_node == "CL" and spec.window == (1234, 1244)
