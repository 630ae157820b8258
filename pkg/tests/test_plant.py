import math
from collections import deque

import numpy as np
import pytest

from lagrca.errors import InvalidConfig, MissingTraceFile
from lagrca.plant import PlantConfig, detect_peaks, load_config, simulate
from lagrca.plant.config import TemperatureConfig, ToolParkConfig, save_config
from lagrca.plant.peaks import detect_peaks_array
from lagrca.plant.simulate import NODES, Overrides, PlantTrace, initial_state, step
from lagrca.plant.temperature import BundledTrace, SyntheticDiurnal


def fresh_state(config, temp=15.0, t=0):
    return initial_state(config, seed=0, t_start=t, temperature_now=temp)


def test_cooling_latch_switches_on(plant_config):
    s = fresh_state(plant_config)
    s.temp_buffer = deque([19.5] * 3, maxlen=3)
    assert not s.cooling_on
    s, _ = step(s, plant_config, 19.5)
    assert s.cooling_on


def test_cooling_latch_hysteresis(plant_config):
    s = fresh_state(plant_config)
    s.cooling_on = True
    s.temp_buffer = deque([18.5] * 3, maxlen=3)
    s, _ = step(s, plant_config, 18.5)
    assert s.cooling_on
    s.temp_buffer = deque([17.9] * 3, maxlen=3)
    s, _ = step(s, plant_config, 17.9)
    assert not s.cooling_on


def test_latch_matches_two_point_oracle(plant_config):
    rng = np.random.default_rng(0)
    temps = 18.5 + 1.2 * np.sin(np.arange(400) / 15.0) + rng.normal(0, 0.2, 400)
    s = fresh_state(plant_config, temps[0])
    on, window = False, deque([temps[0]] * 3, maxlen=3)
    for x in temps:
        window.append(x)
        avg = sum(window) / 3
        on = True if avg > 19.0 else False if avg < 18.0 else on
        s, _ = step(s, plant_config, x)
        assert s.cooling_on == on


def test_low_soc_forces_loading(plant_config):
    s = fresh_state(plant_config)
    s.soc = 0.69
    s.grid_buffer = deque([900.0, 900.0], maxlen=2)
    s, row = step(s, plant_config, 15.0)
    assert row["BC"] == plant_config.battery_load_kw


def test_row_identity_and_ranges(plant_month):
    f = plant_month.frame
    assert list(f.columns) == ["time", *NODES]
    recon = f["TPa"] + f["TPb"] + f["CL"] + f["BU"] + plant_month.grid_noise
    assert np.allclose(f["Grid"], recon, atol=1e-9)
    assert f["SOC"].between(0.0, 1.0).all()
    for col, m in (("UTa", 12), ("UTb", 8)):
        u = f[col].to_numpy()
        assert ((u >= 0) & (u <= 1)).all()
        assert np.allclose(u * m, np.round(u * m))
    assert (f["CL"] >= 0).all()


def test_battery_hysteresis_in_month(plant_month, plant_config):
    f = plant_month.frame
    g = f["Grid"].to_numpy()
    bc = f["BC"].to_numpy()
    avg = 0.5 * (g[1:-1] + g[:-2])  # average of Grid[t-1], Grid[t-2] for t = 2..
    prev, cur = bc[1:-1], bc[2:]
    left_unload = (prev < 0) & (cur == 0)
    assert left_unload.any()
    assert np.all(avg[left_unload] <= plant_config.unload_stop_kw)


def test_month_has_unload_events(plant_month):
    f = plant_month.frame
    assert (f["Grid"] > 1400).any()
    assert (f["BC"] < 0).any()


def test_determinism_and_prefix(plant_config):
    a = simulate(plant_config, 3, 0, 800)
    b = simulate(plant_config, 3, 0, 800)
    c = simulate(plant_config, 3, 0, 500)
    assert a.frame.equals(b.frame)
    assert a.frame.iloc[:500].reset_index(drop=True).equals(c.frame)
    assert not simulate(plant_config, 4, 0, 500).frame.equals(c.frame)


def test_noise_free_fixed_point():
    quiet = ToolParkConfig(machines=4, idle_kw=10.0, arrival_mean_min=1e12)
    cfg = PlantConfig(
        park_a=quiet, park_b=quiet, machine_noise_kw=0.0, cooling_noise_kw=0.0, battery_noise_kw=0.0, grid_noise_kw=0.0,
        temperature=TemperatureConfig(source="synthetic", mean_c=10.0, amplitude_c=0.0),
    )
    tr = simulate(cfg, 0, 0, 300)
    assert (tr.frame["Grid"] == 80.0).all()


def test_duration_edge_cases(plant_config):
    assert len(simulate(plant_config, 0, 0, 0)) == 0
    with pytest.raises(InvalidConfig):
        simulate(plant_config, 0, 0, 50)


def test_trace_csv_round_trip(tmp_path, plant_config):
    tr = simulate(plant_config, 2, 0, 200)
    tr.to_csv(tmp_path / "t.csv")
    back = PlantTrace.from_csv(tmp_path / "t.csv")
    assert back.seed == 2 and back.config_hash == plant_config.config_hash()
    assert np.array_equal(back.frame.to_numpy(), tr.frame.to_numpy())
    assert np.array_equal(back.grid_noise, tr.grid_noise)


def test_config_validation_and_round_trip(tmp_path, plant_config):
    with pytest.raises(InvalidConfig):
        plant_config.with_overrides(cooling_on_c=17.0)
    with pytest.raises(InvalidConfig):
        plant_config.with_overrides(soc_low=0.95)
    with pytest.raises(InvalidConfig):
        PlantConfig.from_dict({"nonsense": 1})
    save_config(plant_config, tmp_path / "c.yaml")
    assert load_config(tmp_path / "c.yaml") == plant_config
    assert load_config(tmp_path / "c.yaml").config_hash() == plant_config.config_hash()


def test_temperature_sources(tmp_path):
    b = BundledTrace()
    assert [b.at(m) for m in (0, 777, 90_000)] == [b.at(m) for m in (0, 777, 90_000)]
    s = SyntheticDiurnal(mean_c=18.0, amplitude_c=5.0, peak_hour=15.0, ar_sigma_c=0.0)
    for m in (0, 100, 900, 1439):
        assert s.at(m) == 18.0 + 5.0 * math.cos(2 * math.pi * (m / 60.0 - 15.0) / 24.0)
    with pytest.raises(MissingTraceFile):
        BundledTrace(tmp_path / "missing.csv")


def test_peak_examples():
    (p,) = detect_peaks_array([1400, 1600, 1600, 1400], 1500)
    assert p.magnitude == 1600 and p.t == 1
    (q,) = detect_peaks_array([1400, 1600, 1400], 1500)
    assert q.width == 2
    assert detect_peaks_array([1600, 1400], 1500) == []
    assert detect_peaks_array([1400, 1600], 1500) == []
    assert detect_peaks_array([1000, 1200, 1400], 1500) == []


def test_peak_turning_points_and_offset():
    x = [1000, 1300, 1550, 1700, 1650, 1520, 1480, 1490, 1400]
    (p,) = detect_peaks_array(x, 1500, t0=100)
    assert (p.t, p.start, p.end) == (103, 100, 106)
    two = detect_peaks_array([1400, 1600, 1400, 1400, 1700, 1600, 1400], 1500)
    assert [p.magnitude for p in two] == [1600, 1700]
    assert two[0].overlaps(two[1])


def test_detect_peaks_on_trace(plant_month):
    peaks = detect_peaks(plant_month)
    assert all(p.magnitude > 1500 and p.width >= 2 for p in peaks)
    assert all(plant_month.frame["Grid"].iloc[plant_month.row_of(p.t)] == p.magnitude for p in peaks)
