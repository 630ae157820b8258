"""Minute-resolution plant simulation.

Each stochastic source owns a named generator derived from the run seed, and
every source draws the same number of variates per minute whatever happens in
the plant.  Two runs with the same seed therefore stay aligned on every stream
even when an injection changes the plant's trajectory.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import InvalidConfig, IoFailure
from .config import PlantConfig, ToolParkConfig
from .controller import battery_setpoint, mode_of
from .temperature import daytime_hours, temperature_source

log = logging.getLogger(__name__)

NODES = ("Grid", "TPa", "TPb", "UTa", "UTb", "CL", "T", "DT", "BU", "SOC", "BC")
STREAMS = (
    "arrivals-a",
    "arrivals-b",
    "machine-noise",
    "grid-noise",
    "cooling-noise",
    "battery-noise",
    "temperature-perturbation",
)

IDLE, RAMP_UP, ACTIVE, RAMP_DOWN = 0, 1, 2, 3


class Streams:
    """Independent generators keyed by source name."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        children = np.random.SeedSequence(self.seed).spawn(len(STREAMS))
        self._gens = {name: np.random.default_rng(ss) for name, ss in zip(STREAMS, children)}

    def __getitem__(self, name: str) -> np.random.Generator:
        return self._gens[name]


@dataclass
class Overrides:
    """Per-minute interventions applied inside :func:`step`; ``None`` leaves a quantity alone."""

    temperature: float | None = None
    cooling_power: float | None = None
    cooling_scale: float | None = None
    battery_usage: float | None = None
    soc: float | None = None
    extra_arrivals_a: int = 0
    grid_sigma: float | None = None


NO_OVERRIDES = Overrides()


@dataclass
class ParkState:
    phase: np.ndarray
    counter: np.ndarray
    queue: int
    next_arrival: float

    @classmethod
    def initial(cls, park: ToolParkConfig, t0: int, rng: np.random.Generator) -> "ParkState":
        return cls(
            phase=np.zeros(park.machines, dtype=np.int64),
            counter=np.zeros(park.machines, dtype=np.int64),
            queue=0,
            next_arrival=t0 + rng.exponential(park.arrival_mean_min),
        )


@dataclass
class PlantState:
    t: int
    park_a: ParkState
    park_b: ParkState
    cooling_on: bool
    temp_buffer: deque
    cooling_pending: deque
    grid_buffer: deque  # (Grid[t-1], Grid[t-2])
    bc_prev: float
    bu_hist: deque  # (BU[t-1], BU[t-2])
    soc: float
    streams: Streams = field(repr=False)

    @property
    def battery_mode(self) -> int:
        return mode_of(self.bc_prev)


def initial_state(config: PlantConfig, seed: int, t_start: int, temperature_now: float) -> PlantState:
    streams = Streams(seed)
    idle = config.park_a.machines * config.park_a.idle_kw + config.park_b.machines * config.park_b.idle_kw
    return PlantState(
        t=t_start,
        park_a=ParkState.initial(config.park_a, t_start, streams["arrivals-a"]),
        park_b=ParkState.initial(config.park_b, t_start, streams["arrivals-b"]),
        cooling_on=False,
        temp_buffer=deque([temperature_now] * config.cooling_avg_min, maxlen=config.cooling_avg_min),
        cooling_pending=deque([0.0] * config.cooling_delay_min, maxlen=max(config.cooling_delay_min, 1)),
        grid_buffer=deque([idle, idle], maxlen=2),
        bc_prev=0.0,
        bu_hist=deque([0.0, 0.0], maxlen=2),
        soc=config.soc_init,
        streams=streams,
    )


def machine_power(park: ToolParkConfig, phase: np.ndarray, counter: np.ndarray) -> float:
    """Draw of one park given per-machine phases; ramps are linear between idle and plateau."""
    span = park.plateau_kw - park.idle_kw
    p = np.full(phase.shape, park.idle_kw)
    up = phase == RAMP_UP
    p[up] += span * (counter[up] + 1) / (park.ramp_up_min + 1)
    p[phase == ACTIVE] = park.plateau_kw
    down = phase == RAMP_DOWN
    p[down] += span * (park.ramp_down_min - counter[down]) / (park.ramp_down_min + 1)
    return float(p.sum())


def _advance_park(park: ToolParkConfig, s: ParkState, t: int, rng: np.random.Generator, extra: int) -> tuple[float, float]:
    while s.next_arrival <= t:
        s.queue += 1
        s.next_arrival += rng.exponential(park.arrival_mean_min)
    s.queue += extra

    busy = s.phase != IDLE
    s.counter[busy] += 1
    limits = np.array([0, park.ramp_up_min, park.job_min, park.ramp_down_min])
    done = busy & (s.counter >= limits[s.phase])
    s.phase[done] = (s.phase[done] + 1) % 4
    s.counter[done] = 0

    for m in np.flatnonzero(s.phase == IDLE):
        if s.queue == 0:
            break
        s.queue -= 1
        s.phase[m] = RAMP_UP
        s.counter[m] = 0

    utilization = float(np.count_nonzero(s.phase != IDLE)) / park.machines
    return machine_power(park, s.phase, s.counter), utilization


def step(state: PlantState, config: PlantConfig, temperature_now: float, overrides: Overrides = NO_OVERRIDES) -> tuple[PlantState, dict]:
    """Advance the plant by one minute and return the observation row (plus ``grid_noise``)."""
    t = state.t
    rs = state.streams
    # fixed draw counts per minute keep paired runs aligned
    z_machine = rs["machine-noise"].standard_normal(2)
    z_grid = rs["grid-noise"].standard_normal()
    z_cool = rs["cooling-noise"].standard_normal()
    z_bat = rs["battery-noise"].standard_normal()

    temp = temperature_now if overrides.temperature is None else overrides.temperature
    power_a, ut_a = _advance_park(config.park_a, state.park_a, t, rs["arrivals-a"], overrides.extra_arrivals_a)
    power_b, ut_b = _advance_park(config.park_b, state.park_b, t, rs["arrivals-b"], 0)
    tpa = power_a + config.machine_noise_kw * z_machine[0]
    tpb = power_b + config.machine_noise_kw * z_machine[1]

    state.temp_buffer.append(temp)
    avg_t = sum(state.temp_buffer) / len(state.temp_buffer)
    if avg_t > config.cooling_on_c:
        state.cooling_on = True
    elif avg_t < config.cooling_off_c:
        state.cooling_on = False
    scale = config.cooling_scale_kw_per_c if overrides.cooling_scale is None else overrides.cooling_scale
    required = scale * max(avg_t - config.cooling_reference_c, 0.0) if state.cooling_on else 0.0
    if config.cooling_delay_min > 0:
        delayed = state.cooling_pending[0]
        state.cooling_pending.append(required)
    else:
        delayed = required
    cl = max(delayed + config.cooling_noise_kw * z_cool, 0.0) if delayed > 0 else 0.0
    if overrides.cooling_power is not None:
        cl = overrides.cooling_power

    grid1, grid2 = state.grid_buffer[-1], state.grid_buffer[-2]
    bu1, bu2 = state.bu_hist[-1], state.bu_hist[-2]
    soc = min(max(state.soc + bu1 / 60.0 / config.battery_capacity_kwh, 0.0), 1.0)
    if overrides.soc is not None:
        soc = overrides.soc
    bc = battery_setpoint(
        grid1, grid2, state.soc, state.bc_prev,
        config.unload_start_kw, config.unload_stop_kw, config.soc_low, config.soc_high,
        config.battery_unload_kw, config.battery_load_kw,
    )
    w0, w1, w2 = config.battery_response
    bu = w0 * bc + w1 * bu1 + w2 * bu2
    if bc != 0.0:
        bu += config.battery_noise_kw * z_bat
    if overrides.battery_usage is not None:
        bu = overrides.battery_usage

    sigma = config.grid_noise_kw if overrides.grid_sigma is None else overrides.grid_sigma
    noise = sigma * z_grid
    grid = tpa + tpb + cl + bu + noise

    state.grid_buffer.append(grid)
    state.bu_hist.append(bu)
    state.bc_prev = bc
    state.soc = soc
    state.t = t + 1
    row = {
        "time": t, "Grid": grid, "TPa": tpa, "TPb": tpb, "UTa": ut_a, "UTb": ut_b, "CL": cl, "T": temp,
        "DT": daytime_hours(t), "BU": bu, "SOC": soc, "BC": bc, "grid_noise": noise,
    }
    return state, row


@dataclass
class PlantTrace:
    frame: pd.DataFrame  # ``time`` plus one column per summary-graph node
    grid_noise: np.ndarray
    seed: int
    config_hash: str

    def __len__(self) -> int:
        return len(self.frame)

    @property
    def t_start(self) -> int:
        return int(self.frame["time"].iloc[0])

    def row_of(self, t: int) -> int:
        return int(t) - self.t_start

    def to_csv(self, path: str | Path) -> None:
        out = self.frame.copy()
        out["grid_noise"] = self.grid_noise
        try:
            with open(path, "w") as fh:
                fh.write(f"# seed={self.seed} config_hash={self.config_hash}\n")
                out.to_csv(fh, index=False, float_format="%.17g")
        except OSError as exc:
            raise IoFailure(f"cannot write trace {path}: {exc}") from exc

    @classmethod
    def from_csv(cls, path: str | Path) -> "PlantTrace":
        try:
            with open(path) as fh:
                header = fh.readline()
            frame = pd.read_csv(path, comment="#", float_precision="round_trip")
        except OSError as exc:
            raise IoFailure(f"cannot read trace {path}: {exc}") from exc
        meta = dict(tok.split("=", 1) for tok in header.lstrip("# ").split())
        noise = frame.pop("grid_noise").to_numpy() if "grid_noise" in frame else np.full(len(frame), np.nan)
        return cls(frame=frame, grid_noise=noise, seed=int(meta.get("seed", -1)), config_hash=meta.get("config_hash", ""))


def simulate(config: PlantConfig, seed: int, t_start: int = 0, duration: int = 1440, injection=None) -> PlantTrace:
    """Run the plant for ``duration`` minutes starting at absolute minute ``t_start``.

    ``injection`` is any object with ``overrides(t) -> Overrides | None``.
    """
    if duration == 0:
        return PlantTrace(pd.DataFrame(columns=["time", *NODES]), np.zeros(0), int(seed), config.config_hash())
    if duration < config.warm_up_min:
        raise InvalidConfig(f"duration {duration} shorter than warm-up {config.warm_up_min}")
    temps = temperature_source(config.temperature, seed)
    state = initial_state(config, seed, t_start, temps.at(t_start))
    rows = []
    for t in range(t_start, t_start + duration):
        ov = injection.overrides(t) if injection is not None else None
        state, row = step(state, config, temps.at(t), ov or NO_OVERRIDES)
        rows.append(row)
    frame = pd.DataFrame(rows)
    noise = frame.pop("grid_noise").to_numpy()
    return PlantTrace(frame=frame[["time", *NODES]], grid_noise=noise, seed=int(seed), config_hash=config.config_hash())
