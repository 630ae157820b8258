"""Plant configuration: declarative YAML with a bundled default."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from ..errors import InvalidConfig
from .controller import BatteryController


@dataclass(frozen=True)
class ToolParkConfig:
    machines: int = 10
    idle_kw: float = 10.0
    plateau_kw: float = 70.0
    ramp_up_min: int = 5
    ramp_down_min: int = 3
    job_min: int = 40
    arrival_mean_min: float = 6.0


@dataclass(frozen=True)
class TemperatureConfig:
    source: str = "bundled"
    trace_file: str | None = None  # None selects the packaged trace
    mean_c: float = 18.0
    amplitude_c: float = 5.0
    peak_hour: float = 15.0
    ar_coef: float = 0.98
    ar_sigma_c: float = 0.0


@dataclass(frozen=True)
class PlantConfig:
    park_a: ToolParkConfig = field(default_factory=ToolParkConfig)
    park_b: ToolParkConfig = field(default_factory=ToolParkConfig)
    machine_noise_kw: float = 10.0

    cooling_on_c: float = 19.0
    cooling_off_c: float = 18.0
    cooling_avg_min: int = 3
    cooling_delay_min: int = 5
    cooling_scale_kw_per_c: float = 60.0
    cooling_reference_c: float = 18.0
    cooling_noise_kw: float = 5.0

    unload_start_kw: float = 1400.0
    unload_stop_kw: float = 1100.0
    grid_avg_min: int = 2
    soc_low: float = 0.70
    soc_high: float = 0.90
    soc_init: float = 0.80
    battery_unload_kw: float = 300.0
    battery_load_kw: float = 150.0
    battery_capacity_kwh: float = 300.0
    battery_response: tuple[float, float, float] = (0.5, 0.3, 0.2)
    battery_noise_kw: float = 3.0

    grid_noise_kw: float = 30.0
    peak_limit_kw: float = 1500.0
    peak_min_width: int = 2

    warm_up_min: int = 120
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)

    def __post_init__(self):
        problems = []
        if not self.cooling_on_c > self.cooling_off_c:
            problems.append("cooling on-threshold must exceed off-threshold")
        if not self.unload_start_kw > self.unload_stop_kw:
            problems.append("unload start must exceed unload stop")
        if not 0.0 <= self.soc_low < self.soc_high <= 1.0:
            problems.append("SOC band must lie within [0, 1]")
        if not 0.0 <= self.soc_init <= 1.0:
            problems.append("initial SOC must lie within [0, 1]")
        powers = [
            self.machine_noise_kw, self.cooling_scale_kw_per_c, self.cooling_noise_kw, self.battery_unload_kw,
            self.battery_load_kw, self.battery_noise_kw, self.grid_noise_kw, self.peak_limit_kw,
        ]
        for park in (self.park_a, self.park_b):
            powers += [park.idle_kw, park.plateau_kw]
            if park.machines < 1 or park.ramp_up_min < 1 or park.ramp_down_min < 1 or park.job_min < 1:
                problems.append("tool parks need at least one machine and positive phase lengths")
            if park.arrival_mean_min <= 0:
                problems.append("arrival mean must be positive")
        if any(p < 0 for p in powers):
            problems.append("powers and noise scales must be nonnegative")
        if self.battery_capacity_kwh <= 0:
            problems.append("battery capacity must be positive")
        if len(self.battery_response) != 3 or abs(sum(self.battery_response) - 1.0) > 1e-9:
            problems.append("battery response weights must be three numbers summing to one")
        if self.cooling_avg_min < 1 or self.cooling_delay_min < 0 or self.grid_avg_min != 2:
            problems.append("averaging windows: cooling >= 1 minute, grid average fixed at 2 minutes")
        if problems:
            raise InvalidConfig("; ".join(problems))

    @property
    def controller(self) -> BatteryController:
        return BatteryController(
            start_unload=self.unload_start_kw,
            stop_unload=self.unload_stop_kw,
            soc_low=self.soc_low,
            soc_high=self.soc_high,
            p_unload=self.battery_unload_kw,
            p_load=self.battery_load_kw,
        )

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["battery_response"] = list(self.battery_response)
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PlantConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        try:
            for key in ("park_a", "park_b"):
                if key in data:
                    data[key] = ToolParkConfig(**data[key])
            if "temperature" in data:
                data["temperature"] = TemperatureConfig(**data["temperature"])
            if "battery_response" in data:
                data["battery_response"] = tuple(float(x) for x in data["battery_response"])
            return cls(**data)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_overrides(self, **kwargs) -> "PlantConfig":
        return replace(self, **kwargs)


def default_config_path() -> Path:
    return Path(str(resources.files("lagrca") / "data" / "plant_default.yaml"))


def load_config(path: str | Path | None = None) -> PlantConfig:
    path = Path(path) if path is not None else default_config_path()
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise InvalidConfig(f"cannot read config {path}: {exc}") from exc
    return PlantConfig.from_dict(data)


def save_config(config: PlantConfig, path: str | Path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)
