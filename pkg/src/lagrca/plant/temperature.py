"""Outside temperature by absolute simulated minute."""

from __future__ import annotations

import math
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import MissingTraceFile
from .config import TemperatureConfig

MINUTES_PER_DAY = 1440


def daytime_hours(minute: int) -> float:
    return (minute % MINUTES_PER_DAY) / 60.0


def bundled_trace_path() -> Path:
    return Path(str(resources.files("lagrca") / "data" / "temperature.csv"))


@lru_cache(maxsize=8)
def _load_trace(path: str) -> tuple[np.ndarray, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise MissingTraceFile(f"temperature trace {p} not found")
    frame = pd.read_csv(p, comment="#", float_precision="round_trip")
    return frame["hour"].to_numpy(dtype=np.float64), frame["temperature_c"].to_numpy(dtype=np.float64)


class BundledTrace:
    """Hourly readings linearly interpolated to minutes; wraps around at the end."""

    def __init__(self, path: str | Path | None = None):
        self.path = str(path) if path is not None else str(bundled_trace_path())
        self.hours, self.values = _load_trace(self.path)
        self.period_h = float(self.hours[-1] + (self.hours[1] - self.hours[0]))

    def at(self, minute: int) -> float:
        h = (minute / 60.0) % self.period_h
        return float(np.interp(h, self.hours, self.values, period=self.period_h))


class SyntheticDiurnal:
    """Sinusoidal day cycle peaking at ``peak_hour`` plus a seeded AR(1) perturbation."""

    def __init__(self, mean_c=18.0, amplitude_c=5.0, peak_hour=15.0, ar_coef=0.98, ar_sigma_c=0.0, seed=0):
        self.mean_c = mean_c
        self.amplitude_c = amplitude_c
        self.peak_hour = peak_hour
        self.ar_coef = ar_coef
        self.ar_sigma_c = ar_sigma_c
        self.rng = np.random.default_rng(seed)
        self._perturbation = [0.0]

    def diurnal(self, minute: int) -> float:
        h = daytime_hours(minute)
        return self.mean_c + self.amplitude_c * math.cos(2 * math.pi * (h - self.peak_hour) / 24.0)

    def at(self, minute: int) -> float:
        if minute < 0:
            raise ValueError("synthetic temperature is defined for minute >= 0")
        if self.ar_sigma_c == 0.0:
            return self.diurnal(minute)
        while len(self._perturbation) <= minute:
            prev = self._perturbation[-1]
            self._perturbation.append(self.ar_coef * prev + self.rng.normal(0.0, self.ar_sigma_c))
        return self.diurnal(minute) + self._perturbation[minute]


def temperature_source(config: TemperatureConfig, seed: int = 0):
    if config.source == "bundled":
        return BundledTrace(config.trace_file)
    if config.source == "synthetic":
        return SyntheticDiurnal(config.mean_c, config.amplitude_c, config.peak_hour, config.ar_coef, config.ar_sigma_c, seed)
    raise ValueError(f"unknown temperature source {config.source!r}")
