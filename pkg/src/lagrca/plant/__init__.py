"""Simulated manufacturing plant used as the benchmark data source."""

from importlib import resources
from pathlib import Path

from .config import PlantConfig, ToolParkConfig, TemperatureConfig, load_config, save_config
from .controller import BatteryController, battery_setpoint
from .peaks import PeakEvent, detect_peaks, detect_peaks_array
from .simulate import NODES, Overrides, PlantState, PlantTrace, simulate, step
from .temperature import BundledTrace, SyntheticDiurnal, temperature_source


def plant_graph_path() -> Path:
    return Path(str(resources.files("lagrca") / "data" / "plant_graph.yaml"))


def load_plant_graph():
    from ..graph import load_graph

    return load_graph(plant_graph_path())


__all__ = [
    "BatteryController", "BundledTrace", "NODES", "Overrides", "PeakEvent", "PlantConfig", "PlantState",
    "PlantTrace", "SyntheticDiurnal", "TemperatureConfig", "ToolParkConfig", "battery_setpoint",
    "detect_peaks", "detect_peaks_array", "load_config", "load_plant_graph", "plant_graph_path",
    "save_config", "simulate", "step", "temperature_source",
]
