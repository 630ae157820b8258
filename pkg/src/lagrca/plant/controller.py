"""Two-point battery controller.

The same logic drives the simulated plant and serves as the known
(noise-free) mechanism of the ``BC`` node during attribution, so both sides
must call :func:`battery_setpoint`.

The controller output is the battery power setpoint in kW: negative while
unloading, positive while loading, zero when idle.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit, vectorize

IDLE, LOAD, UNLOAD = 0, 1, -1


@njit(cache=True)
def battery_setpoint(grid1, grid2, soc1, bc1, start_unload, stop_unload, soc_low, soc_high, p_unload, p_load):
    avg = 0.5 * (grid1 + grid2)
    if soc1 < soc_low:
        return p_load
    if bc1 > 0.0 and soc1 < soc_high:
        return p_load
    if bc1 < 0.0:
        return -p_unload if avg > stop_unload else 0.0
    if avg > start_unload:
        return -p_unload
    return 0.0


@vectorize(["float64(float64, float64, float64, float64, float64, float64, float64, float64, float64, float64)"], cache=True)
def _battery_setpoint_vec(grid1, grid2, soc1, bc1, start_unload, stop_unload, soc_low, soc_high, p_unload, p_load):
    return battery_setpoint(grid1, grid2, soc1, bc1, start_unload, stop_unload, soc_low, soc_high, p_unload, p_load)


def mode_of(setpoint: float) -> int:
    return LOAD if setpoint > 0 else UNLOAD if setpoint < 0 else IDLE


@dataclass(frozen=True)
class BatteryController:
    """Hysteresis controller bound to node names of the summary graph.

    Inputs are the grid draw one and two steps back, the state of charge one
    step back, and the controller's own previous setpoint.
    """

    start_unload: float = 1400.0
    stop_unload: float = 1100.0
    soc_low: float = 0.70
    soc_high: float = 0.90
    p_unload: float = 300.0
    p_load: float = 150.0
    grid_node: str = "Grid"
    soc_node: str = "SOC"
    self_node: str = "BC"

    name = "battery_hysteresis"

    @property
    def inputs(self) -> tuple[tuple[str, int], ...]:
        return ((self.grid_node, 1), (self.grid_node, 2), (self.soc_node, 1), (self.self_node, 1))

    @property
    def params(self) -> np.ndarray:
        return np.array(
            [self.start_unload, self.stop_unload, self.soc_low, self.soc_high, self.p_unload, self.p_load],
            dtype=np.float64,
        )

    def __call__(self, values):
        """Evaluate on a mapping ``(node, relative lag) -> value or array``."""
        g1, g2, soc1, bc1 = (np.asarray(values[k], dtype=np.float64) for k in self.inputs)
        out = _battery_setpoint_vec(g1, g2, soc1, bc1, *self.params)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {"name": self.name, **asdict(self)}

    @classmethod
    def from_dict(cls, data: dict) -> "BatteryController":
        data = {k: v for k, v in data.items() if k != "name"}
        return cls(**data)


CONTROL_FUNCTIONS = {BatteryController.name: BatteryController}


def control_from_dict(data: dict):
    return CONTROL_FUNCTIONS[data["name"]].from_dict(data)
