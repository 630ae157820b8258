"""Grid peak detection.

A peak is a maximal run of samples strictly above the limit.  Its turning
points are found by walking outward from the run's maximum while the next
sample does not rise; plateaus therefore extend the search.  The width is the
distance between the two turning points, so an isolated one-sample spike has
width 2 and only a peak touching the series edge can fall short.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PeakEvent:
    t: int  # absolute minute of the maximum
    magnitude: float
    start: int  # left turning point (absolute minute)
    end: int  # right turning point

    @property
    def width(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "PeakEvent") -> bool:
        return self.start <= other.end and other.start <= self.end

    def to_dict(self) -> dict:
        return {"t": self.t, "magnitude": self.magnitude, "start": self.start, "end": self.end}

    @classmethod
    def from_dict(cls, d: dict) -> "PeakEvent":
        return cls(int(d["t"]), float(d["magnitude"]), int(d["start"]), int(d["end"]))


def turning_points(x: np.ndarray, i: int) -> tuple[int, int]:
    left = i
    while left > 0 and x[left - 1] <= x[left]:
        left -= 1
    right = i
    while right < len(x) - 1 and x[right + 1] <= x[right]:
        right += 1
    return left, right


def detect_peaks_array(x, limit: float = 1500.0, min_width: int = 2, t0: int = 0) -> list[PeakEvent]:
    x = np.asarray(x, dtype=np.float64)
    above = x > limit
    if not above.any():
        return []
    edges = np.diff(np.concatenate([[0], above.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1)
    peaks = []
    for s, e in zip(starts, ends):
        i = int(s) + int(np.argmax(x[s:e]))
        left, right = (int(v) for v in turning_points(x, i))
        if right - left >= min_width:
            peaks.append(PeakEvent(t=t0 + i, magnitude=float(x[i]), start=t0 + left, end=t0 + right))
    return peaks


def detect_peaks(trace, limit: float = 1500.0, min_width: int = 2, column: str = "Grid") -> list[PeakEvent]:
    frame = trace.frame if hasattr(trace, "frame") else trace
    return detect_peaks_array(frame[column].to_numpy(), limit, min_width, int(frame["time"].iloc[0]))
