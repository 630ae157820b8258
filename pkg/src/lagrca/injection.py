"""Injections, paired baseline/injected runs and attributable peak extraction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import PrefixDivergence, SimulationError, UnknownInjectionKind
from .plant.config import PlantConfig
from .plant.peaks import PeakEvent, detect_peaks
from .plant.simulate import Overrides, PlantTrace, simulate

log = logging.getLogger(__name__)

DEFAULT_TAU = 60


@dataclass(frozen=True)
class InjectionKind:
    name: str
    node: str
    duration: int
    params: dict


KINDS = {
    k.name: k
    for k in (
        InjectionKind("temperature-surge", "T", 10, {"temperature_c": 31.0}),
        InjectionKind("cooling-surge", "CL", 10, {"cooling_kw": 265.0}),
        InjectionKind("cooling-scale", "CL", 10, {"scale_kw_per_c": 75.0}),
        InjectionKind("bat-fail", "BU", 15, {"battery_kw": 0.0}),
        InjectionKind("soc-loss", "SOC", 0, {"soc": 0.69}),
        InjectionKind("work-arrival", "UTa", 3, {"items": 3}),
        InjectionKind("grid-noise", "Grid", 10, {"sigma_kw": 550.0}),
    )
}


@dataclass(frozen=True)
class InjectionSpec:
    kind: str
    t_injection: int
    duration: int
    params: dict = field(default_factory=dict, hash=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UnknownInjectionKind(f"unknown injection kind {self.kind!r}; expected one of {sorted(KINDS)}")
        if self.duration < 0:
            raise SimulationError("injection duration must be nonnegative")

    @classmethod
    def make(cls, kind: str, t_injection: int, duration: int | None = None, **params) -> "InjectionSpec":
        if kind not in KINDS:
            raise UnknownInjectionKind(f"unknown injection kind {kind!r}; expected one of {sorted(KINDS)}")
        base = KINDS[kind]
        return cls(kind, int(t_injection), base.duration if duration is None else int(duration), {**base.params, **params})

    @property
    def affected_node(self) -> str:
        return KINDS[self.kind].node

    @property
    def window(self) -> tuple[int, int]:
        return self.t_injection, self.t_injection + self.duration

    def active(self, t: int) -> bool:
        if self.duration == 0:
            return t == self.t_injection
        return self.t_injection <= t < self.t_injection + self.duration

    def overrides(self, t: int) -> Overrides | None:
        p = self.params
        if self.kind == "work-arrival":
            # items spread over the arrival window, one per minute from t_I
            n, span = int(p["items"]), max(self.duration, 1)
            offsets = np.floor(np.arange(n) * span / n).astype(int)
            extra = int(np.count_nonzero(self.t_injection + offsets == t))
            return Overrides(extra_arrivals_a=extra) if extra else None
        if not self.active(t):
            return None
        if self.kind == "temperature-surge":
            return Overrides(temperature=p["temperature_c"])
        if self.kind == "cooling-surge":
            return Overrides(cooling_power=p["cooling_kw"])
        if self.kind == "cooling-scale":
            return Overrides(cooling_scale=p["scale_kw_per_c"])
        if self.kind == "bat-fail":
            return Overrides(battery_usage=p["battery_kw"])
        if self.kind == "soc-loss":
            return Overrides(soc=p["soc"])
        if self.kind == "grid-noise":
            return Overrides(grid_sigma=p["sigma_kw"])
        raise UnknownInjectionKind(self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t_injection": self.t_injection, "duration": self.duration, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionSpec":
        return cls(d["kind"], int(d["t_injection"]), int(d["duration"]), dict(d.get("params", {})))


def apply_injection(spec: InjectionSpec | None, config: PlantConfig, seed: int, t_start: int, duration: int) -> PlantTrace:
    """Simulate with ``spec`` active; ``None`` gives the baseline."""
    return simulate(config, seed, t_start, duration, injection=spec)


@dataclass
class PairedRun:
    baseline: PlantTrace
    injected: PlantTrace
    spec: InjectionSpec
    seed: int

    def __post_init__(self):
        check_prefix(self.baseline, self.injected, self.spec.t_injection)


def check_prefix(baseline: PlantTrace, injected: PlantTrace, t_injection: int) -> None:
    n = baseline.row_of(t_injection)
    a = baseline.frame.iloc[:n].to_numpy()
    b = injected.frame.iloc[:n].to_numpy()
    if a.shape != b.shape or not np.array_equal(a, b) or not np.array_equal(baseline.grid_noise[:n], injected.grid_noise[:n]):
        raise PrefixDivergence(f"baseline and injected traces differ before t_I={t_injection}")


def paired_run(
    config: PlantConfig,
    seed: int,
    spec: InjectionSpec,
    t_start: int,
    tau: int = DEFAULT_TAU,
    baseline: PlantTrace | None = None,
) -> PairedRun:
    if spec.t_injection < t_start + config.warm_up_min:
        raise SimulationError(f"t_I={spec.t_injection} falls inside the warm-up period")
    duration = spec.t_injection + tau - t_start + 1
    if baseline is None:
        baseline = apply_injection(None, config, seed, t_start, duration)
    injected = apply_injection(spec, config, seed, t_start, duration)
    return PairedRun(baseline=baseline, injected=injected, spec=spec, seed=seed)


@dataclass(frozen=True)
class AttributablePeak:
    peak: PeakEvent
    spec: InjectionSpec
    seed: int

    @property
    def node(self) -> str:
        return self.spec.affected_node

    @property
    def window(self) -> tuple[int, int]:
        return self.spec.window

    @property
    def delay(self) -> int:
        """Minutes between the end of the injection window and the peak."""
        return self.peak.t - (self.spec.t_injection + self.spec.duration)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "node": self.node, "delay": self.delay, "spec": self.spec.to_dict(), "peak": self.peak.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "AttributablePeak":
        return cls(PeakEvent.from_dict(d["peak"]), InjectionSpec.from_dict(d["spec"]), int(d["seed"]))


def select_attributable(
    injected_peaks: Iterable[PeakEvent], baseline_peaks: list[PeakEvent], t_injection: int, tau: int
) -> list[PeakEvent]:
    kept = []
    for p in injected_peaks:
        if not t_injection <= p.t <= t_injection + tau:
            continue
        rivals = [b for b in baseline_peaks if b.overlaps(p)]
        if all(p.magnitude > b.magnitude for b in rivals):
            kept.append(p)
    return kept


def attributable_peaks(run: PairedRun, tau: int = DEFAULT_TAU, limit: float = 1500.0, min_width: int = 2) -> list[AttributablePeak]:
    inj = detect_peaks(run.injected, limit, min_width)
    base = detect_peaks(run.baseline, limit, min_width)
    return [AttributablePeak(p, run.spec, run.seed) for p in select_attributable(inj, base, run.spec.t_injection, tau)]


@dataclass
class Corpus:
    """Benchmark inventory: attributable peaks plus the injected traces they live in."""

    peaks: list[AttributablePeak]
    traces: dict[tuple[str, int], PlantTrace]
    baselines: dict[int, PlantTrace]
    t_start: int
    t_injection: int
    tau: int

    def counts(self) -> dict[str, int]:
        out = {k: 0 for k in KINDS}
        for p in self.peaks:
            out[p.spec.kind] += 1
        return out

    def trace_of(self, peak: AttributablePeak) -> PlantTrace:
        return self.traces[(peak.spec.kind, peak.seed)]


def build_corpus(
    config: PlantConfig,
    seeds: Iterable[int],
    kinds: Iterable[str] | None = None,
    t_start: int = 0,
    t_injection: int | None = None,
    tau: int = DEFAULT_TAU,
) -> Corpus:
    kinds = list(KINDS) if kinds is None else list(kinds)
    t_injection = t_start + config.warm_up_min if t_injection is None else t_injection
    peaks: list[AttributablePeak] = []
    traces: dict[tuple[str, int], PlantTrace] = {}
    baselines: dict[int, PlantTrace] = {}
    for seed in seeds:
        baseline = None
        for kind in kinds:
            spec = InjectionSpec.make(kind, t_injection)
            run = paired_run(config, seed, spec, t_start, tau, baseline=baseline)
            baseline = run.baseline
            found = attributable_peaks(run, tau, config.peak_limit_kw, config.peak_min_width)
            log.debug("seed %s %s: %d attributable peaks", seed, kind, len(found))
            if found:
                traces[(kind, seed)] = run.injected
            peaks.extend(found)
        if baseline is not None:
            baselines[seed] = baseline
    peaks.sort(key=lambda p: (p.spec.kind, p.seed, p.peak.t))
    return Corpus(peaks=peaks, traces=traces, baselines=baselines, t_start=t_start, t_injection=t_injection, tau=tau)
