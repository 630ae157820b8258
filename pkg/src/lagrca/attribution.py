"""IT-scores and Shapley attributions of noise terms for an observed anomaly.

The outlier probability ``q(I)`` re-randomizes the noises of the coalition
``I`` and keeps every other noise at its observed (inverted) value.  All
coalitions share one matrix of noise draws (common random numbers), which
makes ``q`` a deterministic function of the coalition.  Hence the per
permutation contributions telescope and the attributions always sum to the
IT-score exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import pandas as pd

from . import _engine
from .errors import AttributionError, TooManyNodesForExact, ZeroVariance
from .graph import TruncationMode, UnfoldedNode
from .mechanisms import FittedSCM, observed_noises, propagate

log = logging.getLogger(__name__)

DEFAULT_SAMPLES = 2000
DEFAULT_PERMUTATIONS = 200
MAX_EXACT = 12
EVENT_TOL = 1e-9


def anomaly_score(x, mean: float, std: float):
    """z-score of ``x`` under the training statistics of the target."""
    if not std > 0:
        raise ZeroVariance("target has zero training variance")
    return (x - mean) / std


@dataclass
class AnomalyEvent:
    t: int
    observed: dict[UnfoldedNode, float]
    target_value: float
    score: float


def make_event(scm: FittedSCM, frame: pd.DataFrame, t: int) -> AnomalyEvent:
    """Collect the observations the unfolded model needs for an anomaly at row ``t``."""
    if hasattr(frame, "frame"):
        frame = frame.frame
    deepest = max(n.lag for n in scm.unfolded.nodes)
    if t - deepest < 0 or t >= len(frame):
        raise AttributionError(f"row {t} does not leave room for lags up to {deepest}")
    columns = {name: frame[name].to_numpy(dtype=np.float64) for name in scm.unfolded.summary.nodes}
    observed = {n: float(columns[n.node][t - n.lag]) for n in scm.unfolded.nodes}
    x = observed[scm.target]
    score = anomaly_score(x, scm.training.target_mean, scm.training.target_std)
    return AnomalyEvent(t=t, observed=observed, target_value=x, score=float(score))


def _clamp(count: int, samples: int) -> float:
    return min(max(count / samples, 1.0 / (samples + 1)), 1.0)


class CoalitionEstimator:
    """Monte-Carlo estimator of ``q(I)`` with a shared draw matrix and a result cache."""

    def __init__(self, scm: FittedSCM, event: AnomalyEvent, samples: int = DEFAULT_SAMPLES, seed: int = 0,
                 draws: np.ndarray | None = None):
        """``draws`` optionally replaces the sampled noise matrix (rows = draws, columns = attributable nodes)."""
        self.scm = scm
        self.event = event
        self.seed = int(seed)
        self.units = scm.attributable
        self.unit_index = {u: k for k, u in enumerate(self.units)}
        self.observed_noise = observed_noises(scm, event.observed)
        noise_seq, perm_seq = np.random.SeedSequence(self.seed).spawn(2)
        if draws is not None:
            draws = np.ascontiguousarray(draws, dtype=np.float64)
            if draws.ndim != 2 or draws.shape[1] != len(self.units) or len(draws) == 0:
                raise AttributionError(f"draws must have shape (M, {len(self.units)})")
            self.Z = draws
        else:
            rng = np.random.default_rng(noise_seq)
            self.Z = np.empty((int(samples), len(self.units)))
            for k, u in enumerate(self.units):
                self.Z[:, k] = scm.noise[u].sample(rng, int(samples))
        self.samples = len(self.Z)
        self.perm_rng = np.random.default_rng(perm_seq)
        self._cache: dict[int, float] = {}
        self._compiled = _engine.supports(scm)
        mean, std = scm.training.target_mean, scm.training.target_std
        anomaly_score(0.0, mean, std)
        self._mean, self._std = mean, std
        self._tol = EVENT_TOL * max(1.0, abs(event.score))
        if self._compiled:
            self.plan = _engine.compile_plan(scm)
            self._base = np.array([event.observed[n] for n in self.plan.nodes])
            self._obs = np.array([self.observed_noise[u] for u in self.units])

    # -- cache ---------------------------------------------------------------
    def mask_of(self, subset: Iterable[UnfoldedNode]) -> int:
        mask = 0
        for u in subset:
            if u not in self.unit_index:
                raise AttributionError(f"{u} is not an attributable node")
            mask |= 1 << self.unit_index[u]
        return mask

    def _store(self, mask: int, q: float) -> float:
        # insert-once: the first value stays authoritative
        return self._cache.setdefault(mask, q)

    def cached(self, mask: int) -> float | None:
        return self._cache.get(mask)

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    # -- evaluation ----------------------------------------------------------
    def _counts_for_masks(self, masks: np.ndarray) -> np.ndarray:
        if self._compiled:
            p = self.plan
            return _engine.count_masks(
                masks, self._base, self._obs, self.Z, p.kind, p.par_ptr, p.par_idx, p.par_coef, p.intercept,
                p.ctrl, p.unit, p.relevant, p.target, self._mean, self._std, self.event.score, self._tol,
            )
        return np.array([self._count_numpy(row) for row in masks], dtype=np.int64)

    def _count_numpy(self, row: np.ndarray) -> int:
        noises = {
            u: (self.Z[:, k] if row[k] else np.full(self.samples, self.observed_noise[u]))
            for k, u in enumerate(self.units)
        }
        dangling = {n: np.full(self.samples, v) for n, v in self.event.observed.items() if self.scm.is_fixed(n)}
        x = propagate(self.scm, noises, dangling)
        z = (x - self._mean) / self._std
        return int(np.count_nonzero(z >= self.event.score - self._tol))

    def _rows(self, masks: Iterable[int]) -> np.ndarray:
        masks = list(masks)
        U = len(self.units)
        rows = np.zeros((len(masks), U), dtype=np.bool_)
        for r, mask in enumerate(masks):
            for k in range(U):
                rows[r, k] = (mask >> k) & 1
        return rows

    def q_masks(self, masks: Iterable[int]) -> list[float]:
        masks = list(masks)
        missing = sorted({m for m in masks if m not in self._cache})
        if missing:
            counts = self._counts_for_masks(self._rows(missing))
            for m, c in zip(missing, counts):
                self._store(m, _clamp(int(c), self.samples))
        return [self._cache[m] for m in masks]

    def q(self, subset: Iterable[UnfoldedNode]) -> float:
        return self.q_masks([self.mask_of(subset)])[0]

    def prefix_q(self, perms: np.ndarray) -> np.ndarray:
        """``q`` of every prefix of each permutation (rows of unit indices)."""
        P, U = perms.shape
        if self._compiled:
            p = self.plan
            counts = _engine.count_prefixes(
                perms, self._base, self._obs, self.Z, p.kind, p.par_ptr, p.par_idx, p.par_coef, p.intercept,
                p.ctrl, p.unit, p.relevant, p.desc_ptr, p.desc_idx, p.target, self._mean, self._std,
                self.event.score, self._tol,
            )
        else:
            counts = np.zeros((P, U + 1), dtype=np.int64)
            for r in range(P):
                row = np.zeros(U, dtype=np.bool_)
                counts[r, 0] = self._count_numpy(row)
                for k in range(U):
                    row[perms[r, k]] = True
                    counts[r, k + 1] = self._count_numpy(row)
        out = np.empty((P, U + 1))
        for r in range(P):
            mask = 0
            out[r, 0] = self._store(0, _clamp(int(counts[r, 0]), self.samples))
            for k in range(U):
                mask |= 1 << int(perms[r, k])
                out[r, k + 1] = self._store(mask, _clamp(int(counts[r, k + 1]), self.samples))
        return out

    @property
    def full_mask(self) -> int:
        return (1 << len(self.units)) - 1


def estimate_q(estimator: CoalitionEstimator, subset: Iterable[UnfoldedNode]) -> float:
    return estimator.q(subset)


def it_score(event: AnomalyEvent, estimator: CoalitionEstimator) -> float:
    """``-log q(U)``: the calibrated surprise of the target observation."""
    return -math.log(estimator.q_masks([estimator.full_mask])[0])


@dataclass
class AttributionResult:
    phi: dict[UnfoldedNode, float]
    it_score: float
    samples: int
    permutations: int | None
    exact: bool
    seed: int
    mode: str = TruncationMode.TRUNCATED.value
    max_lag: int = 0
    t: int | None = None
    meta: dict = field(default_factory=dict)

    def per_node(self) -> dict[str, dict[int, float]]:
        out: dict[str, dict[int, float]] = {}
        for u, v in self.phi.items():
            out.setdefault(u.node, {})[u.lag] = v
        return out

    def to_frame(self) -> pd.DataFrame:
        rows = [{"node": u.node, "lag": u.lag, "phi": v} for u, v in sorted(self.phi.items())]
        return pd.DataFrame(rows, columns=["node", "lag", "phi"])

    def to_dict(self) -> dict:
        return {
            "it_score": self.it_score,
            "samples": self.samples,
            "permutations": self.permutations,
            "exact": self.exact,
            "seed": self.seed,
            "mode": self.mode,
            "max_lag": self.max_lag,
            "t": self.t,
            "meta": self.meta,
            "phi": [[u.node, u.lag, v] for u, v in sorted(self.phi.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "AttributionResult":
        phi = {UnfoldedNode(n, int(l)): float(v) for n, l, v in data["phi"]}
        return cls(
            phi=phi,
            it_score=float(data["it_score"]),
            samples=int(data["samples"]),
            permutations=data.get("permutations"),
            exact=bool(data["exact"]),
            seed=int(data["seed"]),
            mode=data.get("mode", TruncationMode.TRUNCATED.value),
            max_lag=int(data.get("max_lag", 0)),
            t=data.get("t"),
            meta=dict(data.get("meta", {})),
        )

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path: str | Path) -> "AttributionResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _shapley_weights(n: int) -> np.ndarray:
    return np.array([math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)])


def shapley_attributions(
    event: AnomalyEvent,
    estimator: CoalitionEstimator,
    strategy: str = "permutations",
    permutations: int = DEFAULT_PERMUTATIONS,
    max_exact: int = MAX_EXACT,
) -> AttributionResult:
    """Shapley values of the log-probability contributions ``log q(I) / q(I + u)``.

    ``strategy`` is ``"exact"`` (subset enumeration, at most ``max_exact``
    attributable nodes), ``"permutations"`` (``permutations`` uniformly drawn
    orderings), or ``"auto"`` (exact when small enough).
    """
    units = estimator.units
    U = len(units)
    if strategy == "auto":
        strategy = "exact" if U <= min(max_exact, 10) else "permutations"
    phi = np.zeros(U)
    if U == 0:
        pass
    elif strategy == "exact":
        if U > max_exact:
            raise TooManyNodesForExact(f"{U} attributable nodes exceed the exact cap of {max_exact}")
        all_masks = list(range(1 << U))
        logq = np.log(np.array(estimator.q_masks(all_masks)))
        weights = _shapley_weights(U)
        sizes = np.array([bin(m).count("1") for m in all_masks])
        for k in range(U):
            bit = 1 << k
            without = np.array([m for m in all_masks if not m & bit])
            contrib = logq[without] - logq[without | bit]
            phi[k] = float(np.sum(weights[sizes[without]] * contrib))
    elif strategy == "permutations":
        perms = np.array([estimator.perm_rng.permutation(U) for _ in range(permutations)], dtype=np.int64)
        logq = np.log(estimator.prefix_q(perms))
        contrib = logq[:, :-1] - logq[:, 1:]
        np.add.at(phi, perms.ravel(), contrib.ravel())
        phi /= permutations
    else:
        raise AttributionError(f"unknown strategy {strategy!r}")

    score = it_score(event, estimator)
    q_empty = estimator.q_masks([0])[0]
    if q_empty < 1.0:
        log.warning("observed noises do not reproduce the anomaly (q(empty)=%.4f)", q_empty)
    return AttributionResult(
        phi={u: float(v) for u, v in zip(units, phi)},
        it_score=score,
        samples=estimator.samples,
        permutations=None if strategy == "exact" else permutations,
        exact=strategy == "exact",
        seed=estimator.seed,
        mode=estimator.scm.mode.value,
        max_lag=estimator.scm.unfolded.max_lag,
        t=event.t,
        meta={"q_empty": q_empty, "n_units": U},
    )


def attribute(scm: FittedSCM, frame, t: int, samples: int = DEFAULT_SAMPLES, permutations: int = DEFAULT_PERMUTATIONS,
              seed: int = 0, strategy: str = "permutations") -> AttributionResult:
    """Convenience wrapper: build the event and estimator, then attribute."""
    event = make_event(scm, frame, t)
    est = CoalitionEstimator(scm, event, samples=samples, seed=seed)
    return shapley_attributions(event, est, strategy=strategy, permutations=permutations)
