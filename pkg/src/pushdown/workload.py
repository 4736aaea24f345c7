"""Synthetic join workloads: Zipf key draws, DH/CH/DCH presets and drift."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

# value size (bytes), per-function CPU (seconds); ratios follow the
# data-heavy / compute-heavy / both workloads, scaled to desk size.
PRESETS = {
    "DH": dict(value_size=100_000, tc=0.0001),
    "CH": dict(value_size=1_000, tc=0.1),
    "DCH": dict(value_size=100_000, tc=0.1),
}


@dataclass(frozen=True)
class WorkloadSpec:
    n_tuples: int = 100_000
    key_universe: int = 10_000
    zipf_z: float = 0.0
    preset: str = "DH"
    value_size: Optional[int] = None   # overrides preset
    tc: Optional[float] = None         # mean seconds per function, overrides preset
    tc_spread: float = 0.0             # per-key tc uniform in tc*(1 +- spread)
    key_size: int = 16
    param_size: int = 100
    result_size: int = 100
    n_shifts: int = 0
    drift_seed: int = 7
    store_seed: int = 0
    update_rate: float = 0.0           # store updates per simulated second
    mode: str = "batch"                # batch | stream
    arrival_rate: float = 0.0          # tuples/s, stream mode
    duration: float = 0.0              # seconds, stream mode
    warmup_fraction: float = 0.1

    def __post_init__(self):
        if self.zipf_z < 0:
            raise ValueError("zipf_z must be >= 0")
        if self.n_shifts < 0:
            raise ValueError("n_shifts must be >= 0")
        if self.key_universe < 1:
            raise ValueError("key_universe must be >= 1")
        if self.preset not in PRESETS and self.preset != "custom":
            raise ValueError(f"unknown preset {self.preset!r}")
        if self.preset == "custom" and (self.value_size is None or self.tc is None):
            raise ValueError("custom preset needs value_size and tc")
        if self.mode not in ("batch", "stream"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "stream" and (self.arrival_rate <= 0 or self.duration <= 0):
            raise ValueError("stream mode needs arrival_rate and duration")
        if not 0 <= self.tc_spread < 1:
            raise ValueError("tc_spread must be in [0, 1)")

    @property
    def s_v(self) -> int:
        return self.value_size if self.value_size is not None else PRESETS[self.preset]["value_size"]

    @property
    def tc_mean(self) -> float:
        return self.tc if self.tc is not None else PRESETS[self.preset]["tc"]

    @property
    def tuple_count(self) -> int:
        if self.mode == "stream":
            return int(round(self.arrival_rate * self.duration))
        return self.n_tuples

    def with_(self, **kw) -> "WorkloadSpec":
        return replace(self, **kw)


@dataclass
class Trace:
    """A generated tuple stream: ``keys[i]`` is the join key of tuple ``i``."""

    keys: np.ndarray
    ranks: np.ndarray
    param_size: int
    arrivals: Optional[np.ndarray] = None
    rank_maps: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.keys)


def zipf_pmf(universe: int, z: float) -> np.ndarray:
    """Truncated Zipf mass over ranks 1..universe (z = 0 is uniform)."""
    w = np.arange(1, universe + 1, dtype=np.float64) ** (-z)
    return w / w.sum()


def _permutation(universe: int, rng: np.random.Generator) -> np.ndarray:
    return rng.permutation(universe).astype(np.int64)


def generate(spec: WorkloadSpec, seed: int) -> Trace:
    """Draw ``spec.tuple_count`` keys; ranks are Zipf(z), rank->key is a seeded permutation."""
    rng = np.random.default_rng(seed)
    n = spec.tuple_count
    cdf = np.cumsum(zipf_pmf(spec.key_universe, spec.zipf_z))
    cdf[-1] = 1.0
    ranks = np.searchsorted(cdf, rng.random(n), side="right").astype(np.int64)
    rank_map = _permutation(spec.key_universe, rng)
    arrivals = None
    if spec.mode == "stream":
        gaps = rng.exponential(1.0 / spec.arrival_rate, size=n)
        arrivals = np.cumsum(gaps)
    return Trace(rank_map[ranks], ranks, spec.param_size, arrivals, [rank_map])


def apply_drift(spec: WorkloadSpec, trace: Trace) -> Trace:
    """Re-permute rank->key at ``n_shifts`` equally spaced points of the stream."""
    if spec.n_shifts == 0:
        return trace
    n = len(trace)
    segments = spec.n_shifts + 1
    bounds = [round(i * n / segments) for i in range(segments + 1)]
    rng = np.random.default_rng(spec.drift_seed)
    keys = trace.keys.copy()
    maps = [trace.rank_maps[0]]
    prev = trace.rank_maps[0]
    for s in range(1, segments):
        perm = _permutation(spec.key_universe, rng)
        if spec.key_universe > 1 and perm[0] == prev[0]:
            perm[[0, 1]] = perm[[1, 0]]  # the hottest key must change
        lo, hi = bounds[s], bounds[s + 1]
        keys[lo:hi] = perm[trace.ranks[lo:hi]]
        maps.append(perm)
        prev = perm
    return Trace(keys, trace.ranks, trace.param_size, trace.arrivals, maps)


def build_trace(spec: WorkloadSpec, seed: int) -> Trace:
    return apply_drift(spec, generate(spec, seed))


def key_costs(spec: WorkloadSpec) -> np.ndarray:
    """Per-key function cost in seconds (deterministic in ``store_seed``)."""
    if spec.tc_spread == 0:
        return np.full(spec.key_universe, spec.tc_mean)
    rng = np.random.default_rng(spec.store_seed)
    return spec.tc_mean * (1 + spec.tc_spread * rng.uniform(-1, 1, spec.key_universe))


def dump_trace(trace: Trace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tuple_id", "key", "param_size", "rank"])
        for i, (k, r) in enumerate(zip(trace.keys.tolist(), trace.ranks.tolist())):
            w.writerow([i, k, trace.param_size, r])


def load_trace(path) -> Trace:
    keys, ranks, psize = [], [], None
    with open(Path(path), newline="") as fh:
        for i, row in enumerate(csv.DictReader(fh)):
            if int(row["tuple_id"]) != i:
                raise ValueError(f"{path}: tuple ids must be dense and ordered (line {i + 2})")
            keys.append(int(row["key"]))
            ranks.append(int(row.get("rank") or 0))
            psize = int(row["param_size"])
    return Trace(np.asarray(keys, dtype=np.int64), np.asarray(ranks, dtype=np.int64),
                 psize if psize is not None else 0)
