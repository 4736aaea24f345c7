"""Acceptance criteria shared by ``pushdown accept`` and the test suite.

Each ``check_*`` function returns a :class:`Result`.  Simulation sweeps are
memoised per process so criteria that read the same sweep do not rerun it.
"""
from __future__ import annotations

import functools
import io
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from statistics import mean
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

from . import balance, skirental
from .cache import TieredCache
from .cli import Cell, Experiment, RunConfig, run_cells, run_rows, write_csv
from .engine import ALL_STRATEGIES, EngineConfig
from .frequency import LossyCounter
from .sim import ClusterSpec, run
from .workload import WorkloadSpec

ZIPF = (0.0, 0.5, 1.0, 1.5)
FULL_SEEDS = (0, 1, 2)
DRIFT_ZIPF = (0.0, 1.0, 1.5)
DRIFT_SHIFTS = 10


@dataclass
class Result:
    number: int
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"criterion {self.number:2d} {'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


# -- 1. ski rental -----------------------------------------------------------

def _rand_frac(rng: random.Random, lo: int, hi: int, den: int = 64) -> Fraction:
    return Fraction(rng.randint(lo * den, hi * den), den)


def ski_rental_bound(trials: int = 10_000, seed: int = 1) -> Tuple[bool, str]:
    rng = random.Random(seed)
    worst = Fraction(0)
    for _ in range(trials):
        r = _rand_frac(rng, 1, 50) + Fraction(1, 64)
        b_r = _rand_frac(rng, 0, 1) * r * Fraction(63, 64)
        b = _rand_frac(rng, 0, 500)
        p = skirental.SkiParams(r, b, b_r)
        n = rng.randint(1, 400)
        lhs = skirental.policy_cost(p, n)
        rhs = skirental.competitive_ratio(p) * skirental.offline_optimal_cost(p, n) + r
        if lhs > rhs:
            return False, f"bound violated at r={r}, b={b}, b_r={b_r}, n={n}: {lhs} > {rhs}"
        worst = max(worst, lhs - (rhs - r))
    return True, f"{trials} instances, largest excess over ratio*opt = {float(worst):.4g} (< r)"


def ski_rental_integral_ratio(trials: int = 2_000, seed: int = 2) -> Tuple[bool, str]:
    """M integral, n = M + 1: policy/opt must equal 2 - b_r/r exactly."""
    rng = random.Random(seed)
    mismatches = []
    for _ in range(trials):
        r = Fraction(rng.randint(2, 40))
        b_r = Fraction(rng.randint(0, int(r) - 1))
        m = rng.randint(1, 50)
        b = m * (r - b_r)                      # makes M = m integral
        p = skirental.SkiParams(r, b, b_r)
        assert skirental.threshold(p) == m
        ratio = Fraction(skirental.policy_cost(p, m + 1)) / skirental.offline_optimal_cost(p, m + 1)
        if ratio != skirental.competitive_ratio(p):
            mismatches.append((r, b, b_r, ratio))
    if mismatches:
        r, b, b_r, ratio = mismatches[0]
        return False, (f"{len(mismatches)}/{trials} instances differ, e.g. r={r}, b={b}, b_r={b_r}: "
                       f"ratio {ratio} = {float(ratio):.6f} vs 2-b_r/r = {float(2 - b_r / r):.6f}")
    return True, f"{trials} integral-M instances equal 2 - b_r/r exactly"


def ski_rental_basic_ratio(trials: int = 2_000, seed: int = 3) -> Tuple[bool, str]:
    rng = random.Random(seed)
    worst = Fraction(0)
    for _ in range(trials):
        r = Fraction(rng.randint(1, 40))
        m = rng.randint(1, 50)
        p = skirental.SkiParams(r, m * r, Fraction(0))
        ratio = max(Fraction(skirental.policy_cost(p, n)) / skirental.offline_optimal_cost(p, n)
                    for n in range(1, 2 * m + 3))
        if ratio > 2:
            return False, f"ratio {ratio} above 2 at r={r}, b={m * r}"
        worst = max(worst, ratio)
    return worst == 2, f"worst-case ratio with b_r=0 is {worst}"


def check_ski_rental() -> Result:
    parts = [("bound", ski_rental_bound()), ("integral M", ski_rental_integral_ratio()),
             ("b_r=0", ski_rental_basic_ratio())]
    ok = all(p[1][0] for p in parts)
    return Result(1, "ski-rental bound", ok,
                  "; ".join(f"{name} {'ok' if res[0] else 'FAILED'} ({res[1]})" for name, res in parts))


# -- 2. lossy counting -------------------------------------------------------

def lossy_counting_streams(n_streams: int = 100, seed: int = 4) -> Tuple[bool, str]:
    rng = random.Random(seed)
    worst_gap = 0.0
    for s in range(n_streams):
        eps = rng.choice([0.1, 0.02, 0.01, 0.005, 0.001])
        n = rng.randint(500, 20_000)
        universe = rng.randint(5, 3000)
        z = rng.choice([0.0, 0.8, 1.2, 2.0])
        weights = [1.0 / (i + 1) ** z for i in range(universe)]
        stream = rng.choices(range(universe), weights=weights, k=n)
        lc = LossyCounter(eps)
        exact: Dict[int, int] = {}
        for k in stream:
            lc.observe(k)
            exact[k] = exact.get(k, 0) + 1
        bound = eps * n
        for k, true in exact.items():
            est = lc.count(k)
            if est > true:
                return False, f"stream {s}: overestimate for {k}: {est} > {true}"
            if true - est > bound:
                return False, f"stream {s}: underestimate {true - est} > eps*N = {bound}"
            if true >= bound and k not in lc:
                return False, f"stream {s}: key {k} with count {true} >= eps*N not tracked"
            worst_gap = max(worst_gap, (true - est) / bound)
    return True, f"{n_streams} streams, worst underestimate = {worst_gap:.3f} * eps*N"


def check_lossy_counting() -> Result:
    ok, detail = lossy_counting_streams()
    return Result(2, "lossy counting", ok, detail)


# -- 3. balance solver ---------------------------------------------------------

def random_balance_instance(rng: random.Random):
    tc = rng.choice([1e-4, 1e-3, 0.01, 0.1, 0.5]) * rng.uniform(0.5, 2)
    s_v = rng.choice([100, 1_000, 10_000, 100_000]) * rng.uniform(0.5, 2)
    nr_bar = rng.randint(0, 500)
    nr_j = rng.randint(0, 800)
    nr_ij = rng.randint(0, nr_j)
    snap = balance.LoadSnapshot(
        lc=rng.randint(0, 500), nd=rng.randint(0, 300), nc=rng.randint(0, 300),
        ndr=rng.randint(0, 300), nr_bar=nr_bar, r_bar=rng.uniform(0, nr_bar),
        tc_c=tc * rng.uniform(0.5, 2), s_k=16, s_p=rng.choice([50, 100, 1000]), s_v=s_v,
        s_cv=rng.choice([10, 100, 1000]), net_bw=rng.choice([1e5, 1e6, 1e7, 1e8]))
    load = balance.DataNodeLoad(
        nd_j=rng.randint(0, 300), ndr_j=rng.randint(0, 300), nr_j=nr_j,
        r_j=rng.randint(0, nr_j), nr_ij=nr_ij, r_ij=rng.randint(0, nr_ij), tc_d=tc,
        net_bw=rng.choice([1e5, 1e6, 1e7, 1e8]))
    return snap, load, rng.randint(1, 256)


def _collinear(f: Callable[[float], float], b: int) -> bool:
    xs = [0.0, b / 3.0, float(b)]
    ys = [f(x) for x in xs]
    mid = ys[0] + (ys[2] - ys[0]) * (xs[1] - xs[0]) / (xs[2] - xs[0]) if b else ys[0]
    return math.isclose(ys[1], mid, rel_tol=1e-9, abs_tol=1e-12)


def balance_solver(instances: int = 500, seed: int = 5) -> Tuple[bool, str]:
    rng = random.Random(seed)
    worst = 0.0
    for n in range(instances):
        snap, load, b = random_balance_instance(rng)
        for fidelity in (balance.CORRECTED, balance.PRINTED):
            gd = balance.solve_d(snap, load, b, random.Random(n), fidelity)
            ex = balance.solve_d_exact(snap, load, b, fidelity)
            rel = abs(gd.predicted_completion - ex.predicted_completion) / max(abs(ex.predicted_completion), 1e-300)
            worst = max(worst, rel)
            if rel > 1e-9:
                return False, (f"instance {n} ({fidelity}): descent F={gd.predicted_completion!r} at d={gd.d}, "
                               f"exact F={ex.predicted_completion!r} at d={ex.d}")
        fns = [lambda d: balance.comp_cpu(snap, load, b, d),
               lambda d: balance.comp_cpu(snap, load, b, d, balance.PRINTED),
               lambda d: balance.comp_net(snap, load, b, d),
               lambda d: balance.data_cpu(load, d),
               lambda d: balance.data_net(load, b, d, snap)]
        if not all(_collinear(f, b) for f in fns):
            return False, f"instance {n}: a load function is not affine in d"
    return True, f"{instances} instances x 2 fidelities, worst relative F gap {worst:.2e}; all loads affine"


def check_balance() -> Result:
    ok, detail = balance_solver()
    return Result(3, "balance solver", ok, detail)


# -- 4. cache algorithms against a straight-line reference ---------------------

class ReferenceCache:
    """Plain-list transcription of the admission rules, used as an oracle.

    Victim order: lowest benefit, then oldest fetch time, then least recently
    inserted or re-scored.  No heap, no lazy deletion.
    """

    def __init__(self, capacity: int, uniform: bool):
        self.capacity = capacity
        self.uniform = uniform
        self.mem: Dict[int, dict] = {}
        self.disk: Dict[int, dict] = {}
        self.benefits: Dict[int, float] = {}
        self.floor = 0.0
        self.touch = 0

    def used(self) -> int:
        return sum(it["size"] for it in self.mem.values())

    def _stamp(self) -> int:
        self.touch += 1
        return self.touch

    def update_benefit(self, k, freq) -> None:
        self.benefits[k] = self.floor + freq
        if k in self.mem:
            self.mem[k]["benefit"] = self.benefits[k]
            self.mem[k]["touch"] = self._stamp()
        if k in self.disk:
            self.disk[k]["benefit"] = self.benefits[k]

    def _ranked(self, exclude=None) -> List[Tuple[int, dict]]:
        items = [(k, it) for k, it in self.mem.items() if k != exclude]
        items.sort(key=lambda kv: (kv[1]["benefit"], kv[1]["fetched"], kv[1]["touch"]))
        return items

    def _evict(self, k) -> None:
        it = self.mem.pop(k)
        if it["benefit"] > self.floor:
            self.floor = it["benefit"]
        if k not in self.disk:
            self.disk[k] = dict(it)

    def _insert(self, k, v, size, now) -> None:
        fetched = self.disk[k]["fetched"] if k in self.disk else now
        self.mem[k] = {"value": v, "size": size, "benefit": self.benefits.get(k, 0.0),
                       "fetched": fetched, "touch": self._stamp()}

    def cond_cache(self, k, v, size, now) -> bool:
        if size > self.capacity:
            return False
        free = self.capacity - self.used()
        if free >= size:
            if v is not None:
                self._insert(k, v, size, now)
            return True
        mine = self.benefits.get(k, 0.0)
        ranked = self._ranked(exclude=k)
        if self.uniform:
            if not ranked or not mine > ranked[0][1]["benefit"]:
                return False
            if v is not None:
                self._evict(ranked[0][0])
                self._insert(k, v, size, now)
            return True
        prelim, total = [], free
        for key, it in ranked:
            prelim.append((key, it))
            total += it["size"]
            if total > size:
                break
        else:
            return False
        if mine < sum(it["benefit"] for _, it in prelim):
            return False
        if v is not None:
            room = total - size
            keep = set()
            for key, it in sorted(prelim, key=lambda kv: -kv[1]["benefit"]):
                if it["size"] <= room:
                    keep.add(key)
                    room -= it["size"]
            for key, _ in prelim:
                if key not in keep:
                    self._evict(key)
            self._insert(k, v, size, now)
        return True

    def invalidate(self, k) -> None:
        self.mem.pop(k, None)
        self.disk.pop(k, None)

    def state(self):
        return (sorted((k, it["size"], it["benefit"]) for k, it in self.mem.items()),
                sorted((k, it["size"], it["benefit"]) for k, it in self.disk.items()),
                self.used(), self.floor)


def cache_state(c: TieredCache):
    return (sorted((k, it.size, it.benefit) for k, it in c.mem.items()),
            sorted((k, it.size, it.benefit) for k, it in c.disk.items()),
            c.mem_used, c.aging_floor)


def cache_trace_matches(uniform: bool, steps: int = 10_000, seed: int = 6,
                        capacity: int = 1_000, keys: int = 60) -> Tuple[bool, str]:
    rng = random.Random(seed)
    real = TieredCache(capacity, None, uniform)
    ref = ReferenceCache(capacity, uniform)
    freq: Dict[int, int] = {}
    sizes = {k: (100 if uniform else rng.randint(20, 400)) for k in range(keys)}
    admitted = 0
    for step in range(steps):
        k = min(int(rng.paretovariate(1.0)) - 1, keys - 1)
        op = rng.random()
        now = float(step)
        if op < 0.02:
            real.invalidate(k)
            ref.invalidate(k)
            freq.pop(k, None)
        else:
            freq[k] = freq.get(k, 0) + 1
            real.update_benefit(k, freq[k])
            ref.update_benefit(k, freq[k])
            if k not in real.mem:
                if op < 0.5:
                    before = cache_state(real)
                    a, b = real.cond_cache(k, None, sizes[k], now), ref.cond_cache(k, None, sizes[k], now)
                    if cache_state(real) != before:
                        return False, f"step {step}: decision mode mutated the cache"
                else:
                    a, b = real.cond_cache(k, step, sizes[k], now), ref.cond_cache(k, step, sizes[k], now)
                    admitted += a
                if a != b:
                    return False, f"step {step}: admission of key {k} differs ({a} vs reference {b})"
        if cache_state(real) != ref.state():
            return False, f"step {step}: state differs from the reference"
        if real.mem_used > capacity:
            return False, f"step {step}: memory use {real.mem_used} exceeds capacity {capacity}"
    return True, f"{steps} steps, {admitted} admissions, state identical throughout"


def check_cache() -> Result:
    u = cache_trace_matches(True)
    v = cache_trace_matches(False)
    return Result(4, "cache algorithms", u[0] and v[0], f"uniform: {u[1]}; variable: {v[1]}")


# -- simulation sweeps -------------------------------------------------------

@dataclass(frozen=True)
class Scale:
    n_tuples: int
    seeds: Tuple[int, ...]

    @classmethod
    def of(cls, quick: bool) -> "Scale":
        return cls(20_000, (0,)) if quick else cls(100_000, FULL_SEEDS)


def _config(preset: str, scale: Scale, **workload) -> RunConfig:
    wl = WorkloadSpec(preset=preset, n_tuples=scale.n_tuples, **workload)
    return RunConfig(ClusterSpec(), wl, EngineConfig(), Experiment(list(ALL_STRATEGIES), list(ZIPF)))


@functools.lru_cache(maxsize=None)
def sweep(preset: str, quick: bool = False) -> Dict[Tuple[str, float, int], float]:
    """(strategy, z, seed) -> (completion time, data-node CPU skew)."""
    scale = Scale.of(quick)
    cfg = _config(preset, scale)
    cells = [Cell(s, z, seed) for z in ZIPF for seed in scale.seeds for s in ALL_STRATEGIES]
    out = {}
    for cell, m in zip(cells, run_cells(cfg, cells)):
        out[(cell.strategy, cell.zipf_z, cell.seed)] = (m.completion_time, m.cpu_skew("d"))
    return out


def mean_time(preset: str, strategy: str, z: float, quick: bool = False) -> float:
    data = sweep(preset, quick)
    return mean(data[(strategy, z, s)][0] for s in Scale.of(quick).seeds)


def mean_skew(preset: str, strategy: str, z: float, quick: bool = False) -> float:
    data = sweep(preset, quick)
    return mean(data[(strategy, z, s)][1] for s in Scale.of(quick).seeds)


@functools.lru_cache(maxsize=None)
def drift(preset: str, quick: bool = False) -> Dict[float, float]:
    """z -> mean non-adaptive / adaptive FO completion time under 10 hot-set shifts."""
    scale = Scale.of(quick)
    cfg = _config(preset, scale, n_shifts=DRIFT_SHIFTS)
    cells = [Cell("FO", z, seed, adaptive) for z in DRIFT_ZIPF for seed in scale.seeds
             for adaptive in (True, False)]
    times = {c: m.completion_time for c, m in zip(cells, run_cells(cfg, cells))}
    out = {}
    for z in DRIFT_ZIPF:
        on = mean(times[Cell("FO", z, s, True)] for s in scale.seeds)
        off = mean(times[Cell("FO", z, s, False)] for s in scale.seeds)
        out[z] = off / on
    return out


def _times(preset: str, z: float, quick: bool, strategies: Sequence[str] = ALL_STRATEGIES) -> str:
    return ", ".join(f"{s}={mean_time(preset, s, z, quick):.1f}" for s in strategies)


def check_dh(quick: bool = False) -> Result:
    t = lambda s, z: mean_time("DH", s, z, quick)
    checks = [
        ("FO <= 1.10 FD at z=0", t("FO", 0.0) <= 1.10 * t("FD", 0.0)),
        ("CO within 5% of FO at z=0", abs(t("CO", 0.0) - t("FO", 0.0)) <= 0.05 * t("FO", 0.0)),
        ("FO < FD at z=1.5", t("FO", 1.5) < t("FD", 1.5)),
        ("FO < LO at z=1.5", t("FO", 1.5) < t("LO", 1.5)),
    ]
    return _verdict(5, "DH trend", checks, f"z=0: {_times('DH', 0.0, quick)}; z=1.5: {_times('DH', 1.5, quick)}")


def check_ch(quick: bool = False) -> Result:
    t = lambda s, z: mean_time("CH", s, z, quick)
    checks = [
        ("FD strictly increasing z=0.5..1.5", t("FD", 0.5) < t("FD", 1.0) < t("FD", 1.5)),
        ("FR strictly increasing z=0.5..1.5", t("FR", 0.5) < t("FR", 1.0) < t("FR", 1.5)),
        ("FO <= CO at every z", all(t("FO", z) <= t("CO", z) for z in ZIPF)),
        ("FR <= 1.1 FO at z=0", t("FR", 0.0) <= 1.1 * t("FO", 0.0)),
    ]
    detail = " | ".join(f"z={z}: {_times('CH', z, quick, ('FD', 'FR', 'CO', 'FO'))}" for z in ZIPF)
    return _verdict(6, "CH trend", checks, detail)


def check_dch(quick: bool = False) -> Result:
    t = lambda s, z: mean_time("DCH", s, z, quick)
    others = [s for s in ALL_STRATEGIES if s != "FO"]
    checks = [(f"FO <= 1.05 min(others) at z={z}", t("FO", z) <= 1.05 * min(t(s, z) for s in others))
              for z in (0.5, 1.0)]
    checks.append(("LO increases with z", all(t("LO", a) < t("LO", b) for a, b in zip(ZIPF, ZIPF[1:]))))
    detail = " | ".join(f"z={z}: {_times('DCH', z, quick)}" for z in (0.5, 1.0))
    detail += " | LO: " + ", ".join(f"{t('LO', z):.1f}" for z in ZIPF)
    return _verdict(7, "DCH trend", checks, detail)


def check_orderings(quick: bool = False) -> Result:
    checks = []
    for preset in ("DH", "CH", "DCH"):
        checks.append((f"FC <= NO for {preset} at every z",
                       all(mean_time(preset, "FC", z, quick) <= mean_time(preset, "NO", z, quick) for z in ZIPF)))
    skews = []
    for preset in ("DH", "CH", "DCH"):
        for z in (1.0, 1.5):
            fd, fo = mean_skew(preset, "FD", z, quick), mean_skew(preset, "FO", z, quick)
            skews.append(f"{preset} z={z}: FD {fd:.3f} FO {fo:.3f}")
            checks.append((f"FD skew >= 1.5 ({preset}, z={z})", fd >= 1.5))
            checks.append((f"FO skew < FD skew ({preset}, z={z})", fo < fd))
    return _verdict(8, "universal orderings", checks, "; ".join(skews))


def check_drift(quick: bool = False) -> Result:
    ratios = {p: drift(p, quick) for p in ("DH", "CH", "DCH")}
    checks = [(f"{p} ratio <= 1.02 at z=0", ratios[p][0.0] <= 1.02) for p in ratios]
    for z in (1.0, 1.5):
        for p in ("DH", "DCH"):
            checks.append((f"{p} ratio >= 1.15 at z={z}", ratios[p][z] >= 1.15))
        checks.append((f"1.0 <= CH ratio <= DH ratio at z={z}", 1.0 <= ratios["CH"][z] <= ratios["DH"][z]))
    detail = "; ".join(f"{p}: " + ", ".join(f"z={z} {r:.3f}" for z, r in ratios[p].items()) for p in ratios)
    return _verdict(9, "drift adaptivity", checks, detail)


def _csv_bytes(cfg: RunConfig) -> str:
    buf = io.StringIO()
    write_csv(*run_rows(cfg), buf)
    return buf.getvalue()


def determinism(quick: bool = False) -> Tuple[bool, str]:
    n = 3_000 if quick else 10_000
    problems = []
    for preset in ("DH", "CH", "DCH"):
        cfg = RunConfig(ClusterSpec(), WorkloadSpec(preset=preset, n_tuples=n, zipf_z=1.0, n_shifts=2),
                        EngineConfig(), Experiment(list(ALL_STRATEGIES), [1.0], seeds=2))
        if _csv_bytes(cfg) != _csv_bytes(cfg):
            problems.append(f"{preset} CSV differs between reruns")
        for s in ALL_STRATEGIES:
            w = cfg.workload
            h1 = run(cfg.cluster, w, s, seed=5, record_events=True).event_log_hash
            h2 = run(cfg.cluster, w, s, seed=5, record_events=True).event_log_hash
            if h1 != h2:
                problems.append(f"{preset}/{s} event log differs")
    if problems:
        return False, "; ".join(problems)
    return True, "metrics CSV and event-log hashes identical across reruns for every preset and strategy"


def check_determinism(quick: bool = False) -> Result:
    ok, detail = determinism(quick)
    return Result(10, "determinism", ok, detail)


def _verdict(number: int, name: str, checks: List[Tuple[str, bool]], numbers: str) -> Result:
    failed = [c for c, ok in checks if not ok]
    head = "all checks hold" if not failed else "failed: " + "; ".join(failed)
    return Result(number, name, not failed, f"{head} [{numbers}]")


CHECKS: List[Callable[..., Result]] = [
    check_ski_rental, check_lossy_counting, check_balance, check_cache,
    check_dh, check_ch, check_dch, check_orderings, check_drift, check_determinism,
]
SIM_CHECKS = {check_dh, check_ch, check_dch, check_orderings, check_drift, check_determinism}


def run_all(quick: bool = False, stream: Optional[TextIO] = None) -> List[Result]:
    results = []
    if quick and stream is not None:
        stream.write("quick mode: reduced tuple counts and one seed; verdicts are indicative only\n")
    for check in CHECKS:
        res = check(quick) if check in SIM_CHECKS else check()
        results.append(res)
        if stream is not None:
            stream.write(res.line() + "\n")
            stream.flush()
    if stream is not None:
        passed = sum(r.passed for r in results)
        stream.write(f"{passed}/{len(results)} criteria passed\n")
    return results
