"""Compute-node pipeline and data-node handler.

A compute node pulls tuples into a bounded prefetch window.  Each tuple is
dispatched to one of three places: the local compute queue (value cached),
a data request (fetch the value, compute locally) or a compute request
(ship key and params to the data node).  Requests are batched per
destination.  Data nodes answer each batch with one response message and,
when balancing is on, hand part of a compute batch back as raw values.
"""
from __future__ import annotations

import dataclasses
import enum
import math
import random
import zlib
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .balance import (CORRECTED, PRINTED, DataNodeLoad, LoadSnapshot, snapshot_wire_bytes,
                      solve_d, solve_d_exact)
from .cache import Tier, TieredCache
from .costs import Smoother, decision_costs_raw
from .frequency import LossyCounter
from .sim import (MB, ClusterSpec, Metrics, NodeUsage, Resources, SimulationStalled, Simulator,
                  busy_fraction, transfer)
from .skirental import SkiDecision, SkiParams, decide

DATA, COMPUTE = 0, 1


class Strategy(str, enum.Enum):
    NO = "NO"
    FC = "FC"
    FD = "FD"
    FR = "FR"
    CO = "CO"
    LO = "LO"
    FO = "FO"

    @property
    def caches(self) -> bool:
        return self in (Strategy.CO, Strategy.FO)

    @property
    def balances(self) -> bool:
        return self in (Strategy.LO, Strategy.FO)


ALL_STRATEGIES = tuple(s.value for s in Strategy)


@dataclass(frozen=True)
class EngineConfig:
    batch_size: int = 64
    max_wait: float = 0.010            # seconds before a partial batch is flushed
    window: int = 512                  # tuples in flight per compute node (prefetch depth)
    mem_cache: int = 5 * MB            # bytes of memory cache per compute node
    disk_cache: Optional[int] = None   # bytes of disk cache per compute node, None = unbounded
    uniform_sizes: bool = False        # use the single-victim admission rule
    alpha: float = 0.3                 # smoothing of measured costs
    epsilon: float = 0.001             # lossy counting error bound
    benefit_weight: float = 1.0
    fidelity: str = CORRECTED          # far-side tc in the compute-node CPU load
    solver: str = "descent"            # descent | exact
    fetch_guard: str = "off"           # off | literal: fetch whenever tFetch <= tCompute
    cost_feedback: str = "service"     # service | contended (rent cost includes queueing)
    adaptive: bool = True
    freeze_fraction: float = 0.1       # non-adaptive: decisions frozen after this share of tuples
    snapshot_bytes: int = field(default_factory=snapshot_wire_bytes)
    partitioning: str = "hash"         # hash | range

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_wait < 0:
            raise ValueError("max_wait must be >= 0")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.mem_cache < 0 or (self.disk_cache is not None and self.disk_cache < 0):
            raise ValueError("cache sizes must be >= 0")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if self.fidelity not in (CORRECTED, PRINTED):
            raise ValueError(f"unknown fidelity {self.fidelity!r}")
        if self.solver not in ("descent", "exact"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.fetch_guard not in ("off", "literal"):
            raise ValueError(f"unknown fetch_guard {self.fetch_guard!r}")
        if self.cost_feedback not in ("service", "contended"):
            raise ValueError(f"unknown cost_feedback {self.cost_feedback!r}")
        if self.partitioning not in ("hash", "range"):
            raise ValueError(f"unknown partitioning {self.partitioning!r}")
        if not 0 <= self.freeze_fraction <= 1:
            raise ValueError("freeze_fraction must be in [0, 1]")

    def for_strategy(self, strategy: Strategy) -> "EngineConfig":
        if strategy is Strategy.NO:  # synchronous, one request at a time
            return dataclasses.replace(self, batch_size=1, window=1)
        return self


@dataclass
class WorkItem:
    tuple_id: int
    key: int
    params: int          # bytes
    submitted_at: float


@dataclass
class RequestBatch:
    origin: int
    destination: int
    entries: List[tuple]  # (kind, tuple_id, key, tier-or-None)
    snapshot: LoadSnapshot
    created_at: float
    flushed_at: float

    @property
    def n_data(self) -> int:
        return sum(1 for e in self.entries if e[0] == DATA)

    @property
    def n_compute(self) -> int:
        return sum(1 for e in self.entries if e[0] == COMPUTE)


@dataclass
class BatchResponse:
    origin: int                        # data node
    destination: int                   # compute node
    computed: List[Tuple[int, int]]    # (tuple_id, key)
    raw: List[tuple]                   # (tuple_id, key, tier-or-None, echoed, version)
    last_update: Dict[int, float]
    # key -> (service tc, observed tc including queueing, s_v); tc entries None for raw keys
    feedback: Dict[int, Tuple[Optional[float], Optional[float], int]]
    t_disk: float
    n_data: int
    b: int
    d: int
    ready_at: float = 0.0              # when the computed entries are done
    raw_ready_at: float = 0.0          # when the raw entries have been read
    nbytes: int = 0
    split: Optional[Tuple[int, int]] = None  # (b, d) of the whole batch, on one wire part

    def wire_parts(self, overhead: int, s_v: int, s_p: int, s_cv: int) -> List["BatchResponse"]:
        """Raw entries leave once read; computed ones once the CPU is done."""
        parts = []
        raw_keys = {e[1] for e in self.raw}
        comp_keys = {k for _, k in self.computed}
        if self.raw or not self.computed:
            part = BatchResponse(self.origin, self.destination, [], self.raw,
                                 {k: t for k, t in self.last_update.items() if k in raw_keys},
                                 {k: f for k, f in self.feedback.items() if k in raw_keys},
                                 self.t_disk, self.n_data, self.b - self.d, 0)
            part.ready_at = part.raw_ready_at = self.raw_ready_at
            part.nbytes = overhead + sum(s_v + (s_p if e[3] else 0) for e in self.raw)
            parts.append(part)
        if self.computed:
            part = BatchResponse(self.origin, self.destination, self.computed, [],
                                 {k: t for k, t in self.last_update.items() if k in comp_keys},
                                 {k: f for k, f in self.feedback.items() if k in comp_keys},
                                 self.t_disk, 0, self.d, self.d)
            part.ready_at = part.raw_ready_at = self.ready_at
            part.nbytes = overhead + s_cv * self.d
            parts.append(part)
        parts[-1].split = (self.b, self.d)
        return parts


class KeyDirectory:
    """Key -> owning data node, plus each compute node's view of update times."""

    def __init__(self, universe: int, n_data: int, scheme: str = "hash"):
        self.universe = universe
        self.n_data = n_data
        self.scheme = scheme
        if scheme == "hash":
            self._owner = [zlib.crc32(k.to_bytes(8, "little")) % n_data for k in range(universe)]
        else:
            self._owner = [k * n_data // universe for k in range(universe)]

    def owner(self, k: int) -> int:
        return self._owner[k]


class ResultMap:
    def __init__(self, n: int):
        self.resolved_at: List[Optional[float]] = [None] * n
        self.where = {"data": 0, "fetched": 0, "cache": 0}

    def resolve(self, tid: int, now: float, where: str) -> None:
        if self.resolved_at[tid] is not None:
            raise RuntimeError(f"tuple {tid} resolved twice")
        self.resolved_at[tid] = now
        self.where[where] += 1

    def is_resolved(self, tid: int) -> bool:
        return self.resolved_at[tid] is not None


class ComputeNode:
    def __init__(self, idx: int, cluster: "Cluster"):
        self.i = idx
        self.name = f"c{idx}"
        self.c = cluster
        cfg = cluster.cfg
        self.cfg = cfg
        self.res = Resources(self.name)
        self.cpu_scale = cluster.spec.compute_vec("cpu_scale")[idx]
        self.disk_time = cluster.spec.compute_vec("disk")[idx]
        self.bw = cluster.spec.compute_vec("bw")[idx]
        self.link_bw = cluster.links[idx]
        nd = cluster.spec.n_data
        self.counter = LossyCounter(cfg.epsilon)
        self.cache = TieredCache(cfg.mem_cache, cfg.disk_cache, cfg.uniform_sizes)
        self.rng = random.Random(cluster.seed * 7919 + idx)

        self.batches: List[List[tuple]] = [[] for _ in range(nd)]
        self.batch_created = [0.0] * nd
        self.timer_gen = [0] * nd
        self.nd = 0            # data requests waiting in batchers
        self.nc = 0            # compute requests waiting in batchers
        self.ndr = 0           # data requests sent, response pending
        self.lc = 0            # local computations pending
        self.outstanding = [0] * nd
        self.remote_frac = [Smoother(cfg.alpha, 1.0) for _ in range(nd)]

        # cost estimates learnt from responses and local work
        self.remote_tc: Dict[int, Smoother] = {}
        self.remote_service: Dict[int, float] = {}
        self.value_size: Dict[int, int] = {}
        self.local_tc: Dict[int, Smoother] = {}
        self.local_tc_avg = Smoother(cfg.alpha)
        self.remote_tc_avg = [Smoother(cfg.alpha) for _ in range(nd)]
        self.remote_disk = [Smoother(cfg.alpha) for _ in range(nd)]
        self.local_disk = Smoother(cfg.alpha, self.disk_time)
        self.sv_avg = Smoother(cfg.alpha)
        self.scv = float(cluster.workload.result_size)

        self.seen_ts: Dict[int, float] = {}
        self.known_version: Dict[int, int] = {}
        self.inflight: Dict[int, List[Tuple[int, int]]] = {}   # key -> waiting tuple ids
        self.frozen = False

        self.tuples: List[int] = []
        self.next_idx = 0
        self.map_queue: deque = deque()
        self.consumed = 0
        self.last_consumed = 0.0
        self.stale_reads = 0
        self.requests = {"data": 0, "compute": 0, "local": 0, "joined": 0}

    # -- prefetch window / map stage --------------------------------------
    def fill(self, _=None) -> None:
        now = self.c.sim.now
        window = self.cfg.window
        keys = self.c.keys
        while len(self.map_queue) < window and self.next_idx < len(self.tuples):
            tid = self.tuples[self.next_idx]
            self.next_idx += 1
            self.pre_map(WorkItem(tid, keys[tid], self.c.param_size, now))

    def pre_map(self, item: WorkItem) -> None:
        self.dispatch(item.tuple_id, item.key)
        self.map_queue.append(item.tuple_id)

    def map_consume(self) -> int:
        """Pop every resolved tuple at the head of the Map queue; returns how many."""
        results = self.c.results
        now = self.c.sim.now
        q = self.map_queue
        n = 0
        while q and results.is_resolved(q[0]):
            q.popleft()
            n += 1
        if n:
            self.consumed += n
            self.last_consumed = now
            self.c.on_consumed(self, n, now)
        return n

    # -- dispatch ----------------------------------------------------------
    def dispatch(self, tid: int, k: int) -> str:
        s = self.c.strategy
        if s is Strategy.NO or s is Strategy.FC:
            return self._enqueue(DATA, tid, k, None)
        if s is Strategy.FD or s is Strategy.LO:
            return self._enqueue(COMPUTE, tid, k, None)
        if s is Strategy.FR:
            kind = DATA if self.rng.random() < 0.5 else COMPUTE
            return self._enqueue(kind, tid, k, None)
        return self._ski_rental(tid, k)

    def _ski_rental(self, tid: int, k: int) -> str:
        if not self.frozen and tid >= self.c.freeze_tid:
            self.frozen = True
        cache = self.cache
        if not self.frozen:
            freq = self.counter.observe(k)
            cache.update_benefit(k, freq, self.cfg.benefit_weight)
        tier = cache.peek_tier(k)
        if tier is not None:
            version = cache.get(k, promote=not self.frozen, now=self.c.sim.now)[0]
            self._local([(tid, k, version)], "cache", disk_reads=int(tier is Tier.DISK))
            return "local"
        if k in self.inflight:
            self.inflight[k].append(tid)
            self.requests["joined"] += 1
            return "joined"
        if self.frozen or not self._known(k):
            return self._enqueue(COMPUTE, tid, k, None)
        costs = self._decision_costs(k)
        size = self.value_size[k]
        if self.cfg.fetch_guard == "literal" and costs.t_fetch <= costs.t_compute:
            tier = Tier.MEMORY if cache.cond_cache(k, None, size) else Tier.DISK
            return self._fetch(tid, k, tier)
        count = max(1, self.counter.count(k))
        if decide(SkiParams(costs.t_compute, costs.t_fetch, costs.t_rec_mem), count) is SkiDecision.RENT:
            return self._enqueue(COMPUTE, tid, k, None)
        if cache.cond_cache(k, None, size):
            return self._fetch(tid, k, Tier.MEMORY)
        if decide(SkiParams(costs.t_compute, costs.t_fetch, costs.t_rec_disk), count) is SkiDecision.RENT:
            return self._enqueue(COMPUTE, tid, k, None)
        return self._fetch(tid, k, Tier.DISK)

    def _fetch(self, tid: int, k: int, tier: Tier) -> str:
        self.inflight[k] = []
        return self._enqueue(DATA, tid, k, tier)

    def _known(self, k: int) -> bool:
        j = self.c.directory.owner(k)
        return (k in self.value_size and self.remote_disk[j].value is not None
                and (k in self.remote_tc or self.remote_tc_avg[j].value is not None))

    def _tc_remote(self, k: int, j: int) -> float:
        est = self.remote_tc.get(k)
        return est.value if est is not None else self.remote_tc_avg[j].value

    def _tc_local(self, k: int) -> float:
        est = self.local_tc.get(k)
        if est is not None:
            return est.value
        if self.local_tc_avg.value is not None:
            return self.local_tc_avg.value
        # never computed here: assume the data node's per-function service time
        return self.remote_service.get(k, 0.0)

    def _decision_costs(self, k: int):
        j = self.c.directory.owner(k)
        w = self.c.workload
        return decision_costs_raw(self.link_bw[j], w.key_size, self.c.param_size, self.scv,
                                  self.value_size[k], self.remote_disk[j].value,
                                  self._tc_remote(k, j), self.local_disk.value, self._tc_local(k))

    # -- batching ----------------------------------------------------------
    def _enqueue(self, kind: int, tid: int, k: int, tier: Optional[Tier]) -> str:
        j = self.c.directory.owner(k)
        batch = self.batches[j]
        batch.append((kind, tid, k, tier))
        if kind == DATA:
            self.nd += 1
            self.requests["data"] += 1
        else:
            self.nc += 1
            self.requests["compute"] += 1
        now = self.c.sim.now
        if len(batch) == 1:
            self.batch_created[j] = now
            self.timer_gen[j] += 1
            if self.cfg.batch_size > 1:
                self.c.sim.schedule(now + self.cfg.max_wait, self._on_timer, (j, self.timer_gen[j]))
        if len(batch) >= self.cfg.batch_size:
            self._flush(j)
        return "data" if kind == DATA else "compute"

    def _on_timer(self, arg) -> None:
        j, gen = arg
        if gen == self.timer_gen[j] and self.batches[j]:
            self._flush(j)

    def flush_batches(self, now: float) -> List[RequestBatch]:
        """Flush every destination whose batch is full or has waited ``max_wait``."""
        out = []
        for j, batch in enumerate(self.batches):
            if batch and (len(batch) >= self.cfg.batch_size
                          or now - self.batch_created[j] >= self.cfg.max_wait):
                out.append(self._flush(j))
        return out

    def snapshot(self, j: int) -> LoadSnapshot:
        nr_bar = 0
        r_bar = 0.0
        for jj, n in enumerate(self.outstanding):
            if jj != j and n:
                nr_bar += n
                r_bar += n * self.remote_frac[jj].value
        tc_c = self.local_tc_avg.value
        if tc_c is None:
            tc_c = 0.0
        sv = self.sv_avg.value if self.sv_avg.value is not None else 0.0
        w = self.c.workload
        return LoadSnapshot(lc=self.lc, nd=self.nd, nc=self.nc, ndr=self.ndr,
                            nr_bar=nr_bar, r_bar=min(r_bar, nr_bar), tc_c=tc_c * 1.0,
                            s_k=w.key_size, s_p=self.c.param_size, s_v=sv, s_cv=self.scv,
                            net_bw=self.bw)

    def _flush(self, j: int) -> RequestBatch:
        entries = self.batches[j]
        self.batches[j] = []
        self.timer_gen[j] += 1
        n_data = sum(1 for e in entries if e[0] == DATA)
        n_comp = len(entries) - n_data
        self.nd -= n_data
        self.nc -= n_comp
        now = self.c.sim.now
        batch = RequestBatch(self.i, j, entries, self.snapshot(j), self.batch_created[j], now)
        self.ndr += n_data
        self.outstanding[j] += n_comp
        self.c.send_batch(self, batch)
        return batch

    # -- local computation -------------------------------------------------
    def _local(self, items: List[Tuple[int, int, int]], where: str, disk_reads: int = 0) -> None:
        if not items:
            return
        sim = self.c.sim
        now = sim.now
        key_tc = self.c.key_tc
        scale = self.cpu_scale
        work = 0.0
        for tid, k, version in items:
            work += key_tc[k] * scale
            if version < self.known_version.get(k, 0):
                self.stale_reads += 1
        done = self.res.cpu.submit(now, work)
        if disk_reads:
            done = max(done, self.res.disk.submit(now, disk_reads * self.disk_time))
            self.local_disk.update(self.disk_time)
        # recurring costs are per-function service times; queueing is not charged here
        for _, k, _ in items:
            measured = key_tc[k] * scale
            est = self.local_tc.get(k)
            if est is None:
                self.local_tc[k] = Smoother(self.cfg.alpha, measured)
            else:
                est.update(measured)
            self.local_tc_avg.update(measured)
        self.lc += len(items)
        self.requests["local"] += len(items)
        sim.record(self.name, "local", items[0][1], len(items))
        sim.schedule(done, self._local_done, (items, where))

    def _local_done(self, arg) -> None:
        items, where = arg
        self.lc -= len(items)
        now = self.c.sim.now
        for tid, _, _ in items:
            self.c.results.resolve(tid, now, where)
        self.map_consume()

    # -- responses ---------------------------------------------------------
    def handle_response(self, resp: BatchResponse) -> None:
        now = self.c.sim.now
        j = resp.origin
        cfg = self.cfg
        self.ndr -= resp.n_data
        self.outstanding[j] -= resp.b
        if resp.split is not None and resp.split[0]:
            self.remote_frac[j].update(resp.split[1] / resp.split[0])

        for k, ts in resp.last_update.items():
            if ts > self.seen_ts.get(k, 0.0):
                self.seen_ts[k] = ts
                self.counter.reset(k)
                self.cache.invalidate(k)

        self.remote_disk[j].update(resp.t_disk)
        for k, (service, tc, sv) in resp.feedback.items():
            self.value_size[k] = sv
            self.sv_avg.update(sv)
            if tc is not None:
                self.remote_service[k] = service
                self.remote_tc_avg[j].update(tc)
                est = self.remote_tc.get(k)
                if est is None:
                    self.remote_tc[k] = Smoother(cfg.alpha, tc)
                else:
                    est.update(tc)

        for tid, _ in resp.computed:
            self.c.results.resolve(tid, now, "data")

        fetched: List[Tuple[int, int, int]] = []
        redo: List[Tuple[int, int]] = []
        for tid, k, tier, echoed, version in resp.raw:
            if version > self.known_version.get(k, 0):
                self.known_version[k] = version
            if tier is None or echoed:
                fetched.append((tid, k, version))
                continue
            waiters = self.inflight.pop(k, [])
            if version < self.known_version.get(k, 0):
                # the value changed while this fetch was in flight
                redo.append((tid, k))
                redo.extend((w, k) for w in waiters)
                continue
            if not self.frozen:
                size = self.value_size.get(k, self.c.workload.s_v)
                if self.cache.install(k, version, size, tier, now) is None and tier is Tier.MEMORY:
                    self.cache.install(k, version, size, Tier.DISK, now)
            fetched.append((tid, k, version))
            fetched.extend((w, k, version) for w in waiters)
        self._local(fetched, "fetched")
        for tid, k in redo:
            self._enqueue(COMPUTE, tid, k, None)
        if resp.computed:
            self.map_consume()

    def on_notify(self, arg) -> None:
        k, version, ts = arg
        self.c.counts["notifications_received"] += 1
        if version > self.known_version.get(k, 0):
            self.known_version[k] = version
        if ts > self.seen_ts.get(k, 0.0):
            self.seen_ts[k] = ts
        self.counter.reset(k)
        self.cache.invalidate(k)


class DataNode:
    def __init__(self, idx: int, cluster: "Cluster"):
        self.j = idx
        self.name = f"d{idx}"
        self.c = cluster
        self.res = Resources(self.name)
        self.cpu_scale = cluster.spec.data_vec("cpu_scale")[idx]
        self.disk_time = cluster.spec.data_vec("disk")[idx]
        self.bw = cluster.spec.data_vec("bw")[idx]
        nc = cluster.spec.n_compute
        self.nd_j = 0      # data requests received, not yet served
        self.ndr_j = 0     # data responses on the wire
        self.nr_j = 0      # compute requests received, not yet served
        self.r_j = 0       # ... of which computed here
        self.nr_ij = [0] * nc
        self.r_ij = [0] * nc
        self.version: Dict[int, int] = {}
        self.last_update: Dict[int, float] = {}
        self.fetched_by: Dict[int, set] = {}
        self.rng = random.Random(cluster.seed * 104729 + idx)
        self.solver_calls = 0

    def owns(self, k: int) -> bool:
        return self.c.directory.owner(k) == self.j

    def tc(self, k: int) -> float:
        return self.c.key_tc[k] * self.cpu_scale

    def _load(self, i: int, tc_d: float) -> DataNodeLoad:
        return DataNodeLoad(nd_j=self.nd_j, ndr_j=self.ndr_j, nr_j=self.nr_j, r_j=self.r_j,
                            nr_ij=self.nr_ij[i], r_ij=self.r_ij[i], tc_d=tc_d, net_bw=self.bw)

    def choose_d(self, batch: RequestBatch, comp: List[tuple]) -> int:
        b = len(comp)
        if not self.c.strategy.balances:
            return b
        cfg = self.c.cfg
        tc_d = sum(self.tc(e[2]) for e in comp) / b
        snap = batch.snapshot
        # fields the compute node has not measured yet are filled from local knowledge
        fill = {}
        if snap.tc_c <= 0:
            fill["tc_c"] = tc_d
        if snap.s_v <= 0:
            fill["s_v"] = float(self.c.workload.s_v)
        if fill:
            snap = dataclasses.replace(snap, **fill)
        load = self._load(batch.origin, tc_d)
        self.solver_calls += 1
        if cfg.solver == "exact":
            return solve_d_exact(snap, load, b, cfg.fidelity).d
        return solve_d(snap, load, b, self.rng, cfg.fidelity).d

    def handle_batch(self, batch: RequestBatch) -> BatchResponse:
        c = self.c
        now = c.sim.now
        i = batch.origin
        data, comp = [], []
        for e in batch.entries:
            if not self.owns(e[2]):
                raise AssertionError(f"routing fault: key {e[2]} sent to data node {self.j}")
            (data if e[0] == DATA else comp).append(e)
        b = len(comp)
        d = self.choose_d(batch, comp) if b else 0

        self.nd_j += len(data)
        self.nr_j += b
        self.r_j += d
        self.nr_ij[i] += b
        self.r_ij[i] += d

        disk_start = max(now, self.res.disk.free_at)
        disk_done = self.res.disk.submit(now, (len(data) + b) * self.disk_time)
        cpu_start = max(now, self.res.cpu.free_at)
        work = sum(self.tc(e[2]) for e in comp[:d])
        cpu_done = self.res.cpu.submit(now, work) if d else now
        contended = c.cfg.cost_feedback == "contended"
        cpu_wait = (cpu_start - now) / d if contended and d else 0.0
        n_reads = len(data) + b
        disk_wait = (disk_start - now) / n_reads if contended and n_reads else 0.0

        w = c.workload
        sv = w.s_v
        computed, raw, feedback, stamps = [], [], {}, {}
        nbytes = c.spec.msg_overhead
        for kind, tid, k, tier in data:
            raw.append((tid, k, tier, False, self.version.get(k, 0)))
            feedback.setdefault(k, (None, None, sv))
            stamps[k] = self.last_update.get(k, 0.0)
            if tier is not None:
                self.fetched_by.setdefault(k, set()).add(i)
            nbytes += sv
        for n, (kind, tid, k, tier) in enumerate(comp):
            stamps[k] = self.last_update.get(k, 0.0)
            if n < d:
                computed.append((tid, k))
                feedback[k] = (self.tc(k), self.tc(k) + cpu_wait, sv)
                nbytes += w.result_size
            else:
                raw.append((tid, k, None, True, self.version.get(k, 0)))
                feedback.setdefault(k, (None, None, sv))
                nbytes += sv + c.param_size
        resp = BatchResponse(self.j, i, computed, raw, stamps, feedback,
                             self.disk_time + disk_wait, len(data), b, d)
        resp.ready_at = max(disk_done, cpu_done)
        resp.raw_ready_at = disk_done
        resp.nbytes = nbytes
        c.counts["computed_at_data"] += d
        c.counts["returned_raw"] += b - d
        return resp

    def on_ready(self, resp: BatchResponse) -> None:
        self.nd_j -= resp.n_data
        self.ndr_j += resp.n_data
        self.nr_j -= resp.b
        self.r_j -= resp.d
        self.nr_ij[resp.destination] -= resp.b
        self.r_ij[resp.destination] -= resp.d
        self.c.send_response(self, resp)

    def on_delivered(self, resp: BatchResponse) -> None:
        self.ndr_j -= resp.n_data

    def notify_update(self, k: int) -> int:
        """Apply an update to ``k`` and notify the compute nodes that fetched it."""
        if not self.owns(k):
            raise AssertionError(f"routing fault: update of key {k} at data node {self.j}")
        now = self.c.sim.now
        self.version[k] = self.version.get(k, 0) + 1
        self.last_update[k] = now
        targets = sorted(self.fetched_by.pop(k, ()))
        for i in targets:
            self.c.send_notification(self, i, (k, self.version[k], now))
        return len(targets)


class Cluster:
    """Wires nodes to the simulator and runs one cell to quiescence."""

    def __init__(self, spec: ClusterSpec, workload, strategy: Strategy, cfg: EngineConfig,
                 trace, seed: int = 0, record_events: bool = False,
                 max_events: Optional[int] = None):
        from .workload import key_costs

        self.spec = spec
        self.workload = workload
        self.strategy = Strategy(strategy)
        self.cfg = cfg.for_strategy(self.strategy)
        self.seed = seed
        self.trace = trace
        self.keys = trace.keys.tolist()
        self.param_size = trace.param_size
        self.n = len(self.keys)
        self.key_tc = key_costs(workload).tolist()
        if self.keys and max(self.keys) >= len(self.key_tc):
            raise ValueError("trace key outside the workload's key universe")
        self.links = spec.link_matrix()
        budget = max_events if max_events is not None else 200 * self.n + 10_000
        self.sim = Simulator(budget, trace=record_events)
        self.directory = KeyDirectory(workload.key_universe, spec.n_data, self.cfg.partitioning)
        self.results = ResultMap(self.n)
        adaptive = self.cfg.adaptive or not self.strategy.caches
        self.freeze_tid = self.n if adaptive else math.ceil(self.cfg.freeze_fraction * self.n)
        self.counts = {"computed_at_data": 0, "returned_raw": 0, "batches": 0, "responses": 0,
                       "bytes_to_data": 0, "bytes_to_compute": 0, "updates": 0,
                       "notifications_sent": 0, "notifications_received": 0}
        self.computes = [ComputeNode(i, self) for i in range(spec.n_compute)]
        self.datas = [DataNode(j, self) for j in range(spec.n_data)]
        self.consumed = 0
        self.consumed_in_window = 0
        self.window = (0.0, math.inf)
        if workload.mode == "stream":
            self.window = (workload.warmup_fraction * workload.duration, workload.duration)

    # -- messaging ---------------------------------------------------------
    def send_batch(self, node: ComputeNode, batch: RequestBatch) -> None:
        dn = self.datas[batch.destination]
        nbytes = self.spec.msg_overhead + self.cfg.snapshot_bytes
        ks = self.workload.key_size
        for kind, _, _, _ in batch.entries:
            nbytes += ks if kind == DATA else ks + self.param_size
        now = self.sim.now
        arrive = transfer(now, node.res, dn.res, nbytes, node.bw, dn.bw)
        self.counts["batches"] += 1
        self.counts["bytes_to_data"] += nbytes
        self.sim.record(node.name, "send_batch", batch.destination, nbytes)
        self.sim.schedule(arrive, self._deliver_batch, batch)

    def _deliver_batch(self, batch: RequestBatch) -> None:
        dn = self.datas[batch.destination]
        resp = dn.handle_batch(batch)
        self.sim.record(dn.name, "batch", batch.origin, len(batch.entries))
        for part in resp.wire_parts(self.spec.msg_overhead, self.workload.s_v, self.param_size,
                                    self.workload.result_size):
            self.sim.schedule(part.ready_at, dn.on_ready, part)

    def send_response(self, dn: DataNode, resp: BatchResponse) -> None:
        cn = self.computes[resp.destination]
        arrive = transfer(self.sim.now, dn.res, cn.res, resp.nbytes, dn.bw, cn.bw)
        self.counts["responses"] += 1
        self.counts["bytes_to_compute"] += resp.nbytes
        self.sim.record(dn.name, "send_response", resp.destination, resp.nbytes)
        self.sim.schedule(arrive, self._deliver_response, resp)

    def _deliver_response(self, resp: BatchResponse) -> None:
        self.datas[resp.origin].on_delivered(resp)
        cn = self.computes[resp.destination]
        self.sim.record(cn.name, "response", resp.origin, resp.d)
        cn.handle_response(resp)

    def send_notification(self, dn: DataNode, i: int, payload) -> None:
        cn = self.computes[i]
        nbytes = self.spec.msg_overhead + self.workload.key_size
        arrive = transfer(self.sim.now, dn.res, cn.res, nbytes, dn.bw, cn.bw)
        self.counts["notifications_sent"] += 1
        self.sim.schedule(arrive, cn.on_notify, payload)

    # -- tuple sources -------------------------------------------------------
    def on_consumed(self, node: ComputeNode, n: int, now: float) -> None:
        self.consumed += n
        lo, hi = self.window
        if lo <= now <= hi:
            self.consumed_in_window += n
        node.fill()

    def _arrival(self, tid: int) -> None:
        node = self.computes[tid % len(self.computes)]
        node.tuples.append(tid)
        node.fill()
        nxt = tid + 1
        if nxt < self.n:
            self.sim.schedule(float(self.trace.arrivals[nxt]), self._arrival, nxt)

    def _update(self, _=None) -> None:
        if self.consumed >= self.n:
            return
        w = self.workload
        k = self.update_rng.randrange(w.key_universe)
        self.counts["updates"] += 1
        self.datas[self.directory.owner(k)].notify_update(k)
        self.sim.schedule(self.sim.now + self.update_rng.expovariate(w.update_rate), self._update)

    def _diagnose(self) -> str:
        parts = []
        for cn in self.computes:
            parts.append(f"{cn.name}: map={len(cn.map_queue)} lc={cn.lc} nd={cn.nd} nc={cn.nc} "
                         f"ndr={cn.ndr} out={sum(cn.outstanding)}")
        for dn in self.datas:
            parts.append(f"{dn.name}: nd={dn.nd_j} ndr={dn.ndr_j} nr={dn.nr_j} r={dn.r_j}")
        return "; ".join(parts)

    def run(self) -> Metrics:
        nc = len(self.computes)
        if self.workload.mode == "stream":
            if self.n:
                self.sim.schedule(float(self.trace.arrivals[0]), self._arrival, 0)
        else:
            for cn in self.computes:
                cn.tuples = list(range(cn.i, self.n, nc))
                self.sim.schedule(0.0, cn.fill)
        if self.workload.update_rate > 0 and self.n:
            self.update_rng = random.Random(self.workload.store_seed * 31 + self.seed)
            self.sim.schedule(self.update_rng.expovariate(self.workload.update_rate), self._update)
        self.sim.run(self._diagnose)
        return self._metrics()

    def _metrics(self) -> Metrics:
        if self.consumed != self.n:
            raise SimulationStalled(f"only {self.consumed}/{self.n} tuples consumed; {self._diagnose()}")
        where = self.results.where
        if sum(where.values()) != self.n:
            raise RuntimeError(f"conservation violated: {where} for {self.n} tuples")
        finish = max((cn.last_consumed for cn in self.computes), default=0.0)
        m = Metrics(self.strategy.value, completion_time=finish, tuples=self.n, events=self.sim.events)
        if self.workload.mode == "stream":
            lo, hi = self.window
            m.throughput = self.consumed_in_window / (hi - lo) if hi > lo else 0.0
        elif finish > 0:
            m.throughput = self.n / finish
        for node in [*self.computes, *self.datas]:
            r = node.res
            m.usage.append(NodeUsage(node.name, busy_fraction(r.cpu, finish),
                                     busy_fraction(r.disk, finish), busy_fraction(r.link_in, finish),
                                     busy_fraction(r.link_out, finish)))
        counts = dict(self.counts)
        counts.update({f"resolved_{k}": v for k, v in where.items()})
        for key in ("data", "compute", "local", "joined"):
            counts[f"req_{key}"] = sum(cn.requests[key] for cn in self.computes)
        counts["stale_reads"] = sum(cn.stale_reads for cn in self.computes)
        counts["solver_calls"] = sum(dn.solver_calls for dn in self.datas)
        m.counts = counts
        stats = [cn.cache.stats for cn in self.computes]
        hm = sum(s.hits_mem for s in stats)
        hd = sum(s.hits_disk for s in stats)
        m.cache = {
            "hits_mem": hm, "hits_disk": hd,
            "hit_rate_mem": hm / self.n if self.n else 0.0,
            "hit_rate_disk": hd / self.n if self.n else 0.0,
            "installs_mem": sum(s.installs_mem for s in stats),
            "installs_disk": sum(s.installs_disk for s in stats),
            "mem_evictions": sum(s.mem_evictions for s in stats),
            "aging_floor_max": max((cn.cache.aging_floor for cn in self.computes), default=0.0),
        }
        m.event_log_hash = self.sim.log_hash() if self.sim.trace else ""
        return m
