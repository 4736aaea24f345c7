"""Deterministic discrete-event core: clock, FIFO rate servers, metrics.

Every node owns four independent FIFO servers (CPU, disk, inbound link,
outbound link).  A server is just a ``free_at`` horizon, so submitting work
returns its completion time immediately; events are only scheduled where the
protocol needs to react (message delivery, computation finished, timers).
"""
from __future__ import annotations

import hashlib
import heapq
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

MB = 1_000_000


class SimulationStalled(RuntimeError):
    """Raised when a run exceeds its event budget without quiescing."""


class FifoServer:
    __slots__ = ("name", "free_at", "busy", "jobs")

    def __init__(self, name: str = ""):
        self.name = name
        self.free_at = 0.0
        self.busy = 0.0
        self.jobs = 0

    def submit(self, now: float, work: float) -> float:
        start = now if now > self.free_at else self.free_at
        done = start + work
        self.free_at = done
        self.busy += work
        self.jobs += 1
        return done

    def backlog(self, now: float) -> float:
        return self.free_at - now if self.free_at > now else 0.0


class Resources:
    """The four servers of one simulated node."""

    __slots__ = ("cpu", "disk", "link_in", "link_out")

    def __init__(self, node: str):
        self.cpu = FifoServer(f"{node}.cpu")
        self.disk = FifoServer(f"{node}.disk")
        self.link_in = FifoServer(f"{node}.in")
        self.link_out = FifoServer(f"{node}.out")


def transfer(now: float, src: Resources, dst: Resources, nbytes: float,
             bw_src: float, bw_dst: float) -> float:
    """Push ``nbytes`` through src's outbound and dst's inbound link; return arrival time."""
    out_done = src.link_out.submit(now, nbytes / bw_src)
    in_done = dst.link_in.submit(now, nbytes / bw_dst)
    return out_done if out_done > in_done else in_done


class Simulator:
    """Event loop.  Events at equal times run in scheduling order."""

    def __init__(self, max_events: Optional[int] = None, trace: bool = False):
        self.now = 0.0
        self._queue: List = []
        self._seq = 0
        self.events = 0
        self.max_events = max_events
        self.trace = trace
        self.log: List[tuple] = []
        self._hash = hashlib.sha256()

    def schedule(self, at: float, fn: Callable, arg: Any = None) -> None:
        if at < self.now:
            raise ValueError(f"causality violation: event at {at} scheduled at {self.now}")
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, fn, arg))

    def record(self, node: str, kind: str, key=None, nbytes: float = 0) -> None:
        if self.trace:
            rec = (repr(self.now), node, kind, key, nbytes)
            self.log.append(rec)
            self._hash.update(repr(rec).encode())

    def log_hash(self) -> str:
        return self._hash.hexdigest()

    def run(self, diagnose: Optional[Callable[[], str]] = None) -> float:
        q = self._queue
        pop = heapq.heappop
        budget = self.max_events
        while q:
            at, _, fn, arg = pop(q)
            self.now = at
            fn(arg)
            self.events += 1
            if budget is not None and self.events > budget:
                detail = diagnose() if diagnose else ""
                raise SimulationStalled(
                    f"event budget {budget} exhausted at t={self.now:.6g}s; {detail}")
        return self.now


@dataclass(frozen=True)
class ClusterSpec:
    """Hardware of the simulated cluster.  Scalars apply to every node of a role."""

    n_compute: int = 4
    n_data: int = 4
    compute_cpu_scale: Any = 1.0      # multiplier on a key's function cost
    data_cpu_scale: Any = 1.05        # data nodes also serve the store
    compute_disk: Any = 0.002         # seconds per record read (disk cache tier)
    data_disk: Any = 0.005            # seconds per record fetch
    compute_bw: Any = 1.0 * MB        # NIC bytes/s (each direction)
    data_bw: Any = 1.0 * MB
    link_bw: Optional[Sequence[Sequence[float]]] = None  # [i][j] for cost decisions
    msg_overhead: int = 64            # bytes per message
    seed: int = 0

    def __post_init__(self):
        if self.n_compute < 1 or self.n_data < 1:
            raise ValueError("need at least one compute and one data node")
        for name in ("compute_cpu_scale", "data_cpu_scale", "compute_disk", "data_disk",
                     "compute_bw", "data_bw"):
            vals = self._vec(name)
            if any(not (v > 0 and math.isfinite(v)) for v in vals):
                raise ValueError(f"{name} must be positive")
        if self.link_bw is not None:
            if len(self.link_bw) != self.n_compute or any(len(r) != self.n_data for r in self.link_bw):
                raise ValueError("link_bw must be an n_compute x n_data matrix")
            if any(not v > 0 for r in self.link_bw for v in r):
                raise ValueError("link_bw entries must be positive")
        if self.msg_overhead < 0:
            raise ValueError("msg_overhead must be >= 0")

    def _vec(self, name: str) -> List[float]:
        v = getattr(self, name)
        n = self.n_compute if name.startswith("compute") else self.n_data
        if isinstance(v, (int, float)):
            return [float(v)] * n
        v = [float(x) for x in v]
        if len(v) != n:
            raise ValueError(f"{name} needs {n} entries, got {len(v)}")
        return v

    def compute_vec(self, what: str) -> List[float]:
        return self._vec(f"compute_{what}")

    def data_vec(self, what: str) -> List[float]:
        return self._vec(f"data_{what}")

    def link_matrix(self) -> List[List[float]]:
        if self.link_bw is not None:
            return [[float(x) for x in row] for row in self.link_bw]
        cb, db = self.compute_vec("bw"), self.data_vec("bw")
        return [[min(cb[i], db[j]) for j in range(self.n_data)] for i in range(self.n_compute)]


@dataclass
class NodeUsage:
    node: str
    cpu: float
    disk: float
    link_in: float
    link_out: float


@dataclass
class Metrics:
    strategy: str
    completion_time: float = 0.0
    throughput: float = 0.0
    tuples: int = 0
    events: int = 0
    usage: List[NodeUsage] = field(default_factory=list)
    counts: Dict[str, int] = field(default_factory=dict)
    cache: Dict[str, float] = field(default_factory=dict)
    event_log_hash: str = ""

    def node_usage(self, role: str) -> List[NodeUsage]:
        return [u for u in self.usage if u.node.startswith(role)]

    def cpu_skew(self, role: str = "d") -> float:
        """max/mean CPU busy fraction over nodes of ``role`` ('c' or 'd')."""
        busy = [u.cpu for u in self.node_usage(role)]
        mean = sum(busy) / len(busy) if busy else 0.0
        return max(busy) / mean if mean > 0 else 1.0

    def as_dict(self) -> dict:
        return asdict(self)


def busy_fraction(server: FifoServer, horizon: float) -> float:
    if horizon <= 0:
        return 0.0
    return min(1.0, server.busy / horizon)


def run(spec: ClusterSpec, workload, strategy, engine=None, trace=None, seed: Optional[int] = None,
        record_events: bool = False, max_events: Optional[int] = None) -> Metrics:
    """Simulate one (cluster, workload, strategy) cell to quiescence.

    ``trace`` replays a pre-generated tuple stream (identical across
    strategies of a sweep); otherwise it is generated from ``seed``.
    """
    from .engine import Cluster, EngineConfig, Strategy
    from .workload import build_trace

    strategy = Strategy(strategy)
    engine = engine or EngineConfig()
    seed = spec.seed if seed is None else seed
    if trace is None:
        trace = build_trace(workload, seed)
    cluster = Cluster(spec, workload, strategy, engine, trace, seed=seed,
                      record_events=record_events, max_events=max_events)
    return cluster.run()
