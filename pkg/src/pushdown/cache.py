"""Two-tier (memory + disk) cache with LFU-DA aged benefits.

Benefit of a key is ``L + weight * freq`` where ``L`` is the global aging
floor, raised to the benefit of each item evicted from memory.  Memory
admission is conditional: uniform item sizes compare against
the single least-beneficial resident, variable sizes compare against the sum
of a least-beneficial prefix.  Items evicted from memory move to the disk
tier; promoted items keep their disk copy.
"""
from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass
from typing import Any, Dict, Hashable, List, Optional, Tuple


class Tier(enum.Enum):
    MEMORY = "memory"
    DISK = "disk"


@dataclass
class CachedItem:
    key: Hashable
    value: Any
    size: int
    benefit: float
    fetched_at: float
    stored_tier: Tier
    seq: int = 0

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError(f"item size must be > 0, got {self.size}")


@dataclass
class CacheStats:
    hits_mem: int = 0
    hits_disk: int = 0
    misses: int = 0
    mem_evictions: int = 0
    disk_evictions: int = 0
    promotions: int = 0
    installs_mem: int = 0
    installs_disk: int = 0


class TieredCache:
    def __init__(self, mem_capacity: int, disk_capacity: Optional[int] = None,
                 uniform: bool = False):
        if mem_capacity < 0:
            raise ValueError("mem_capacity must be >= 0")
        self.mem_capacity = mem_capacity
        self.disk_capacity = disk_capacity
        self.uniform = uniform
        self.mem_used = 0
        self.disk_used = 0
        self.aging_floor = 0.0
        self.mem: Dict[Hashable, CachedItem] = {}
        self.disk: Dict[Hashable, CachedItem] = {}
        self.benefits: Dict[Hashable, float] = {}
        self.stats = CacheStats()
        self.floor_history: List[float] = [0.0]
        self._heap: List[Tuple[float, float, int, Hashable]] = []
        self._seq = 0

    # -- benefits ---------------------------------------------------------
    def benefit(self, k: Hashable) -> float:
        return self.benefits.get(k, 0.0)

    def update_benefit(self, k: Hashable, freq: int, weight: float = 1.0) -> float:
        b = self.aging_floor + weight * freq
        self.benefits[k] = b
        item = self.mem.get(k)
        if item is not None:
            item.benefit = b
            self._push(item)
        item = self.disk.get(k)
        if item is not None:
            item.benefit = b
        return b

    # -- memory heap with lazy invalidation -------------------------------
    def _push(self, item: CachedItem) -> None:
        self._seq += 1
        item.seq = self._seq
        heapq.heappush(self._heap, (item.benefit, item.fetched_at, item.seq, item.key))

    def _valid(self, entry) -> bool:
        item = self.mem.get(entry[3])
        return item is not None and item.seq == entry[2]

    def _peek_min(self) -> Optional[CachedItem]:
        heap = self._heap
        while heap and not self._valid(heap[0]):
            heapq.heappop(heap)
        return self.mem[heap[0][3]] if heap else None

    def _least_prefix(self, need: int, exclude) -> Optional[List[CachedItem]]:
        """Smallest ascending-benefit prefix whose sizes plus ``free`` exceed ``need``."""
        heap = self._heap
        taken = []
        prefix: List[CachedItem] = []
        total = self.mem_free
        found = False
        while heap:
            entry = heapq.heappop(heap)
            if not self._valid(entry):
                continue
            taken.append(entry)
            if entry[3] == exclude:
                continue
            item = self.mem[entry[3]]
            prefix.append(item)
            total += item.size
            if total > need:
                found = True
                break
        for entry in taken:
            heapq.heappush(heap, entry)
        return prefix if found else None

    def min_benefit(self) -> Optional[float]:
        item = self._peek_min()
        return None if item is None else item.benefit

    @property
    def mem_free(self) -> int:
        return self.mem_capacity - self.mem_used

    # -- tier mutation helpers -------------------------------------------
    def _add_mem(self, k, v, size, now) -> None:
        old = self.mem.pop(k, None)
        if old is not None:
            self.mem_used -= old.size
        disk_copy = self.disk.get(k)
        fetched = disk_copy.fetched_at if disk_copy is not None else now
        item = CachedItem(k, v, size, self.benefit(k), fetched, Tier.MEMORY)
        self.mem[k] = item
        self.mem_used += size
        self._push(item)

    def _evict_mem(self, item: CachedItem) -> None:
        del self.mem[item.key]
        self.mem_used -= item.size
        self.stats.mem_evictions += 1
        if item.benefit > self.aging_floor:
            self.aging_floor = item.benefit
            self.floor_history.append(item.benefit)
        if item.key not in self.disk:
            self.add_disk(item.key, item.value, item.size, item.fetched_at)

    def add_disk(self, k, v, size: int, now: float = 0.0) -> bool:
        """Install ``k`` in the disk tier, evicting by benefit/size if bounded."""
        if k in self.disk:
            return True
        if self.disk_capacity is not None and size > self.disk_capacity:
            return False
        self.evict_disk_if_needed(size)
        self.disk[k] = CachedItem(k, v, size, self.benefit(k), now, Tier.DISK)
        self.disk_used += size
        return True

    def evict_disk_if_needed(self, incoming_size: int) -> List[Hashable]:
        if self.disk_capacity is None:
            return []
        evicted = []
        if self.disk_used + incoming_size <= self.disk_capacity:
            return evicted
        order = sorted(self.disk.values(),
                       key=lambda it: (it.benefit / it.size, it.fetched_at))
        for item in order:
            if self.disk_used + incoming_size <= self.disk_capacity:
                break
            del self.disk[item.key]
            self.disk_used -= item.size
            self.stats.disk_evictions += 1
            evicted.append(item.key)
        return evicted

    # -- conditional memory admission ---------------------------------
    def cond_cache_uniform(self, k, v, size: int, now: float = 0.0) -> bool:
        """Uniform-size admission.  ``v is None`` only asks, never mutates."""
        if size > self.mem_capacity:
            return False
        if self.mem_free >= size:
            if v is not None:
                self._add_mem(k, v, size, now)
            return True
        victim = self._peek_min()
        if victim is not None and self.benefit(k) > victim.benefit:
            if v is not None:
                self._evict_mem(victim)
                self._add_mem(k, v, size, now)
            return True
        return False

    def cond_cache_variable(self, k, v, size: int, now: float = 0.0) -> bool:
        """Variable-size admission.  ``v is None`` only asks, never mutates."""
        if size > self.mem_capacity:
            return False
        free = self.mem_free
        if free >= size:
            if v is not None:
                self._add_mem(k, v, size, now)
            return True
        prelim = self._least_prefix(size, k)
        if prelim is None:
            return False
        total = sum(it.size for it in prelim)
        if self.benefit(k) < sum(it.benefit for it in prelim):
            return False
        if v is not None:
            room = free + total - size
            keep = set()
            for item in sorted(prelim, key=lambda it: -it.benefit):
                if item.size <= room:
                    keep.add(item.key)
                    room -= item.size
            for item in prelim:
                if item.key not in keep:
                    self._evict_mem(item)
            self._add_mem(k, v, size, now)
        return True

    def cond_cache(self, k, v, size: int, now: float = 0.0) -> bool:
        if self.uniform:
            return self.cond_cache_uniform(k, v, size, now)
        return self.cond_cache_variable(k, v, size, now)

    # -- lookup / invalidation --------------------------------------------
    def get(self, k, promote: bool = True, now: float = 0.0):
        """Return ``(value, tier)`` or None.  Disk hits may be promoted to memory."""
        item = self.mem.get(k)
        if item is not None:
            self.stats.hits_mem += 1
            return item.value, Tier.MEMORY
        item = self.disk.get(k)
        if item is not None:
            self.stats.hits_disk += 1
            if promote and self.cond_cache(k, item.value, item.size, now):
                self.stats.promotions += 1
            return item.value, Tier.DISK
        self.stats.misses += 1
        return None

    def peek_tier(self, k) -> Optional[Tier]:
        if k in self.mem:
            return Tier.MEMORY
        if k in self.disk:
            return Tier.DISK
        return None

    def invalidate(self, k) -> None:
        item = self.mem.pop(k, None)
        if item is not None:
            self.mem_used -= item.size
        item = self.disk.pop(k, None)
        if item is not None:
            self.disk_used -= item.size

    def install(self, k, v, size: int, tier: Tier, now: float = 0.0) -> Optional[Tier]:
        """Store a freshly fetched value in ``tier`` (memory admission re-checked)."""
        if tier is Tier.MEMORY:
            if self.cond_cache(k, v, size, now):
                self.stats.installs_mem += 1
                return Tier.MEMORY
            return None
        if self.add_disk(k, v, size, now):
            self.stats.installs_disk += 1
            return Tier.DISK
        return None

    def snapshot(self):
        """Comparable view of both tiers (keys, sizes, benefits), for purity checks."""
        return (
            sorted((k, it.size, it.benefit, it.value) for k, it in self.mem.items()),
            sorted((k, it.size, it.benefit, it.value) for k, it in self.disk.items()),
            self.mem_used, self.disk_used, self.aging_floor,
        )
