"""Approximate per-key access counts with lossy counting."""
from __future__ import annotations

import math
from typing import Dict, Hashable, Iterator, List, Tuple

DEFAULT_EPSILON = 0.001


class LossyCounter:
    """Deterministic frequency counter with error at most ``epsilon * N``.

    Reported counts never exceed the true count (since the key's last reset),
    and every key whose true count is at least ``epsilon * N`` stays tracked.
    """

    def __init__(self, epsilon: float = DEFAULT_EPSILON):
        if not (0.0 < epsilon < 1.0):
            raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
        self.epsilon = epsilon
        self.bucket_width = math.ceil(1.0 / epsilon)
        self.total_seen = 0
        self.current_bucket = 1
        # key -> [estimated_count, max_error]
        self.entries: Dict[Hashable, List[int]] = {}

    def observe(self, k: Hashable) -> int:
        self.total_seen += 1
        entry = self.entries.get(k)
        if entry is None:
            entry = [1, self.current_bucket - 1]
            self.entries[k] = entry
        else:
            entry[0] += 1
        count = entry[0]
        if self.total_seen % self.bucket_width == 0:
            self._prune()
            self.current_bucket += 1
        return count

    def _prune(self) -> None:
        b = self.current_bucket
        # strict: a pruned key then has true count < b <= epsilon*N, so keys at exactly epsilon*N survive
        dead = [k for k, (f, err) in self.entries.items() if f + err < b]
        for k in dead:
            del self.entries[k]

    def count(self, k: Hashable) -> int:
        entry = self.entries.get(k)
        return entry[0] if entry is not None else 0

    def max_error(self, k: Hashable) -> int:
        entry = self.entries.get(k)
        return entry[1] if entry is not None else 0

    def reset(self, k: Hashable) -> None:
        self.entries.pop(k, None)

    def __contains__(self, k: Hashable) -> bool:
        return k in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def items(self) -> Iterator[Tuple[Hashable, int]]:
        for k, (f, _) in self.entries.items():
            yield k, f
