"""Rent-or-buy decisions with a recurring cost after buying.

Renting is a compute request, buying is fetching the value and caching it.
After buying, every access still costs ``b_r`` (local CPU, plus disk for the
disk tier).  All functions are pure and work with ``float`` or
``fractions.Fraction`` inputs, so the competitive bound can be checked exactly.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional


class SkiDecision(enum.Enum):
    RENT = "rent"
    BUY = "buy"


@dataclass(frozen=True)
class SkiParams:
    r: float
    b: float
    b_r: float

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"rent cost must be > 0, got {self.r}")
        if self.b < 0 or self.b_r < 0:
            raise ValueError(f"buy and recurring costs must be >= 0, got b={self.b}, b_r={self.b_r}")


def threshold(p: SkiParams) -> Optional[float]:
    """Access count ``b / (r - b_r)`` up to which renting is cheaper; None means never buy."""
    if p.r <= p.b_r:
        return None
    return p.b / (p.r - p.b_r)


def rent_limit(p: SkiParams) -> Optional[int]:
    # last access number that is still rented
    m = threshold(p)
    return None if m is None else math.floor(m)


def decide(p: SkiParams, access_count: int) -> SkiDecision:
    if access_count < 1:
        raise ValueError("access_count counts the current access and must be >= 1")
    limit = rent_limit(p)
    if limit is None or access_count <= limit:
        return SkiDecision.RENT
    return SkiDecision.BUY


def offline_optimal_cost(p: SkiParams, n: int):
    """Cost of the best fixed choice in hindsight for ``n`` accesses."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return 0
    return min(p.r * n, p.b + p.b_r * n)


def policy_cost(p: SkiParams, n: int):
    """Cost of following ``decide`` for ``n`` accesses with fixed params."""
    if n < 0:
        raise ValueError("n must be >= 0")
    limit = rent_limit(p)
    if limit is None or n <= limit:
        return p.r * n
    return p.r * limit + p.b + p.b_r * (n - limit)


def competitive_ratio(p: SkiParams):
    """Worst-case policy/optimal ratio, ``2 - b_r/r``; None when renting forever."""
    if p.r <= p.b_r:
        return None
    return 2 - p.b_r / p.r
