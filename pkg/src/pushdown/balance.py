"""Per-batch split of compute requests between a data node and a compute node.

A data node receiving ``b`` compute requests from compute node ``i`` computes
``d`` of them itself and returns ``b - d`` raw values.  It estimates four
loads, each affine in ``d``, and picks ``d`` minimising their maximum (the
batch completion time, since CPUs and links run concurrently).
"""
from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

CORRECTED = "corrected"
PRINTED = "printed"


@dataclass(frozen=True)
class LoadSnapshot:
    """Compute-node statistics shipped with every batch."""

    lc: float = 0            # pending local computations
    nd: float = 0            # data requests waiting to be sent
    nc: float = 0            # compute requests waiting to be sent
    ndr: float = 0           # outstanding data-request responses
    nr_bar: float = 0        # outstanding compute requests at other data nodes
    r_bar: float = 0         # ... of which expected to be computed remotely
    tc_c: float = 0.0        # seconds per function at the compute node
    s_k: float = 0.0
    s_p: float = 0.0
    s_v: float = 0.0
    s_cv: float = 0.0
    net_bw: float = 1.0      # compute node aggregate bandwidth, bytes/s

    def __post_init__(self):
        for f in ("lc", "nd", "nc", "ndr", "nr_bar", "r_bar"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")
        if self.r_bar > self.nr_bar:
            raise ValueError("r_bar cannot exceed nr_bar")
        if self.net_bw <= 0:
            raise ValueError("net_bw must be > 0")


@dataclass(frozen=True)
class DataNodeLoad:
    nd_j: float = 0          # pending data requests from all compute nodes
    ndr_j: float = 0         # pending data responses
    nr_j: float = 0          # pending compute requests, all compute nodes
    r_j: float = 0           # ... of which computed here
    nr_ij: float = 0         # pending compute requests from this compute node
    r_ij: float = 0          # ... of which computed here
    tc_d: float = 0.0
    net_bw: float = 1.0

    def __post_init__(self):
        if self.r_j > self.nr_j or self.r_ij > self.nr_ij:
            raise ValueError("computed-here counts cannot exceed pending counts")
        if self.net_bw <= 0:
            raise ValueError("net_bw must be > 0")


def snapshot_wire_bytes(base: int = 64, per_field: int = 8) -> int:
    return base + per_field * len(dataclasses.fields(LoadSnapshot))


@dataclass(frozen=True)
class BalanceDecision:
    d: int
    predicted_completion: float


Affine = Tuple[float, float]  # (value at d=0, slope in d)


def _comp_cpu_affine(s: LoadSnapshot, j: DataNodeLoad, b: int, fidelity: str) -> Affine:
    tc_far = j.tc_d if fidelity == PRINTED else s.tc_c
    base = (s.tc_c * s.lc + tc_far * (s.nr_bar - s.r_bar)
            + tc_far * (j.nr_ij - j.r_ij) + tc_far * b)
    return base, -tc_far


def _comp_net_affine(s: LoadSnapshot, j: DataNodeLoad, b: int) -> Affine:
    base = (s.nd * (s.s_k + s.s_v) + s.nc * (s.s_k + s.s_p) + s.ndr * s.s_v
            + (s.nr_bar - s.r_bar) * s.s_v + s.r_bar * s.s_cv
            + (j.nr_ij - j.r_ij) * s.s_v + j.r_ij * s.s_cv + b * s.s_v)
    return base / s.net_bw, (s.s_cv - s.s_v) / s.net_bw


def _data_cpu_affine(j: DataNodeLoad) -> Affine:
    return j.tc_d * j.r_j, j.tc_d


def _data_net_affine(s: LoadSnapshot, j: DataNodeLoad, b: int) -> Affine:
    base = (j.nd_j * (s.s_k + s.s_v) + j.ndr_j * s.s_v + j.nr_j * (s.s_k + s.s_p)
            + (j.nr_j - j.r_j) * s.s_v + j.r_j * s.s_cv + b * s.s_v)
    return base / j.net_bw, (s.s_cv - s.s_v) / j.net_bw


def comp_cpu(s: LoadSnapshot, j_load: DataNodeLoad, b: int, d: float,
             fidelity: str = CORRECTED) -> float:
    a, m = _comp_cpu_affine(s, j_load, b, fidelity)
    return a + m * d


def comp_net(s: LoadSnapshot, j_load: DataNodeLoad, b: int, d: float) -> float:
    a, m = _comp_net_affine(s, j_load, b)
    return a + m * d


def data_cpu(j_load: DataNodeLoad, d: float) -> float:
    a, m = _data_cpu_affine(j_load)
    return a + m * d


def data_net(j_load: DataNodeLoad, b: int, d: float, s: LoadSnapshot) -> float:
    """Network time at the data node; item sizes come from the batch snapshot ``s``."""
    a, m = _data_net_affine(s, j_load, b)
    return a + m * d


def load_lines(s: LoadSnapshot, j_load: DataNodeLoad, b: int,
               fidelity: str = CORRECTED) -> List[Affine]:
    return [_comp_cpu_affine(s, j_load, b, fidelity), _comp_net_affine(s, j_load, b),
            _data_cpu_affine(j_load), _data_net_affine(s, j_load, b)]


def _max_at(lines: Sequence[Affine], d: float) -> float:
    return max(a + m * d for a, m in lines)


def _slope_at(lines: Sequence[Affine], d: float, direction: float) -> float:
    # one-sided derivative of the max in ``direction`` (+1 right, -1 left)
    top = _max_at(lines, d)
    tol = 1e-12 * max(1.0, abs(top))
    slopes = [m for a, m in lines if a + m * d >= top - tol]
    return max(slopes) if direction > 0 else min(slopes)


def _extend_flat(lines: Sequence[Affine], d: int, b: int) -> int:
    """Largest integer d' >= d with F(d') == F(d) (ties go to larger d)."""
    value = _max_at(lines, d)
    tol = 1e-12 * max(1.0, abs(value))
    limit = float(b)
    for a, m in lines:
        if m > 0:
            limit = min(limit, (value + tol - a) / m)
    best = d
    cand = max(d, min(b, math.floor(limit + 1e-9)))
    if cand > d and _max_at(lines, cand) <= value + tol:
        best = cand
    return best


def _pick(lines, candidates, b) -> BalanceDecision:
    best_d, best_f = None, None
    for d in candidates:
        d = min(max(int(d), 0), b)
        f = _max_at(lines, d)
        if best_f is None or f < best_f or (f == best_f and d > best_d):
            best_d, best_f = d, f
    best_d = _extend_flat(lines, best_d, b)
    return BalanceDecision(best_d, _max_at(lines, best_d))


def solve_d(s: LoadSnapshot, j_load: DataNodeLoad, b: int,
            rng: Optional[random.Random] = None, fidelity: str = CORRECTED,
            max_iter: int = 64) -> BalanceDecision:
    """Gradient descent on the continuous relaxation, rounded to an integer.

    Starts at a random point in ``[0, b]`` with step ``b/8``; the step is
    halved whenever the descent direction flips.
    """
    if b < 1:
        raise ValueError("batch must contain at least one compute request")
    lines = load_lines(s, j_load, b, fidelity)
    rng = rng or random.Random(0)
    x = rng.uniform(0.0, b)
    step = b / 8.0
    direction = 0.0
    for _ in range(max_iter):
        right = _slope_at(lines, x, +1)
        left = _slope_at(lines, x, -1)
        if right < 0 and x < b:
            move = +1.0
        elif left > 0 and x > 0:
            move = -1.0
        else:
            break  # subgradient contains 0, or pinned at a boundary
        if direction and move != direction:
            step /= 2.0
        direction = move
        x = min(max(x + move * step, 0.0), float(b))
        if step < 1e-12 * b:
            break
    return _pick(lines, (math.floor(x), math.ceil(x)), b)


def solve_d_exact(s: LoadSnapshot, j_load: DataNodeLoad, b: int,
                  fidelity: str = CORRECTED) -> BalanceDecision:
    """Exhaustive scan of every integer d in ``[0, b]``; ties go to larger d."""
    lines = load_lines(s, j_load, b, fidelity)
    best_d, best_f = 0, _max_at(lines, 0)
    for d in range(1, b + 1):
        f = _max_at(lines, d)
        if f <= best_f:
            best_d, best_f = d, f
    return BalanceDecision(best_d, best_f)


def completion(s: LoadSnapshot, j_load: DataNodeLoad, b: int, d: float,
               fidelity: str = CORRECTED) -> float:
    return _max_at(load_lines(s, j_load, b, fidelity), d)
