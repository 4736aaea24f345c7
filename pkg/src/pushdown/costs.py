"""Cost parameters, runtime smoothing and the four per-key decision costs.

All times are seconds (float), all sizes are bytes (int).  Bandwidths are
bytes per second for a (compute node, data node) pair.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, Hashable, Optional, Tuple

NodeId = Hashable
KeyId = Hashable

DEFAULT_ALPHA = 0.3


class ValidationError(ValueError):
    """A measurement or parameter is outside its legal domain."""


class ConfigError(KeyError):
    """A required cost parameter (node, link) is not configured."""

    def __str__(self) -> str:  # KeyError repr-quotes its message otherwise
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class SmoothedEstimate:
    current: float
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if not math.isfinite(self.current):
            raise ValidationError(f"non-finite estimate {self.current}")


def smooth_update(est: SmoothedEstimate, measured: float) -> SmoothedEstimate:
    """Exponentially blend a new measurement into ``est``."""
    if not math.isfinite(measured) or measured < 0:
        raise ValidationError(f"measurement must be finite and >= 0, got {measured}")
    return replace(est, current=est.alpha * measured + (1.0 - est.alpha) * est.current)


class Smoother:
    """Mutable wrapper used by the engine: holds one estimate, seeded lazily.

    The first measurement initialises the estimate directly, later ones are
    blended exactly as ``smooth_update`` does (without the allocation).
    """

    __slots__ = ("alpha", "value")

    def __init__(self, alpha: float = DEFAULT_ALPHA, initial: Optional[float] = None):
        if not (0.0 < alpha <= 1.0):
            raise ValidationError(f"alpha must be in (0, 1], got {alpha}")
        self.alpha = alpha
        self.value = initial

    def update(self, measured: float) -> float:
        if not math.isfinite(measured) or measured < 0:
            raise ValidationError(f"measurement must be finite and >= 0, got {measured}")
        if self.value is None:
            self.value = float(measured)
        else:
            self.value = self.alpha * measured + (1.0 - self.alpha) * self.value
        return self.value


@dataclass
class CostParams:
    """Table of cost inputs with per-key overrides.

    ``tc`` and ``t_disk`` are per-node averages.  ``key_tc`` overrides ``tc``
    for a (node, key) pair and ``key_sv`` overrides ``s_v`` for a key.
    Overrides never replace a missing average: a node without a ``tc`` entry
    is a configuration error even if a per-key value exists.
    """

    net_bw: Dict[Tuple[NodeId, NodeId], float]
    s_v: float
    s_p: float
    s_k: float
    s_cv: float
    t_disk: Dict[NodeId, float]
    tc: Dict[NodeId, float]
    key_sv: Dict[KeyId, float] = field(default_factory=dict)
    key_tc: Dict[Tuple[NodeId, KeyId], float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("s_v", "s_p", "s_k", "s_cv"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{name} must be positive, got {v}")
        for table in (self.net_bw, self.t_disk, self.tc, self.key_sv, self.key_tc):
            for k, v in table.items():
                if not (v > 0 and math.isfinite(v)):
                    raise ValidationError(f"cost entry {k!r} must be positive, got {v}")

    def bandwidth(self, i: NodeId, j: NodeId) -> float:
        try:
            return self.net_bw[(i, j)]
        except KeyError:
            raise ConfigError(f"no bandwidth configured for link ({i!r}, {j!r})") from None

    def node_tc(self, node: NodeId, key: KeyId = None) -> float:
        if node not in self.tc:
            raise ConfigError(f"no CPU cost configured for node {node!r}")
        return self.key_tc.get((node, key), self.tc[node])

    def node_disk(self, node: NodeId) -> float:
        try:
            return self.t_disk[node]
        except KeyError:
            raise ConfigError(f"no disk cost configured for node {node!r}") from None

    def value_size(self, key: KeyId = None) -> float:
        return self.key_sv.get(key, self.s_v)


@dataclass(frozen=True)
class DecisionCosts:
    t_compute: float
    t_fetch: float
    t_rec_mem: float
    t_rec_disk: float

    def __post_init__(self):
        if self.t_rec_disk < self.t_rec_mem:
            raise ValidationError(
                f"disk recurring cost {self.t_rec_disk} below memory recurring cost {self.t_rec_mem}")


def decision_costs(params: CostParams, key: KeyId, compute_node: NodeId,
                   data_node: NodeId) -> DecisionCosts:
    """Rent/buy/recurring costs of serving ``key`` for ``compute_node`` from ``data_node``.

    Disk and network work overlap, so each cost is the max of its components.
    """
    bw = params.bandwidth(compute_node, data_node)
    disk_j = params.node_disk(data_node)
    disk_i = params.node_disk(compute_node)
    tc_j = params.node_tc(data_node, key)
    tc_i = params.node_tc(compute_node, key)
    t_compute = max(disk_j, (params.s_k + params.s_p + params.s_cv) / bw, tc_j)
    t_fetch = max(disk_j, (params.s_k + params.value_size(key)) / bw)
    return DecisionCosts(t_compute, t_fetch, tc_i, max(tc_i, disk_i))


def decision_costs_raw(bw: float, s_k: float, s_p: float, s_cv: float, s_v: float,
                       disk_j: float, tc_j: float, disk_i: float, tc_i: float) -> DecisionCosts:
    """Same formulas as ``decision_costs`` over plain numbers (engine hot path)."""
    return DecisionCosts(max(disk_j, (s_k + s_p + s_cv) / bw, tc_j),
                         max(disk_j, (s_k + s_v) / bw),
                         tc_i, max(tc_i, disk_i))
