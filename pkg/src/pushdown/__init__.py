"""Adaptive data/compute request routing for joins with user-defined functions."""
from .engine import ALL_STRATEGIES, EngineConfig, Strategy
from .sim import ClusterSpec, Metrics, run
from .workload import WorkloadSpec

__all__ = ["ALL_STRATEGIES", "ClusterSpec", "EngineConfig", "Metrics", "Strategy", "WorkloadSpec", "run"]
__version__ = "0.1.0"
