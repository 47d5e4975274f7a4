"""Segment-cleaning simulator and analytics for log-structured stores."""

from .analytics import (AnalyticPoint, SkewSpec, max_pairing_sum, optimize_split,
                        solve_emptiness, split_cost, table1)
from .engine import RunSpec, Simulator, run
from .model import (Clock, ConfigError, PageLocation, SegmentMeta, SegState,
                    SimulationFault, Store, StoreConfig, WampReport)
from .policies import PolicyKind, parse_policy
from .workloads import WorkloadSpec, make_workload, read_trace

__all__ = [
    "AnalyticPoint", "Clock", "ConfigError", "PageLocation", "PolicyKind",
    "RunSpec", "SegState", "SegmentMeta", "SimulationFault", "Simulator",
    "SkewSpec", "Store", "StoreConfig", "WampReport", "WorkloadSpec",
    "make_workload", "max_pairing_sum", "optimize_split", "parse_policy",
    "read_trace", "run", "solve_emptiness", "split_cost", "table1",
]
