from .query import aggregate
from .runner import ClientGroup, MetricsReport, OpSummary, run_workload, run_workload_sim
from .workload import OpStream, WorkloadSpec, ZipfianSampler, key_name

__all__ = [
    "ClientGroup",
    "MetricsReport",
    "OpStream",
    "OpSummary",
    "WorkloadSpec",
    "ZipfianSampler",
    "aggregate",
    "key_name",
    "run_workload",
    "run_workload_sim",
]
