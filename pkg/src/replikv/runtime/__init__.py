from .api import (
    BlockingClient,
    ClientSession,
    ClientTransport,
    Envelope,
    GetResult,
    HistoryRecorder,
    KernelStats,
    ProtocolServer,
    PutResult,
    ReplyAgent,
    ServerContext,
)
from .kernel import ServerCore
from .sim import SimCluster, SimParams, SimTrace, build_sim_cluster, sim_client

__all__ = [
    "BlockingClient",
    "ClientSession",
    "ClientTransport",
    "Envelope",
    "GetResult",
    "HistoryRecorder",
    "KernelStats",
    "ProtocolServer",
    "PutResult",
    "ReplyAgent",
    "ServerCore",
    "ServerContext",
    "SimCluster",
    "SimParams",
    "SimTrace",
    "build_sim_cluster",
    "sim_client",
]
