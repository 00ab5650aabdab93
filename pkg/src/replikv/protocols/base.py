"""Shared scaffolding for the bundled protocols.

All four protocols assume full replication: every replica holds the whole
key space, a write at partition p replicates to partition p of every other
replica, and clients talk only to their local replica.
"""

from __future__ import annotations

from ..codec import Schema, boolean, field, message
from ..errors import ConfigError
from ..ids import server_for_key
from ..runtime.api import ClientSession, ProtocolServer, ServerContext


class ReplicatedServer(ProtocolServer):
    """Reads replica/partition layout from protocol_properties."""

    def __init__(self, ctx: ServerContext):
        super().__init__(ctx)
        cfg = ctx.config
        self.m = int(cfg.prop("dc_id", str(cfg.node.replica)))
        self.p = int(cfg.prop("p_id", str(cfg.node.partition)))
        self.num_replicas = cfg.prop_int("num_of_datacenters", self._infer_replicas())
        self.num_partitions = cfg.prop_int("num_of_partitions", self.p + 1)
        if self.m >= self.num_replicas:
            raise ConfigError(f"dc_id {self.m} out of range ({self.num_replicas} replicas)")

    def _infer_replicas(self) -> int:
        replicas = {self.ctx.config.node.replica}
        for peer in self.ctx.config.peers:
            replicas.add(int(peer.split("_")[0]))
        return max(replicas) + 1

    def peer_partitions(self) -> list[str]:
        """Same partition id in every other replica."""
        return [f"{i}_{self.p}" for i in range(self.num_replicas) if i != self.m]

    def server_centric(self) -> bool:
        return self.ctx.config.storage.replication == "server_centric"


class RoutedSession(ClientSession):
    """Hash-routes keys to the owning partition of the local replica."""

    def server_for(self, key: str) -> str:
        return server_for_key(key, self.config.local_replica, self.config.num_partitions)


def reply_schema(name: str, get_reply: Schema, put_reply: Schema) -> Schema:
    return Schema(
        name,
        [
            field(1, "status", boolean),
            field(2, "get_reply", message(get_reply)),
            field(3, "put_reply", message(put_reply)),
        ],
        oneof=("get_reply", "put_reply"),
    )
