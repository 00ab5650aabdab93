"""Server and client configuration.

Config files are JSON documents. A server config mirrors what a node needs
to run: its identity, listen ports, the peer address map, storage settings,
channel tuning, and a free-form ``protocol_properties`` table of
string -> list-of-string entries that individual protocols interpret
(keys like ``dc_id``, ``p_id``, ``parent_p_id``, ``children_p_ids``,
``num_of_datacenters``, ``num_of_partitions``, ``heartbeat_interval``,
``gst_comutation_interval``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

from .errors import ConfigError
from .ids import NodeId

DEFAULT_RESEND_INTERVAL_MS = 500
DEFAULT_QUEUE_CAPACITY = 10_000
DEFAULT_CLIENT_TIMEOUT_MS = 10_000


@dataclass
class StorageSettings:
    versioning: str = "multi"  # "single" | "multi"
    replication: str = "server_centric"  # "server_centric" | "storage_centric"
    flush_on_insert: bool = False
    persist_path: str | None = None
    ring: list[str] = dc_field(default_factory=list)  # node ids, storage_centric only

    def validate(self):
        if self.versioning not in ("single", "multi"):
            raise ConfigError(f"unknown versioning mode {self.versioning!r}")
        if self.replication not in ("server_centric", "storage_centric"):
            raise ConfigError(f"unknown replication mode {self.replication!r}")

    def to_dict(self):
        return {
            "versioning": self.versioning,
            "replication": self.replication,
            "flush_on_insert": self.flush_on_insert,
            "persist_path": self.persist_path,
            "ring": list(self.ring),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StorageSettings":
        s = cls(
            versioning=d.get("versioning", "multi"),
            replication=d.get("replication", "server_centric"),
            flush_on_insert=d.get("flush_on_insert", False),
            persist_path=d.get("persist_path"),
            ring=list(d.get("ring", [])),
        )
        s.validate()
        return s


@dataclass
class ServerConfig:
    node: NodeId
    protocol: str
    client_port: int = 0
    server_port: int = 0
    host: str = "127.0.0.1"
    peers: dict[str, str] = dc_field(default_factory=dict)  # node id -> "host:port"
    protocol_properties: dict[str, list[str]] = dc_field(default_factory=dict)
    storage: StorageSettings = dc_field(default_factory=StorageSettings)
    resend_interval_ms: int = DEFAULT_RESEND_INTERVAL_MS
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY
    clock_offset_ms: int = 0

    def validate(self):
        self.storage.validate()
        if self.queue_capacity <= 0:
            raise ConfigError("queue_capacity must be positive")
        if self.resend_interval_ms <= 0:
            raise ConfigError("resend_interval_ms must be positive")
        for peer in self.peers:
            NodeId.parse(peer)

    def prop(self, key: str, default=None) -> str | None:
        values = self.protocol_properties.get(key)
        if not values:
            return default
        return values[0]

    def prop_int(self, key: str, default: int) -> int:
        raw = self.prop(key)
        return default if raw is None else int(raw)

    def prop_list(self, key: str) -> list[str]:
        return list(self.protocol_properties.get(key, []))

    def to_dict(self) -> dict:
        return {
            "node": str(self.node),
            "protocol": self.protocol,
            "host": self.host,
            "client_port": self.client_port,
            "server_port": self.server_port,
            "peers": dict(self.peers),
            "protocol_properties": {k: list(v) for k, v in self.protocol_properties.items()},
            "storage": self.storage.to_dict(),
            "resend_interval_ms": self.resend_interval_ms,
            "queue_capacity": self.queue_capacity,
            "clock_offset_ms": self.clock_offset_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ServerConfig":
        try:
            cfg = cls(
                node=NodeId.parse(d["node"]),
                protocol=d["protocol"],
                host=d.get("host", "127.0.0.1"),
                client_port=d.get("client_port", 0),
                server_port=d.get("server_port", 0),
                peers=dict(d.get("peers", {})),
                protocol_properties={k: list(v) for k, v in d.get("protocol_properties", {}).items()},
                storage=StorageSettings.from_dict(d.get("storage", {})),
                resend_interval_ms=d.get("resend_interval_ms", DEFAULT_RESEND_INTERVAL_MS),
                queue_capacity=d.get("queue_capacity", DEFAULT_QUEUE_CAPACITY),
                clock_offset_ms=d.get("clock_offset_ms", 0),
            )
        except KeyError as exc:
            raise ConfigError(f"server config missing field {exc}") from exc
        cfg.validate()
        return cfg

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ServerConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot load server config {path}: {exc}") from exc


@dataclass
class ClientConfig:
    client_id: str
    local_replica: int
    num_replicas: int
    num_partitions: int
    servers: dict[str, str] = dc_field(default_factory=dict)  # node id -> "host:port"
    timeout_ms: int = DEFAULT_CLIENT_TIMEOUT_MS

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "local_replica": self.local_replica,
            "num_replicas": self.num_replicas,
            "num_partitions": self.num_partitions,
            "servers": dict(self.servers),
            "timeout_ms": self.timeout_ms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClientConfig":
        return cls(
            client_id=d["client_id"],
            local_replica=d["local_replica"],
            num_replicas=d["num_replicas"],
            num_partitions=d["num_partitions"],
            servers=dict(d.get("servers", {})),
            timeout_ms=d.get("timeout_ms", DEFAULT_CLIENT_TIMEOUT_MS),
        )


def star_tree(num_partitions: int, root: int = 0) -> dict[int, tuple[int, list[int]]]:
    """parent/children per partition; the root is its own parent."""
    out = {}
    for p in range(num_partitions):
        if p == root:
            out[p] = (p, [c for c in range(num_partitions) if c != root])
        else:
            out[p] = (root, [])
    return out


def make_cluster_configs(
    protocol: str,
    num_replicas: int,
    num_partitions: int,
    *,
    host: str = "127.0.0.1",
    base_port: int = 0,
    heartbeat_interval_ms: int = 10,
    gst_interval_ms: int = 10,
    storage: StorageSettings | None = None,
    resend_interval_ms: int = DEFAULT_RESEND_INTERVAL_MS,
    queue_capacity: int = DEFAULT_QUEUE_CAPACITY,
    tree: dict[int, tuple[int, list[int]]] | None = None,
) -> dict[str, ServerConfig]:
    """Full-replication topology: every partition peers with the same
    partition id in every other replica, plus intra-replica tree links for
    stable-time aggregation. ``base_port=0`` leaves ports unassigned (the
    simulator does not use them; TCP callers assign real ports)."""
    if num_replicas <= 0 or num_partitions <= 0:
        raise ConfigError("need at least one replica and one partition")
    tree = tree or star_tree(num_partitions)
    ids = [NodeId(r, p) for r in range(num_replicas) for p in range(num_partitions)]
    ports = {}
    for i, nid in enumerate(ids):
        ports[str(nid)] = (base_port + 2 * i, base_port + 2 * i + 1) if base_port else (0, 0)

    configs: dict[str, ServerConfig] = {}
    for nid in ids:
        parent, children = tree[nid.partition]
        peers = {}
        # same-partition peers in every other replica (replication links)
        for other in range(num_replicas):
            if other != nid.replica:
                pid = str(NodeId(other, nid.partition))
                peers[pid] = f"{host}:{ports[pid][1]}"
        # all sibling partitions in this replica (hub: stable-time tree
        # links and dependency checks both ride on these)
        for sibling in range(num_partitions):
            if sibling != nid.partition:
                lid = str(NodeId(nid.replica, sibling))
                peers[lid] = f"{host}:{ports[lid][1]}"
        props = {
            "dc_id": [str(nid.replica)],
            "p_id": [str(nid.partition)],
            "parent_p_id": [str(parent)],
            "children_p_ids": [str(c) for c in children],
            "num_of_datacenters": [str(num_replicas)],
            "num_of_partitions": [str(num_partitions)],
            "heartbeat_interval": [str(heartbeat_interval_ms)],
            "gst_comutation_interval": [str(gst_interval_ms)],
        }
        configs[str(nid)] = ServerConfig(
            node=nid,
            protocol=protocol,
            host=host,
            client_port=ports[str(nid)][0],
            server_port=ports[str(nid)][1],
            peers=peers,
            protocol_properties=props,
            storage=StorageSettings(**(storage.to_dict() if storage else {})),
            resend_interval_ms=resend_interval_ms,
            queue_capacity=queue_capacity,
        )
    return configs
