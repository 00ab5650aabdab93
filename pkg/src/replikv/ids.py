"""Node identity and key-to-partition routing."""

from __future__ import annotations

import zlib
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True, order=True)
class NodeId:
    """A server identity: (replica, partition), rendered as "<replica>_<partition>"."""

    replica: int
    partition: int

    def __post_init__(self):
        if self.replica < 0 or self.partition < 0:
            raise ConfigError(f"negative node id components: {self.replica}_{self.partition}")

    def __str__(self) -> str:
        return f"{self.replica}_{self.partition}"

    @classmethod
    def parse(cls, text: str) -> "NodeId":
        parts = text.split("_")
        if len(parts) != 2:
            raise ConfigError(f"malformed node id {text!r}, expected '<replica>_<partition>'")
        try:
            return cls(int(parts[0]), int(parts[1]))
        except ValueError as exc:
            raise ConfigError(f"malformed node id {text!r}") from exc


def partition_for_key(key: str, num_partitions: int) -> int:
    """Stable hash routing; must agree between every client and server."""
    if num_partitions <= 0:
        raise ConfigError("num_partitions must be positive")
    return zlib.crc32(key.encode("utf-8")) % num_partitions


def server_for_key(key: str, replica: int, num_partitions: int) -> str:
    return str(NodeId(replica, partition_for_key(key, num_partitions)))
