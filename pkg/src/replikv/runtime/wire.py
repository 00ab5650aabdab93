"""Kernel-level wire schemas and stream framing.

Every frame on the wire is a 4-byte big-endian unsigned length followed by
that many bytes of codec payload. Server-port connections carry
``TRANSPORT_FRAME`` messages (channel handshake, sequenced data, acks,
status probes); client-port connections carry the active protocol's raw
``ClientMessage``/``ClientReply`` bytes.
"""

from __future__ import annotations

import io
import socket

from ..codec import (
    Schema,
    boolean,
    bytes_,
    field,
    fixed64,
    message,
    string,
    uint32,
    uint64,
)
from ..errors import CodecError

MAX_FRAME = 64 * 1024 * 1024

# Payload of a sequenced channel frame: either protocol traffic, a
# storage-engine replication record, or a latency probe.
PING = Schema("Ping", [field(1, "nonce", uint64), field(2, "sent_at_us", uint64)])
STORAGE_SYNC = Schema("StorageSync", [field(1, "payload", bytes_)])
NODE_ENVELOPE = Schema(
    "NodeEnvelope",
    [
        field(1, "protocol", bytes_),
        field(2, "storage_sync", message(STORAGE_SYNC)),
        field(3, "ping", message(PING)),
        field(4, "pong", message(PING)),
    ],
    oneof=("protocol", "storage_sync", "ping", "pong"),
)

HELLO = Schema("Hello", [field(1, "node_id", string)])
DATA = Schema("Data", [field(1, "seq", uint64), field(2, "payload", bytes_)])
ACK = Schema("Ack", [field(1, "cum_seq", uint64)])

CHANNEL_STATUS = Schema(
    "ChannelStatus",
    [
        field(1, "peer", string),
        field(2, "queue_depth", uint32),
        field(3, "connected", boolean),
        field(4, "rtt_us", uint64),
    ],
)
STATUS_REQ = Schema("StatusRequest", [])
STATUS_REPLY = Schema(
    "StatusReply",
    [
        field(1, "node_id", string),
        field(2, "protocol", string),
        field(3, "uptime_ms", uint64),
        field(4, "clients_connected", uint32),
        field(5, "channels", message(CHANNEL_STATUS), repeated=True),
        field(6, "dropped_envelopes", uint64),
    ],
)

TRANSPORT_FRAME = Schema(
    "TransportFrame",
    [
        field(1, "hello", message(HELLO)),
        field(2, "data", message(DATA)),
        field(3, "ack", message(ACK)),
        field(4, "status_req", message(STATUS_REQ)),
        field(5, "status_reply", message(STATUS_REPLY)),
    ],
    oneof=("hello", "data", "ack", "status_req", "status_reply"),
)


def frame(payload: bytes) -> bytes:
    if len(payload) > MAX_FRAME:
        raise CodecError(f"frame too large: {len(payload)}")
    return len(payload).to_bytes(4, "big") + payload


def read_frame(sock: socket.socket) -> bytes | None:
    """Read one length-prefixed frame; None on clean EOF."""
    header = _read_exact(sock, 4)
    if header is None:
        return None
    n = int.from_bytes(header, "big")
    if n > MAX_FRAME:
        raise CodecError(f"incoming frame too large: {n}")
    body = _read_exact(sock, n)
    if body is None:
        raise CodecError("connection closed mid-frame")
    return body


def _read_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = io.BytesIO()
    remaining = n
    while remaining:
        chunk = sock.recv(remaining)
        if not chunk:
            return None
        buf.write(chunk)
        remaining -= len(chunk)
    return buf.getvalue()
