"""Contracts between the kernel, protocol implementations, and clients.

A protocol's server side is a pair of event handlers plus declared message
schemas; the kernel owns connections, reliable inter-server delivery,
periodic task scheduling, and storage wiring. The client side is a sans-IO
session object that builds requests and folds replies into session state,
so the same protocol logic runs over real sockets and inside the
deterministic simulator.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable

from ..clock import Clock
from ..codec import Schema
from ..config import ClientConfig, ServerConfig
from ..errors import DuplicateReplyError, ReplikvError
from ..ids import NodeId
from ..storage import MemoryStorage


@dataclass
class Envelope:
    """Tagged union of the three traffic kinds the kernel dispatches."""

    kind: str  # "server_message" | "client_message" | "client_reply"
    payload: bytes
    source: str  # node id or client id

    KINDS = ("server_message", "client_message", "client_reply")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ReplikvError(f"unknown envelope kind {self.kind!r}")


@dataclass
class KernelStats:
    dropped_envelopes: int = 0
    handler_errors: int = 0
    server_messages_in: int = 0
    client_messages_in: int = 0
    replies_out: int = 0
    sends_out: int = 0
    injected_sleep_ms: int = 0
    sleeps: int = 0

    def snapshot(self) -> dict:
        return dict(self.__dict__)


class HistoryRecorder:
    """Instrumentation hook; enabled only in simulator/test builds.

    Events are appended as plain tuples:
    (index, kind, node, session, key, sr, stamp, deps, gate)
    where deps is a tuple of (key, sr, stamp) and gate is a protocol gate
    value at reply time (gst scalar, dsv list, or None).
    """

    def __init__(self, enabled: bool = False):
        self.enabled = enabled
        self.events: list[tuple] = []
        self._lock = threading.Lock()

    def record(self, kind, node, session, key, sr=0, stamp=0, deps=(), gate=None):
        if not self.enabled:
            return
        with self._lock:
            self.events.append(
                (len(self.events), kind, node, session, key, sr, stamp, tuple(deps), gate)
            )


class ReplyAgent:
    """Hands a single client request's reply channel to the protocol."""

    def __init__(self, deliver: Callable[[bytes], None], source: str):
        self._deliver = deliver
        self.source = source
        self._replied = False

    def send_reply_bytes(self, payload: bytes):
        if self._replied:
            raise DuplicateReplyError(f"second reply to request from {self.source}")
        self._replied = True
        self._deliver(payload)


class ServerContext:
    """Kernel services available to a protocol server instance."""

    node: NodeId
    config: ServerConfig
    clock: Clock
    storage: MemoryStorage
    history: HistoryRecorder
    stats: KernelStats

    def send_to_server(self, dest: str, payload: bytes) -> None:
        """Reliable FIFO send; returns immediately. Raises QueueFullError /
        UnknownDestinationError."""
        raise NotImplementedError

    def schedule_periodic(self, interval_ms: int, fn: Callable[[], None], name: str) -> None:
        raise NotImplementedError

    def sleep_then(self, delay_ms: int, fn: Callable[[], None]) -> None:
        """Run ``fn`` after ``delay_ms`` without blocking other requests."""
        raise NotImplementedError


class ProtocolServer:
    """Base class for protocol server sides.

    Subclasses set the four schema attributes, implement the two dispatch
    hooks, and may register periodic tasks in ``on_start``.
    """

    name: str = ""
    record_schema: Schema
    client_message_schema: Schema
    server_message_schema: Schema
    client_reply_schema: Schema

    def __init__(self, ctx: ServerContext):
        self.ctx = ctx

    def on_start(self):
        pass

    def storage_order_key(self, rec: dict) -> tuple:
        raise NotImplementedError

    def handle_client_message(self, agent: ReplyAgent, msg: dict):
        raise NotImplementedError

    def handle_server_message(self, msg: dict):
        raise NotImplementedError

    # Convenience used by every protocol.
    def reply(self, agent: ReplyAgent, reply: dict):
        agent.send_reply_bytes(self.client_reply_schema.encode(reply))
        self.ctx.stats.replies_out += 1

    def send(self, dest: str, msg: dict):
        self.ctx.send_to_server(dest, self.server_message_schema.encode(msg))


@dataclass
class GetResult:
    found: bool
    value: bytes | None = None
    meta: dict = dc_field(default_factory=dict)


@dataclass
class PutResult:
    ok: bool
    meta: dict = dc_field(default_factory=dict)


class ClientSession:
    """Sans-IO client-side protocol logic.

    ``begin_*`` returns (server_id, client_message dict); ``end_*`` folds
    the decoded reply into session state and produces the result. One
    session instance belongs to one logical client and is not thread-safe.
    """

    name: str = ""
    client_message_schema: Schema
    client_reply_schema: Schema

    def __init__(self, config: ClientConfig):
        self.config = config

    def begin_get(self, key: str) -> tuple[str, dict]:
        raise NotImplementedError

    def end_get(self, reply: dict) -> GetResult:
        raise NotImplementedError

    def begin_put(self, key: str, value: bytes) -> tuple[str, dict]:
        raise NotImplementedError

    def end_put(self, reply: dict) -> PutResult:
        raise NotImplementedError


class ClientTransport:
    """Blocking request transport: send then read, per server."""

    def send(self, server_id: str, payload: bytes) -> None:
        raise NotImplementedError

    def read(self, server_id: str) -> bytes:
        raise NotImplementedError

    def close(self):
        pass


class BlockingClient:
    """Synchronous put/get facade over a session and a transport."""

    def __init__(self, session: ClientSession, transport: ClientTransport):
        self.session = session
        self.transport = transport

    def put(self, key: str, value: bytes) -> PutResult:
        server_id, msg = self.session.begin_put(key, value)
        self.transport.send(server_id, self.session.client_message_schema.encode(msg))
        reply = self.session.client_reply_schema.decode(self.transport.read(server_id))
        return self.session.end_put(reply)

    def get(self, key: str) -> GetResult:
        server_id, msg = self.session.begin_get(key)
        self.transport.send(server_id, self.session.client_message_schema.encode(msg))
        reply = self.session.client_reply_schema.decode(self.transport.read(server_id))
        return self.session.end_get(reply)

    def close(self):
        self.transport.close()
