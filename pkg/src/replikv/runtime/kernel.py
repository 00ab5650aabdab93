"""Transport-independent server kernel.

``ServerCore`` hosts one protocol instance: it builds the storage engine
with the protocol's comparator, decodes inbound envelopes, routes them to
the protocol's two dispatch hooks (or to the storage engine / latency
probe handlers for kernel-level traffic), and isolates handler failures so
one bad request never takes the server down.
"""

from __future__ import annotations

import logging
from typing import Callable

from .. import codec
from ..clock import Clock
from ..config import ServerConfig
from ..errors import CodecError, ConfigError
from ..ids import NodeId
from ..storage import LOG_ENTRY, MemoryStorage
from . import wire
from .api import Envelope, HistoryRecorder, KernelStats, ReplyAgent, ServerContext

log = logging.getLogger(__name__)

ProtocolFactory = Callable[[ServerContext], "ProtocolServer"]  # noqa: F821


class ServerCore(ServerContext):
    def __init__(
        self,
        config: ServerConfig,
        protocol_factory: ProtocolFactory,
        clock: Clock,
        *,
        history: HistoryRecorder | None = None,
        send_frame: Callable[[str, bytes], None] | None = None,
        schedule_periodic: Callable[[int, Callable[[], None], str], None] | None = None,
        sleep_then: Callable[[int, Callable[[], None]], None] | None = None,
        now_us: Callable[[], int] | None = None,
    ):
        config.validate()
        self.config = config
        self.node = config.node
        self.clock = clock
        self.stats = KernelStats()
        self.history = history or HistoryRecorder(enabled=False)
        self._send_payload = send_frame  # (dest, NODE_ENVELOPE bytes) -> None
        self._schedule_periodic = schedule_periodic
        self._sleep_then = sleep_then
        self._now_us = now_us or (lambda: clock.now_ms() * 1000)
        self.rtts_us: dict[str, int] = {}
        self._ping_nonce = 0

        self.protocol = protocol_factory(self)
        if config.storage.replication == "storage_centric" and not getattr(
            self.protocol, "supports_storage_centric", False
        ):
            raise ConfigError(
                f"protocol {self.protocol.name!r} requires server_centric storage; "
                "storage-centric replication is incompatible with its replication scheme"
            )
        self.storage = MemoryStorage(
            self.protocol.storage_order_key,
            self.protocol.record_schema,
            versioning=config.storage.versioning,
            replication=config.storage.replication,
            flush_on_insert=config.storage.flush_on_insert,
            persist_path=config.storage.persist_path,
            ring=config.storage.ring,
            node_id=str(self.node),
            replicate_fn=self._storage_sync_out,
        )

    # -- ServerContext services ---------------------------------------------

    def send_to_server(self, dest: str, payload: bytes) -> None:
        self.stats.sends_out += 1
        self._send_payload(dest, codec.encode(wire.NODE_ENVELOPE, {"protocol": payload}))

    def schedule_periodic(self, interval_ms: int, fn: Callable[[], None], name: str) -> None:
        self._schedule_periodic(interval_ms, fn, name)

    def sleep_then(self, delay_ms: int, fn: Callable[[], None]) -> None:
        self.stats.injected_sleep_ms += delay_ms
        self.stats.sleeps += 1
        self._sleep_then(delay_ms, fn)

    def _storage_sync_out(self, dest: str, payload: bytes):
        self._send_payload(
            dest,
            codec.encode(wire.NODE_ENVELOPE, {"storage_sync": {"payload": payload}}),
        )

    # -- dispatch -------------------------------------------------------------

    def start(self):
        self.protocol.on_start()

    def dispatch(self, envelope: Envelope, agent: ReplyAgent | None = None):
        """Route one envelope to exactly one handler; errors are isolated."""
        if envelope.kind == "client_message":
            self.dispatch_client(agent, envelope.payload)
        elif envelope.kind == "server_message":
            self.dispatch_server(envelope.payload, envelope.source)
        else:
            self.stats.dropped_envelopes += 1
            log.warning("%s: cannot dispatch envelope kind %s", self.node, envelope.kind)

    def dispatch_client(self, agent: ReplyAgent, payload: bytes):
        self.stats.client_messages_in += 1
        try:
            msg = self.protocol.client_message_schema.decode(payload)
        except CodecError as exc:
            self.stats.dropped_envelopes += 1
            log.warning("%s: undecodable client message dropped: %s", self.node, exc)
            return
        try:
            self.protocol.handle_client_message(agent, msg)
        except Exception:
            self.stats.handler_errors += 1
            log.exception("%s: client handler failed", self.node)

    def dispatch_server(self, payload: bytes, source: str = ""):
        self.stats.server_messages_in += 1
        try:
            env = codec.decode(wire.NODE_ENVELOPE, payload)
        except CodecError as exc:
            self.stats.dropped_envelopes += 1
            log.warning("%s: undecodable server envelope dropped: %s", self.node, exc)
            return
        try:
            if env["protocol"] is not None:
                msg = self.protocol.server_message_schema.decode(env["protocol"])
                self.protocol.handle_server_message(msg)
            elif env["storage_sync"] is not None:
                entry = codec.decode(LOG_ENTRY, env["storage_sync"]["payload"])
                self.storage.apply_remote(entry["key"], entry["record"])
            elif env["ping"] is not None:
                if source:
                    self._send_payload(
                        source, codec.encode(wire.NODE_ENVELOPE, {"pong": env["ping"]})
                    )
            elif env["pong"] is not None:
                self.rtts_us[source] = max(0, self._now_us() - env["pong"]["sent_at_us"])
            else:
                self.stats.dropped_envelopes += 1
        except CodecError as exc:
            self.stats.dropped_envelopes += 1
            log.warning("%s: undecodable protocol message dropped: %s", self.node, exc)
        except Exception:
            self.stats.handler_errors += 1
            log.exception("%s: server handler failed", self.node)

    def send_pings(self):
        """Latency probe to every peer; transports schedule this periodically."""
        self._ping_nonce += 1
        payload = codec.encode(
            wire.NODE_ENVELOPE,
            {"ping": {"nonce": self._ping_nonce, "sent_at_us": self._now_us()}},
        )
        for peer in self.config.peers:
            try:
                self._send_payload(peer, payload)
            except Exception:  # channel full or unknown; probes are best-effort
                pass

    def close(self):
        self.storage.close()
