"""Deterministic discrete-event simulator transport.

Time is integer microseconds. All randomness (link delays) comes from one
seeded generator drawn in event order, so identical (seed, schedule,
workload) yields identical traces. Each server node is a serial processor:
inbound work occupies it for a service time derived from message size,
which makes protocol message overhead show up as queueing delay and
throughput differences, the way it does on real hardware.

Reliable FIFO channels ride on lossy links: frames sent while a link is
inside a configured down-window are dropped, and the channel's resend
timer recovers them; receivers accept only the next expected sequence
number and answer with cumulative acks.
"""

from __future__ import annotations

import random
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field as dc_field
from heapq import heappop, heappush
from typing import Callable

from .. import codec
from ..clock import Clock
from ..config import ClientConfig, ServerConfig
from ..errors import (
    DuplicateNodeError,
    QueueFullError,
    ReplyTimeoutError,
    UnknownDestinationError,
)
from ..ids import NodeId
from . import wire
from .api import ClientTransport, Envelope, HistoryRecorder, ReplyAgent
from .channel import ChannelCore, ReceiverState
from .kernel import ServerCore


@dataclass
class SimParams:
    seed: int = 0
    link_delay_us: tuple[int, int] = (1_000, 5_000)
    client_delay_us: tuple[int, int] | None = None  # defaults to link_delay_us
    service_base_us: int = 100
    service_per_byte_ns: int = 400
    timer_service_us: int = 20
    clock_offsets_ms: dict[str, int] = dc_field(default_factory=dict)

    def client_delays(self) -> tuple[int, int]:
        return self.client_delay_us or self.link_delay_us


class SimClock(Clock):
    def __init__(self, cluster: "SimCluster", offset_ms: int):
        self._cluster = cluster
        self._offset_ms = offset_ms

    def now_ms(self) -> int:
        return self._cluster.now_us // 1000 + self._offset_ms


class _PeriodicTask:
    __slots__ = ("node", "interval_us", "fn", "name")

    def __init__(self, node, interval_us, fn, name):
        self.node = node
        self.interval_us = interval_us
        self.fn = fn
        self.name = name


class SimNode:
    """One server: a ServerCore plus serial-processing and channel state."""

    def __init__(self, cluster: "SimCluster", config: ServerConfig):
        self.cluster = cluster
        self.config = config
        self.id = str(config.node)
        self.busy_until = 0
        self.channels: dict[str, ChannelCore] = {}
        self.receivers: dict[str, ReceiverState] = {}
        self.resend_armed: set[str] = set()
        self.core = ServerCore(
            config,
            cluster.protocol_factory,
            SimClock(cluster, config.clock_offset_ms),
            history=cluster.history,
            send_frame=lambda dest, payload: cluster._channel_send(self, dest, payload),
            schedule_periodic=lambda ms, fn, name: cluster._register_periodic(self, ms, fn, name),
            sleep_then=lambda ms, fn: cluster._sleep_then(self, ms, fn),
            now_us=lambda: cluster.now_us,
        )
        for peer in config.peers:
            self.channels[peer] = ChannelCore(peer, config.queue_capacity)

    def channel_for(self, dest: str) -> ChannelCore:
        ch = self.channels.get(dest)
        if ch is None:
            raise UnknownDestinationError(f"{self.id}: unknown destination {dest!r}")
        return ch


class SimTrace:
    """Ordered delivery trace; byte-serializable for replay comparison."""

    def __init__(self):
        self.events: list[tuple] = []
        self.complete = True

    def append(self, kind: str, time_us: int, src: str, dst: str, seq: int, size: int):
        self.events.append((kind, time_us, src, dst, seq, size))

    def to_bytes(self) -> bytes:
        return repr(self.events).encode()

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)


class SimCluster:
    def __init__(
        self,
        configs: dict[str, ServerConfig],
        protocol_factory,
        params: SimParams | None = None,
        *,
        record_history: bool = True,
    ):
        self.params = params or SimParams()
        self.protocol_factory = protocol_factory
        self.rng = random.Random(self.params.seed)
        self.now_us = 0
        self._heap: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.history = HistoryRecorder(enabled=record_history)
        self.trace = SimTrace()
        self.tracing = True
        self.draining = False
        self._faults: dict[tuple[str, str], list[tuple[int, int]]] = {}
        self._periodic: list[_PeriodicTask] = []
        self._link_last_arrival: dict[tuple[str, str], int] = {}
        self.wire_counts: dict[str, int] = {}

        self.nodes: dict[str, SimNode] = {}
        for key in sorted(configs, key=lambda s: NodeId.parse(s)):
            cfg = configs[key]
            nid = str(cfg.node)
            cfg.clock_offset_ms = self.params.clock_offsets_ms.get(nid, cfg.clock_offset_ms)
            if nid in self.nodes:
                raise DuplicateNodeError(f"node {nid} registered twice")
            self.nodes[nid] = SimNode(self, cfg)
        for node in self.nodes.values():
            node.core.start()

    # -- scheduling -----------------------------------------------------------

    def _schedule(self, at_us: int, fn: Callable[[], None]):
        self._seq += 1
        heappush(self._heap, (max(at_us, self.now_us), self._seq, fn))

    def _step(self) -> bool:
        if not self._heap:
            return False
        at, _, fn = heappop(self._heap)
        self.now_us = max(self.now_us, at)
        fn()
        return True

    def run_for(self, duration_us: int):
        """Advance simulated time by ``duration_us`` with timers active."""
        end = self.now_us + duration_us
        while self._heap and self._heap[0][0] <= end:
            self._step()
        self.now_us = end

    def run_until_quiescent(self, max_steps: int | None = None) -> SimTrace:
        """Deliver all in-flight traffic; periodic protocol tasks are
        suspended (and re-armed afterwards), otherwise quiescence would
        never be reached. Returns the cumulative delivery trace."""
        self.draining = True
        steps = 0
        try:
            while self._heap:
                if max_steps is not None and steps >= max_steps:
                    self.trace.complete = False
                    break
                self._step()
                steps += 1
        finally:
            self.draining = False
            for task in self._periodic:
                self._arm_periodic(task, self.now_us + task.interval_us)
        return self.trace

    drain = run_until_quiescent

    # -- faults ---------------------------------------------------------------

    def add_fault(self, src: str, dst: str, start_ms: int, end_ms: int, *, both_ways=False):
        self._faults.setdefault((src, dst), []).append((start_ms * 1000, end_ms * 1000))
        self._faults[(src, dst)].sort()
        if both_ways:
            self.add_fault(dst, src, start_ms, end_ms)

    def link_up(self, src: str, dst: str, t_us: int) -> bool:
        windows = self._faults.get((src, dst))
        if not windows:
            return True
        i = bisect_right(windows, (t_us, float("inf"))) - 1
        return not (i >= 0 and windows[i][0] <= t_us < windows[i][1])

    # -- node processing -------------------------------------------------------

    def _service_time(self, size: int, base: int | None = None) -> int:
        base = self.params.service_base_us if base is None else base
        return base + (size * self.params.service_per_byte_ns) // 1000

    def _node_work(self, node: SimNode, size: int, fn: Callable[[], None], base: int | None = None):
        start = max(self.now_us, node.busy_until)
        node.busy_until = start + self._service_time(size, base)
        self._schedule(node.busy_until, fn)

    # -- channels ---------------------------------------------------------------

    def _channel_send(self, node: SimNode, dest: str, payload: bytes):
        ch = node.channel_for(dest)  # raises UnknownDestinationError
        seq, _ = ch.enqueue(payload)  # raises QueueFullError
        self._transmit(node, dest, [(seq, payload)])
        if dest not in node.resend_armed:
            node.resend_armed.add(dest)
            self._schedule(
                self.now_us + node.config.resend_interval_ms * 1000,
                lambda: self._resend(node, dest),
            )

    def _resend(self, node: SimNode, dest: str):
        ch = node.channels[dest]
        pending = ch.pending()
        if not pending:
            node.resend_armed.discard(dest)
            return
        self._transmit(node, dest, pending)
        self._schedule(
            self.now_us + node.config.resend_interval_ms * 1000,
            lambda: self._resend(node, dest),
        )

    def _transmit(self, node: SimNode, dest: str, frames: list[tuple[int, bytes]]):
        lo, hi = self.params.link_delay_us
        for seq, payload in frames:
            delay = self.rng.randint(lo, hi)
            if not self.link_up(node.id, dest, self.now_us):
                continue  # dropped; retry timer will recover
            self._schedule(
                self.now_us + delay,
                lambda s=seq, p=payload: self._deliver_data(node.id, dest, s, p),
            )

    def _deliver_data(self, src: str, dst: str, seq: int, payload: bytes):
        receiver = self.nodes.get(dst)
        if receiver is None:
            return
        state = receiver.receivers.setdefault(src, ReceiverState())
        deliver, cum = state.accept(seq)
        self._send_ack(receiver, src, cum)
        if not deliver:
            return
        if self.tracing:
            self.trace.append("deliver", self.now_us, src, dst, seq, len(payload))
        self.wire_counts["server_frames"] = self.wire_counts.get("server_frames", 0) + 1
        self._node_work(
            receiver, len(payload), lambda: receiver.core.dispatch_server(payload, src)
        )

    def _send_ack(self, node: SimNode, dest: str, cum: int):
        lo, hi = self.params.link_delay_us
        if not self.link_up(node.id, dest, self.now_us):
            return
        delay = self.rng.randint(lo, hi)
        self._schedule(self.now_us + delay, lambda: self._deliver_ack(node.id, dest, cum))

    def _deliver_ack(self, src: str, dst: str, cum: int):
        sender = self.nodes.get(dst)
        if sender is None:
            return
        ch = sender.channels.get(src)
        if ch is not None:
            ch.on_ack(cum)

    # -- periodic tasks and sleeps -----------------------------------------------

    def _register_periodic(self, node: SimNode, interval_ms: int, fn, name: str):
        task = _PeriodicTask(node, interval_ms * 1000, fn, name)
        self._periodic.append(task)
        self._arm_periodic(task, self.now_us + task.interval_us)

    def _arm_periodic(self, task: _PeriodicTask, at_us: int):
        def fire():
            if self.draining:
                return  # suspended; re-armed when the drain finishes
            self._node_work(
                task.node, 0, task.fn, base=self.params.timer_service_us
            )
            self._arm_periodic(task, at_us + task.interval_us)

        self._schedule(at_us, fire)

    def _sleep_then(self, node: SimNode, delay_ms: int, fn):
        # A sleeping handler does not occupy the node; the continuation is
        # queued as fresh work when the delay elapses.
        self._schedule(
            self.now_us + delay_ms * 1000,
            lambda: self._node_work(node, 0, fn),
        )

    # -- client traffic -------------------------------------------------------------

    def client_request(
        self,
        client_id: str,
        server_id: str,
        payload: bytes,
        on_reply: Callable[[bytes, int], None],
    ):
        node = self.nodes.get(server_id)
        if node is None:
            raise UnknownDestinationError(f"unknown server {server_id!r}")
        lo, hi = self.params.client_delays()
        self.wire_counts["client_messages"] = self.wire_counts.get("client_messages", 0) + 1
        arrive = self.now_us + self.rng.randint(lo, hi)

        def deliver():
            if self.tracing:
                self.trace.append("client_req", self.now_us, client_id, server_id, 0, len(payload))
            agent = ReplyAgent(send_back, client_id)
            self._node_work(
                node, len(payload), lambda: node.core.dispatch_client(agent, payload)
            )

        def send_back(reply_payload: bytes):
            rlo, rhi = self.params.client_delays()
            at = self.now_us + self.rng.randint(rlo, rhi)
            self._schedule(at, lambda: on_reply(reply_payload, at))

        self._schedule(arrive, deliver)

    # -- inspection ----------------------------------------------------------------

    def node_status(self) -> dict[str, dict]:
        out = {}
        for nid, node in self.nodes.items():
            out[nid] = {
                "up": True,
                "clients_connected": 0,
                "channels": {
                    dest: {"queue_depth": ch.depth(), "connected": True}
                    for dest, ch in node.channels.items()
                },
                "dropped_envelopes": node.core.stats.dropped_envelopes,
            }
        return out

    def total_injected_sleep_ms(self) -> int:
        return sum(n.core.stats.injected_sleep_ms for n in self.nodes.values())

    def close(self):
        for node in self.nodes.values():
            node.core.close()


def build_sim_cluster(
    protocol: str,
    num_replicas: int,
    num_partitions: int,
    params: SimParams | None = None,
    *,
    record_history: bool = True,
    **config_kw,
) -> SimCluster:
    """Convenience: full-replication topology running ``protocol`` in-process."""
    from ..config import make_cluster_configs
    from ..protocols import get_protocol

    spec = get_protocol(protocol)
    configs = make_cluster_configs(protocol, num_replicas, num_partitions, **config_kw)
    for cfg in configs.values():
        if "storage" not in config_kw:
            cfg.storage.versioning = spec.preferred_versioning
    return SimCluster(
        configs, spec.server_cls, params or SimParams(), record_history=record_history
    )


def sim_client(cluster: SimCluster, client_id: str, replica: int, timeout_ms: int = 10_000):
    """Blocking client attached to one replica of a simulated cluster."""
    from ..protocols import get_protocol
    from .api import BlockingClient

    any_node = next(iter(cluster.nodes.values()))
    protocol = any_node.config.protocol
    replicas = {NodeId.parse(n).replica for n in cluster.nodes}
    partitions = {NodeId.parse(n).partition for n in cluster.nodes}
    config = ClientConfig(
        client_id=client_id,
        local_replica=replica,
        num_replicas=len(replicas),
        num_partitions=len(partitions),
        servers={nid: "" for nid in cluster.nodes},
        timeout_ms=timeout_ms,
    )
    spec = get_protocol(protocol)
    return BlockingClient(spec.session_cls(config), SimClientTransport(cluster, config))


class SimClientTransport(ClientTransport):
    """Blocking client facade: ``read`` advances the simulation until the
    reply for this client arrives or simulated time exceeds the timeout.
    Only one blocking client should drive the cluster at a time."""

    def __init__(self, cluster: SimCluster, config: ClientConfig):
        self.cluster = cluster
        self.config = config
        self._inbox: dict[str, deque] = {}

    def send(self, server_id: str, payload: bytes) -> None:
        if server_id not in self.config.servers and server_id not in self.cluster.nodes:
            raise UnknownDestinationError(f"server {server_id!r} not in client map")
        inbox = self._inbox.setdefault(server_id, deque())
        self.cluster.client_request(
            self.config.client_id, server_id, payload, lambda p, t: inbox.append(p)
        )

    def read(self, server_id: str) -> bytes:
        inbox = self._inbox.setdefault(server_id, deque())
        deadline = self.cluster.now_us + self.config.timeout_ms * 1000
        while not inbox:
            heap = self.cluster._heap
            if not heap or heap[0][0] > deadline:
                raise ReplyTimeoutError(
                    f"{self.config.client_id}: no reply from {server_id} "
                    f"within {self.config.timeout_ms} ms"
                )
            self.cluster._step()
        return inbox.popleft()
