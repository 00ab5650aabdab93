"""Workload execution and measurement.

Two execution environments share the same operation streams and report
format: ``run_workload`` drives blocking clients from real threads
(sockets), ``run_workload_sim`` drives closed-loop client actors inside a
deterministic simulation, where latency is simulated time. An insert with
amplification factor f expands into f internal PUT requests issued
sequentially as one macro operation; the macro's latency is its wall time
and throughput counts macro operations, not internal PUTs.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field as dc_field

from ..config import ClientConfig
from ..errors import ReplikvError
from ..protocols import get_protocol
from .workload import OpStream, WorkloadSpec


@dataclass
class OpSummary:
    count: int = 0
    failures: int = 0
    mean_us: float = 0.0
    p50_us: int = 0
    p95_us: int = 0
    p99_us: int = 0

    @classmethod
    def from_latencies(cls, latencies: list[int], failures: int) -> "OpSummary":
        if not latencies:
            return cls(count=0, failures=failures)
        ordered = sorted(latencies)
        n = len(ordered)

        def pct(q):
            return ordered[max(0, -(-q * n // 100) - 1)]

        return cls(
            count=n,
            failures=failures,
            mean_us=sum(ordered) / n,
            p50_us=pct(50),
            p95_us=pct(95),
            p99_us=pct(99),
        )

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class MetricsReport:
    protocol: str
    tags: dict[str, str] = dc_field(default_factory=dict)
    throughput_ops_s: float = 0.0
    wall_time_us: int = 0
    ops: dict[str, OpSummary] = dc_field(default_factory=dict)
    wire_puts: int = 0

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "tags": dict(self.tags),
            "throughput_ops_s": self.throughput_ops_s,
            "wall_time_us": self.wall_time_us,
            "wire_puts": self.wire_puts,
            "ops": {k: v.to_dict() for k, v in self.ops.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            protocol=d["protocol"],
            tags=dict(d.get("tags", {})),
            throughput_ops_s=d["throughput_ops_s"],
            wall_time_us=d["wall_time_us"],
            wire_puts=d.get("wire_puts", 0),
            ops={k: OpSummary(**v) for k, v in d.get("ops", {}).items()},
        )


class _Collector:
    """Latency sink shared by the workers of one client group."""

    def __init__(self):
        self.latencies: dict[str, list[int]] = {"get": [], "put": [], "amplified_insert": []}
        self.failures: dict[str, int] = {"get": 0, "put": 0, "amplified_insert": 0}
        self.wire_puts = 0
        self.lock = threading.Lock()

    def record(self, op: str, latency_us: int, ok: bool):
        with self.lock:
            if ok:
                self.latencies[op].append(latency_us)
            else:
                self.failures[op] += 1

    def report(self, protocol: str, wall_us: int, tags: dict) -> MetricsReport:
        total = sum(len(v) for v in self.latencies.values())
        return MetricsReport(
            protocol=protocol,
            tags=dict(tags),
            throughput_ops_s=total / (wall_us / 1e6) if wall_us else 0.0,
            wall_time_us=wall_us,
            wire_puts=self.wire_puts,
            ops={
                op: OpSummary.from_latencies(self.latencies[op], self.failures[op])
                for op in self.latencies
            },
        )


def macro_keys(key: str, factor: int) -> list[str]:
    """Internal PUT targets of one amplified insert."""
    if factor == 1:
        return [key]
    return [f"{key}#{j}" for j in range(factor)]


# -- threaded execution (real clients) ---------------------------------------------


def run_workload(
    spec: WorkloadSpec,
    client_factory,
    seed: int,
    tags: dict | None = None,
    protocol: str = "",
) -> MetricsReport:
    """Each of ``spec.thread_count`` workers owns one client handle and
    executes ``spec.operation_count`` operations; failures are counted,
    not fatal."""
    spec.validate()
    collector = _Collector()
    errors: list[Exception] = []

    def worker(idx: int):
        try:
            client = client_factory(idx)
        except Exception as exc:  # cluster unreachable
            errors.append(exc)
            return
        try:
            for op in OpStream(spec, seed, idx):
                if op[0] == "get":
                    t0 = time.monotonic_ns()
                    try:
                        client.get(op[1])
                        ok = True
                    except ReplikvError:
                        ok = False
                    collector.record("get", (time.monotonic_ns() - t0) // 1000, ok)
                else:
                    t0 = time.monotonic_ns()
                    ok = True
                    for target in macro_keys(op[1], spec.amplification_factor):
                        with collector.lock:
                            collector.wire_puts += 1
                        try:
                            if not client.put(target, op[2]).ok:
                                ok = False
                                break
                        except ReplikvError:
                            ok = False
                            break
                    latency = (time.monotonic_ns() - t0) // 1000
                    name = "amplified_insert" if spec.amplification_factor > 1 else "put"
                    collector.record(name, latency, ok)
        finally:
            client.close()

    t_start = time.monotonic_ns()
    threads = [threading.Thread(target=worker, args=(i,)) for i in range(spec.thread_count)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    if errors and len(errors) == spec.thread_count:
        raise errors[0]
    wall_us = (time.monotonic_ns() - t_start) // 1000
    return run_tags_report(collector, protocol, wall_us, tags)


def run_tags_report(collector, protocol, wall_us, tags):
    return collector.report(protocol, wall_us, tags or {})


# -- simulated execution (closed-loop actors) -----------------------------------------


@dataclass
class ClientGroup:
    group_id: str
    replica: int
    count: int


class _SimWorker:
    def __init__(self, cluster, group: ClientGroup, idx: int, spec: WorkloadSpec, seed: int, collector: _Collector):
        self.cluster = cluster
        self.collector = collector
        self.spec = spec
        self.client_id = f"{group.group_id}.{idx}"
        config = ClientConfig(
            client_id=self.client_id,
            local_replica=group.replica,
            num_replicas=len({n.split("_")[0] for n in cluster.nodes}),
            num_partitions=len({n.split("_")[1] for n in cluster.nodes}),
            servers={nid: "" for nid in cluster.nodes},
        )
        self.session = get_protocol(next(iter(cluster.nodes.values())).config.protocol).session_cls(config)
        self.stream = iter(OpStream(spec, seed, sum(ord(c) for c in group.group_id) * 1000 + idx))
        self.done = False
        self.finished_at = 0
        self._macro_remaining: list[str] = []
        self._macro_value = b""
        self._macro_ok = True
        self._op_started = 0

    def start(self):
        self._next_op()

    def _next_op(self):
        op = next(self.stream, None)
        if op is None:
            self.done = True
            self.finished_at = self.cluster.now_us
            return
        self._op_started = self.cluster.now_us
        if op[0] == "get":
            server, msg = self.session.begin_get(op[1])
            self._send(server, msg, self._on_get_reply)
        else:
            self._macro_remaining = macro_keys(op[1], self.spec.amplification_factor)
            self._macro_value = op[2]
            self._macro_ok = True
            self._issue_macro_put()

    def _issue_macro_put(self):
        target = self._macro_remaining.pop(0)
        self.collector.wire_puts += 1
        server, msg = self.session.begin_put(target, self._macro_value)
        self._send(server, msg, self._on_put_reply)

    def _send(self, server, msg, on_reply):
        payload = self.session.client_message_schema.encode(msg)
        self.cluster.client_request(self.client_id, server, payload, on_reply)

    def _on_get_reply(self, payload, now_us):
        self.session.end_get(self.session.client_reply_schema.decode(payload))
        self.collector.record("get", now_us - self._op_started, True)
        self._next_op()

    def _on_put_reply(self, payload, now_us):
        result = self.session.end_put(self.session.client_reply_schema.decode(payload))
        if not result.ok:
            self._macro_ok = False
            self._macro_remaining = []
        if self._macro_remaining:
            self._issue_macro_put()
            return
        name = "amplified_insert" if self.spec.amplification_factor > 1 else "put"
        self.collector.record(name, now_us - self._op_started, self._macro_ok)
        self._next_op()


def run_workload_sim(
    cluster,
    spec: WorkloadSpec,
    seed: int,
    groups: list[ClientGroup] | None = None,
    max_steps: int = 200_000_000,
) -> list[MetricsReport]:
    """Run one workload over a simulated cluster; one report per client
    group, latencies in simulated microseconds."""
    spec.validate()
    protocol = next(iter(cluster.nodes.values())).config.protocol
    if groups is None:
        groups = [ClientGroup("clients", replica=0, count=spec.thread_count)]
    collectors = {}
    workers = []
    for group in groups:
        collector = collectors[group.group_id] = _Collector()
        for i in range(group.count):
            workers.append(_SimWorker(cluster, group, i, spec, seed, collector))
    t_start = cluster.now_us
    for w in workers:
        w.start()
    steps = 0
    while not all(w.done for w in workers):
        if not cluster._step():
            raise ReplikvError("simulation stalled with workers outstanding")
        steps += 1
        if steps > max_steps:
            raise ReplikvError("simulation exceeded step budget")
    wall_us = max(w.finished_at for w in workers) - t_start
    reports = []
    for group in groups:
        reports.append(
            collectors[group.group_id].report(
                protocol,
                wall_us,
                {"client": group.group_id, "replica": str(group.replica), "workload": spec.name},
            )
        )
    return reports
