"""Offline verification over recorded histories.

``check_causal`` rebuilds the causal graph of a run (session order plus
reads-from, or the explicit dependency lists a protocol declares) and
verifies that no read returned a version before every transitive
dependency of that version was visible in the reading replica.
``check_convergence`` compares per-replica winner maps after a drained
run, and ``audit_visibility`` replays protocol-specific visibility gates.

History events are the tuples ``HistoryRecorder`` emits:
(index, kind, node, session, key, sr, stamp, deps, gate) with kinds
put / get / visible / applied / gst / dsv. ``deps`` entries are
(key, sr, stamp) triples; ``gate`` is the reply-time gate value.
"""

from __future__ import annotations

from bisect import bisect_left
from dataclasses import dataclass
from pathlib import Path

from . import codec
from .codec import Schema, bytes_, field, fixed64, message, string, uint32, uint64
from .errors import ReplikvError
from .ids import NodeId, partition_for_key

Version = tuple[str, int, int]  # (key, sr, stamp)

EVENT_DEP = Schema(
    "HistoryDep",
    [field(1, "key", string), field(2, "sr", uint32), field(3, "stamp", fixed64)],
)
HISTORY_EVENT = Schema(
    "HistoryEvent",
    [
        field(1, "index", uint64),
        field(2, "kind", string),
        field(3, "node", string),
        field(4, "session", string),
        field(5, "key", string),
        field(6, "sr", uint32),
        field(7, "stamp", fixed64),
        field(8, "deps", message(EVENT_DEP), repeated=True),
        field(9, "gate", fixed64, repeated=True),
    ],
)
TRACE_HEADER = Schema(
    "TraceHeader",
    [
        field(1, "protocol", string),
        field(2, "num_replicas", uint32),
        field(3, "num_partitions", uint32),
    ],
)


@dataclass
class Violation:
    kind: str
    version: Version
    node: str
    index: int
    dep: Version | None = None
    detail: str = ""

    def __str__(self):
        base = f"[{self.kind}] version {self.version} at {self.node} (index {self.index})"
        if self.dep is not None:
            base += f" missing dependency {self.dep}"
        if self.detail:
            base += f": {self.detail}"
        return base


class _History:
    """Indexed view over raw history event tuples."""

    def __init__(self, events, num_partitions: int, protocol: str):
        self.num_partitions = num_partitions
        self.protocol = protocol
        self.puts: list[tuple] = []
        self.gets: list[tuple] = []
        self.visible_at: dict[tuple[str, Version], int] = {}
        self.applied_at: dict[tuple[str, Version], int] = {}
        self.gst_timeline: dict[str, tuple[list[int], list[int]]] = {}
        self.dsv_timeline: dict[str, tuple[list[int], list[tuple]]] = {}
        self.put_index: dict[Version, tuple] = {}

        for ev in events:
            index, kind, node, session, key, sr, stamp, deps, gate = ev
            if kind == "put":
                self.puts.append(ev)
                self.put_index[(key, sr, stamp)] = ev
            elif kind == "get":
                self.gets.append(ev)
            elif kind == "visible":
                self.visible_at.setdefault((node, (key, sr, stamp)), index)
            elif kind == "applied":
                self.applied_at.setdefault((node, (key, sr, stamp)), index)
            elif kind == "gst":
                idxs, vals = self.gst_timeline.setdefault(node, ([], []))
                idxs.append(index)
                vals.append(stamp)
            elif kind == "dsv":
                idxs, vals = self.dsv_timeline.setdefault(node, ([], []))
                idxs.append(index)
                vals.append(tuple(gate))

    def owner_node(self, replica: int, key: str) -> str:
        return f"{replica}_{partition_for_key(key, self.num_partitions)}"

    def first_gate_index(self, node: str, sr: int, stamp: int) -> int | None:
        """First event index at which the node's stability gate covers
        ``stamp`` from source ``sr`` (None if it never does)."""
        if self.protocol == "gentlerain":
            timeline = self.gst_timeline.get(node)
            if timeline is None:
                return None
            idxs, vals = timeline
            pos = bisect_left(vals, stamp)  # gst values are monotone
            return idxs[pos] if pos < len(vals) else None
        if self.protocol == "causalspartan":
            timeline = self.dsv_timeline.get(node)
            if timeline is None:
                return None
            idxs, vals = timeline
            for i, vec in enumerate(vals):  # vectors are elementwise monotone
                if sr < len(vec) and vec[sr] >= stamp:
                    return idxs[i]
            return None
        return 0  # protocols without a gate: visibility event is the gate

    def visibility_index(self, node: str, version: Version) -> int | None:
        """Index from which ``version`` was readable at ``node``."""
        inserted = self.visible_at.get((node, version))
        if inserted is None:
            return None
        key, sr, stamp = version
        replica = NodeId.parse(node).replica
        if sr == replica:
            return inserted
        gate = self.first_gate_index(node, sr, stamp)
        if gate is None:
            return None
        return max(inserted, gate)


def build_dependencies(history: _History) -> dict[Version, tuple[Version, ...]]:
    """Dependency edges per version: the protocol's explicit lists when it
    declares them, session order + reads-from otherwise."""
    explicit = history.protocol == "cops"
    deps: dict[Version, tuple[Version, ...]] = {}
    if explicit:
        for ev in history.puts:
            _, _, _, _, key, sr, stamp, dep_field, _ = ev
            deps[(key, sr, stamp)] = tuple((k, s, st) for (k, s, st) in dep_field)
        return deps
    context: dict[str, list[Version]] = {}
    events = sorted(history.puts + history.gets, key=lambda e: e[0])
    for ev in events:
        _, kind, _, session, key, sr, stamp, _, _ = ev
        version = (key, sr, stamp)
        pending = context.setdefault(session, [])
        if kind == "get":
            pending.append(version)
        else:
            deps[version] = tuple(dict.fromkeys(pending))  # dedupe, keep order
            context[session] = [version]
    return deps


def check_causal(events, num_partitions: int, protocol: str) -> list[Violation]:
    """Empty result iff the history is causally consistent: every get of a
    version happens after all its transitive dependencies became visible
    at their owning partitions in the reading replica."""
    history = _History(events, num_partitions, protocol)
    deps = build_dependencies(history)
    violations: list[Violation] = []

    # worst[(replica, version)] = (bound, witness): the latest index at
    # which any transitive dependency of version became visible in that
    # replica, and the dependency achieving it. bound None means the
    # witness dependency never becomes visible there.
    worst: dict[tuple[int, Version], tuple[int | None, Version | None]] = {}

    def judge(replica: int, dep: Version) -> tuple[int | None, Version]:
        """(visibility bound for dep incl. its own closure, offending dep)."""
        own = history.visibility_index(history.owner_node(replica, dep[0]), dep)
        nested_bound, nested_witness = worst[(replica, dep)]
        if own is None:
            return None, dep
        if nested_bound is None:
            return None, nested_witness
        return (own, dep) if own >= nested_bound else (nested_bound, nested_witness)

    def compute(replica: int, version: Version):
        stack = [(version, False)]
        while stack:
            v, expanded = stack.pop()
            key = (replica, v)
            if key in worst:
                continue
            children = deps.get(v, ())
            if not expanded:
                stack.append((v, True))
                stack.extend((d, False) for d in children if (replica, d) not in worst)
                continue
            bound, witness = 0, None
            for d in children:
                d_bound, d_witness = judge(replica, d)
                if d_bound is None:
                    bound, witness = None, d_witness
                    break
                if d_bound > bound:
                    bound, witness = d_bound, d_witness
            worst[key] = (bound, witness)

    for ev in history.gets:
        index, _, node, session, key, sr, stamp, _, _ = ev
        version = (key, sr, stamp)
        if version not in history.put_index and version not in deps:
            if (node, version) not in history.visible_at:
                violations.append(
                    Violation("unknown-version", version, node, index, detail="read a version never written")
                )
                continue
        replica = NodeId.parse(node).replica
        for dep in deps.get(version, ()):
            compute(replica, dep)
            bound, witness = judge(replica, dep)
            if bound is None or bound > index:
                violations.append(Violation("causal", version, node, index, dep=witness))
    return violations


def check_convergence(states: dict[int, dict[str, tuple]]) -> tuple[bool, dict[str, list]]:
    """Compare winning (key -> version) maps across replicas."""
    diffs: dict[str, list] = {}
    replicas = sorted(states)
    if not replicas:
        return True, {}
    all_keys = set()
    for m in states.values():
        all_keys.update(m)
    for key in sorted(all_keys):
        winners = [(r, states[r].get(key)) for r in replicas]
        if len({w for _, w in winners}) > 1:
            diffs[key] = winners
    return not diffs, diffs


@dataclass
class AuditResult:
    skipped: bool
    violations: list[Violation]


def audit_visibility(events, protocol: str) -> AuditResult:
    """Replay protocol-specific read gates over a history."""
    if protocol == "eventual":
        return AuditResult(skipped=True, violations=[])
    violations: list[Violation] = []
    visible_at: dict[tuple[str, Version], int] = {}
    for ev in events:
        index, kind, node, session, key, sr, stamp, deps, gate = ev
        version = (key, sr, stamp)
        if kind == "visible":
            visible_at.setdefault((node, version), index)
        elif kind == "get":
            replica = NodeId.parse(node).replica
            inserted = visible_at.get((node, version))
            if inserted is None or inserted > index:
                violations.append(
                    Violation("read-before-store", version, node, index, detail="never inserted at this node")
                )
                continue
            if sr != replica and protocol in ("gentlerain", "causalspartan"):
                gate_value = gate if isinstance(gate, int) else None
                if gate_value is None or stamp > gate_value:
                    violations.append(
                        Violation(
                            "gate",
                            version,
                            node,
                            index,
                            detail=f"remote stamp {stamp} above stability gate {gate_value}",
                        )
                    )
    return AuditResult(skipped=False, violations=violations)


def find_stuck(events) -> list[tuple[str, Version]]:
    """Versions applied at a node but never visible there: liveness alarms."""
    applied: dict[tuple[str, Version], int] = {}
    visible: set[tuple[str, Version]] = set()
    for index, kind, node, _, key, sr, stamp, _, _ in events:
        if kind == "applied":
            applied.setdefault((node, (key, sr, stamp)), index)
        elif kind == "visible":
            visible.add((node, (key, sr, stamp)))
    return sorted(k for k in applied if k not in visible)


def extract_states(cluster) -> dict[int, dict[str, tuple]]:
    """Winning version per key per replica of a (drained) simulated cluster.

    Winners are taken straight from the stored chains, ignoring read-time
    stability gates: convergence is about what state the replicas hold
    once traffic stops, and stability catches up as soon as clocks allow.
    """
    states: dict[int, dict[str, tuple]] = {}
    for nid, node in cluster.nodes.items():
        replica = NodeId.parse(nid).replica
        target = states.setdefault(replica, {})
        storage = node.core.storage
        for key in storage.keys():
            newest = storage.newest(key)
            stamp = node.core.protocol.storage_order_key(newest)
            target[key] = (*stamp, newest["value"])
    return states


def save_history(events, path: str | Path, *, protocol: str, num_replicas: int, num_partitions: int):
    """Length-prefixed codec stream: one header then one entry per event."""
    with open(path, "wb") as f:
        header = codec.encode(
            TRACE_HEADER,
            {
                "protocol": protocol,
                "num_replicas": num_replicas,
                "num_partitions": num_partitions,
            },
        )
        f.write(len(header).to_bytes(4, "big") + header)
        for index, kind, node, session, key, sr, stamp, deps, gate in events:
            if isinstance(gate, tuple):
                gate_list = list(gate)
            elif gate is None:
                gate_list = []
            else:
                gate_list = [gate]
            entry = codec.encode(
                HISTORY_EVENT,
                {
                    "index": index,
                    "kind": kind,
                    "node": node,
                    "session": session,
                    "key": key,
                    "sr": sr,
                    "stamp": stamp,
                    "deps": [{"key": k, "sr": s, "stamp": st} for (k, s, st) in deps],
                    "gate": gate_list,
                },
            )
            f.write(len(entry).to_bytes(4, "big") + entry)


def load_history(path: str | Path) -> tuple[dict, list[tuple]]:
    data = Path(path).read_bytes()
    pos = 0
    frames = []
    while pos + 4 <= len(data):
        n = int.from_bytes(data[pos : pos + 4], "big")
        pos += 4
        if pos + n > len(data):
            raise ReplikvError(f"trace file {path} truncated")
        frames.append(data[pos : pos + n])
        pos += n
    if not frames:
        raise ReplikvError(f"trace file {path} empty")
    header = codec.decode(TRACE_HEADER, frames[0])
    events = []
    for raw in frames[1:]:
        e = codec.decode(HISTORY_EVENT, raw)
        kind = e["kind"]
        if kind == "dsv":
            gate = tuple(e["gate"])
        elif e["gate"]:
            gate = e["gate"][0]
        else:
            gate = None
        events.append(
            (
                e["index"],
                kind,
                e["node"],
                e["session"],
                e["key"],
                e["sr"],
                e["stamp"],
                tuple((d["key"], d["sr"], d["stamp"]) for d in e["deps"]),
                gate,
            )
        )
    return header, events
