"""COPS-style causal consistency with explicit dependency tracking.

Clients accumulate the versions they read or wrote as the dependencies of
their next write; after a successful write the context collapses to just
that new version (nearest dependency). A replicated write stays pending at
the receiving replica until every dependency is confirmed visible there,
checked locally for self-owned keys and via dependency-check messages to
the sibling partitions that own the others. No garbage collection of
contexts or pending structures is performed.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field as dc_field

from ..codec import Schema, bytes_, field, message, string, uint32, uint64
from ..ids import partition_for_key
from ..storage import Status
from ..runtime.api import GetResult, PutResult, ReplyAgent
from .base import ReplicatedServer, RoutedSession, reply_schema

DEP = Schema(
    "CopsDep",
    [field(1, "key", string), field(2, "lamport", uint64), field(3, "sr", uint32)],
)
RECORD = Schema(
    "CopsRecord",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "lamport", uint64),
        field(4, "sr", uint32),
    ],
)
GET = Schema("CopsGet", [field(1, "key", string)])
PUT_AFTER = Schema(
    "CopsPutAfter",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "deps", message(DEP), repeated=True),
    ],
)
CLIENT_MESSAGE = Schema(
    "CopsClientMessage",
    [field(1, "get_message", message(GET)), field(2, "put_after", message(PUT_AFTER))],
    oneof=("get_message", "put_after"),
)
GET_REPLY = Schema(
    "CopsGetReply",
    [field(1, "value", bytes_), field(2, "lamport", uint64), field(3, "sr", uint32)],
)
PUT_REPLY = Schema("CopsPutReply", [field(1, "lamport", uint64), field(2, "sr", uint32)])
CLIENT_REPLY = reply_schema("CopsClientReply", GET_REPLY, PUT_REPLY)

REPLICATE = Schema(
    "CopsReplicate",
    [field(1, "rec", message(RECORD)), field(2, "deps", message(DEP), repeated=True)],
)
DEP_CHECK = Schema(
    "CopsDepCheck", [field(1, "dep", message(DEP)), field(2, "requester", string)]
)
DEP_ACK = Schema("CopsDepAck", [field(1, "dep", message(DEP))])
SERVER_MESSAGE = Schema(
    "CopsServerMessage",
    [
        field(1, "replicate_message", message(REPLICATE)),
        field(2, "dep_check", message(DEP_CHECK)),
        field(3, "dep_ack", message(DEP_ACK)),
    ],
    oneof=("replicate_message", "dep_check", "dep_ack"),
)


@dataclass
class PendingWrite:
    key: str
    rec: dict
    deps: list[dict]
    remaining: int = 0
    done: bool = False


class CopsServer(ReplicatedServer):
    name = "cops"
    record_schema = RECORD
    client_message_schema = CLIENT_MESSAGE
    server_message_schema = SERVER_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, ctx):
        super().__init__(ctx)
        self.lamport = 0
        self.lock = threading.Lock()
        # visibility waiters per key: (stamp, callback) fired once any
        # version with order key >= stamp is inserted
        self.visibility_waiters: dict[str, list[tuple[tuple, callable]]] = {}
        # pending writes waiting on a remote dep ack, keyed by dep identity
        self.ack_waiters: dict[tuple[str, int, int], list[PendingWrite]] = {}
        self.pending_count = 0

    def storage_order_key(self, rec):
        return (rec["lamport"], rec["sr"])

    # -- visibility -------------------------------------------------------------

    def _stamp_visible(self, key: str, stamp: tuple) -> bool:
        newest = self.ctx.storage.newest(key)
        return newest is not None and self.storage_order_key(newest) >= stamp

    def _make_visible(self, key: str, rec: dict):
        self.ctx.storage.insert(key, rec)
        self.ctx.history.record(
            "visible", str(self.ctx.node), "", key, rec["sr"], rec["lamport"]
        )
        stamp = self.storage_order_key(rec)
        waiters = self.visibility_waiters.get(key)
        if not waiters:
            return
        still = []
        ready = []
        for waited_stamp, callback in waiters:
            (ready if waited_stamp <= stamp else still).append((waited_stamp, callback))
        if still:
            self.visibility_waiters[key] = still
        else:
            self.visibility_waiters.pop(key, None)
        for _, callback in ready:
            callback()

    def _when_visible(self, key: str, stamp: tuple, callback):
        if self._stamp_visible(key, stamp):
            callback()
        else:
            self.visibility_waiters.setdefault(key, []).append((stamp, callback))

    # -- client messages ------------------------------------------------------------

    def handle_client_message(self, agent: ReplyAgent, msg: dict):
        if msg["get_message"] is not None:
            self._handle_get(agent, msg["get_message"])
        elif msg["put_after"] is not None:
            self._handle_put_after(agent, msg["put_after"])

    def _handle_get(self, agent, gm):
        out: list[dict] = []
        status = self.ctx.storage.read(gm["key"], lambda r: True, out)
        if status is Status.SUCCESS and out:
            rec = out[0]
            self.ctx.history.record(
                "get", str(self.ctx.node), agent.source, gm["key"], rec["sr"], rec["lamport"]
            )
            self.reply(
                agent,
                {
                    "status": True,
                    "get_reply": {
                        "value": rec["value"],
                        "lamport": rec["lamport"],
                        "sr": rec["sr"],
                    },
                },
            )
        else:
            self.reply(agent, {"status": False})

    def _handle_put_after(self, agent, pm):
        deps = pm["deps"]
        with self.lock:
            observed = max((d["lamport"] for d in deps), default=0)
            self.lamport = max(self.lamport, observed) + 1
            rec = {
                "key": pm["key"],
                "value": pm["value"],
                "lamport": self.lamport,
                "sr": self.m,
            }
            # Local writes are visible immediately: the client's session
            # order already guarantees its dependencies are visible here.
            self._make_visible(pm["key"], rec)
        self.ctx.history.record(
            "put",
            str(self.ctx.node),
            agent.source,
            pm["key"],
            self.m,
            rec["lamport"],
            deps=tuple((d["key"], d["sr"], d["lamport"]) for d in deps),
        )
        sm = {"replicate_message": {"rec": rec, "deps": deps}}
        for peer in self.peer_partitions():
            self.send(peer, sm)
        self.reply(
            agent, {"status": True, "put_reply": {"lamport": rec["lamport"], "sr": self.m}}
        )

    # -- server messages -----------------------------------------------------------

    def handle_server_message(self, msg: dict):
        if msg["replicate_message"] is not None:
            self._handle_replicate(msg["replicate_message"])
        elif msg["dep_check"] is not None:
            self._handle_dep_check(msg["dep_check"])
        elif msg["dep_ack"] is not None:
            self._handle_dep_ack(msg["dep_ack"])

    def _handle_replicate(self, rm):
        rec = rm["rec"]
        deps = rm["deps"]
        with self.lock:
            self.lamport = max(self.lamport, rec["lamport"])
            self.ctx.history.record(
                "applied", str(self.ctx.node), "", rec["key"], rec["sr"], rec["lamport"]
            )
            pending = PendingWrite(key=rec["key"], rec=rec, deps=deps)
            checks = []
            for dep in deps:
                owner = partition_for_key(dep["key"], self.num_partitions)
                stamp = (dep["lamport"], dep["sr"])
                if owner == self.p:
                    if not self._stamp_visible(dep["key"], stamp):
                        pending.remaining += 1
                        self._when_visible(
                            dep["key"], stamp, lambda pw=pending: self._dep_satisfied(pw)
                        )
                else:
                    pending.remaining += 1
                    dep_id = (dep["key"], dep["lamport"], dep["sr"])
                    self.ack_waiters.setdefault(dep_id, []).append(pending)
                    checks.append((f"{self.m}_{owner}", dep))
            if pending.remaining == 0:
                self._make_visible(rec["key"], rec)
            else:
                self.pending_count += 1
        for dest, dep in checks:
            self.send(dest, {"dep_check": {"dep": dep, "requester": str(self.ctx.node)}})

    def _dep_satisfied(self, pending: PendingWrite):
        pending.remaining -= 1
        if pending.remaining == 0 and not pending.done:
            pending.done = True
            self.pending_count -= 1
            self._make_visible(pending.key, pending.rec)

    def _handle_dep_check(self, dc):
        dep = dc["dep"]
        requester = dc["requester"]
        stamp = (dep["lamport"], dep["sr"])
        with self.lock:
            self._when_visible(
                dep["key"], stamp, lambda: self.send(requester, {"dep_ack": {"dep": dep}})
            )

    def _handle_dep_ack(self, da):
        dep = da["dep"]
        dep_id = (dep["key"], dep["lamport"], dep["sr"])
        with self.lock:
            for pending in self.ack_waiters.pop(dep_id, ()):
                self._dep_satisfied(pending)


class CopsSession(RoutedSession):
    name = "cops"
    client_message_schema = CLIENT_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, config):
        super().__init__(config)
        self.deps: dict[str, tuple[int, int]] = {}  # key -> (lamport, sr)
        self.puts_sent = 0
        self.deps_sent = 0

    def context_deps(self) -> list[dict]:
        return [
            {"key": k, "lamport": lam, "sr": sr} for k, (lam, sr) in sorted(self.deps.items())
        ]

    def begin_get(self, key):
        self._pending_get_key = key
        return self.server_for(key), {"get_message": {"key": key}}

    def end_get(self, reply):
        if not reply["status"] or reply["get_reply"] is None:
            return GetResult(found=False)  # failed reads add no dependency
        gr = reply["get_reply"]
        key = self._pending_get_key
        stamp = (gr["lamport"], gr["sr"])
        if stamp > self.deps.get(key, (0, 0)):
            self.deps[key] = stamp
        return GetResult(
            found=True, value=gr["value"], meta={"lamport": gr["lamport"], "sr": gr["sr"]}
        )

    def begin_put(self, key, value):
        self._pending_put_key = key
        deps = self.context_deps()
        self.puts_sent += 1
        self.deps_sent += len(deps)
        return self.server_for(key), {
            "put_after": {"key": key, "value": value, "deps": deps}
        }

    def end_put(self, reply):
        if not reply["status"] or reply["put_reply"] is None:
            return PutResult(ok=False)
        pr = reply["put_reply"]
        self.deps = {self._pending_put_key: (pr["lamport"], pr["sr"])}
        return PutResult(ok=True, meta={"lamport": pr["lamport"], "sr": pr["sr"]})
