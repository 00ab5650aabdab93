"""CausalSpartan-style causal consistency on hybrid logical clocks.

Write timestamps come from an HLC, so a PUT whose dependencies are ahead
of the local physical clock completes immediately (the logical counter
absorbs the difference) instead of sleeping like the physical-clock
protocol. Clients carry a per-replica dependency vector; partitions
aggregate per-replica version vectors into a stable vector (DSV) that
gates remote visibility per source replica, which lets one slow replica
delay only its own updates rather than everyone's.

An HLC timestamp packs a 48-bit millisecond physical part and a 16-bit
logical counter into one 64-bit integer, so packed values compare exactly
like (l, c) pairs.
"""

from __future__ import annotations

import threading

from ..codec import Schema, bytes_, field, fixed64, message, string, uint32
from ..errors import ReplikvError
from ..storage import Status
from ..runtime.api import GetResult, PutResult, ReplyAgent
from .base import ReplicatedServer, RoutedSession, reply_schema

COUNTER_BITS = 16
COUNTER_MASK = (1 << COUNTER_BITS) - 1
MAX_L = (1 << 48) - 1


def hlc_pack(l: int, c: int) -> int:
    return (l << COUNTER_BITS) | c


def hlc_unpack(ts: int) -> tuple[int, int]:
    return ts >> COUNTER_BITS, ts & COUNTER_MASK


def hlc_tick(ts: tuple[int, int], now_ms: int) -> tuple[int, int]:
    """Advance for a local event: physical part tracks the wall clock, the
    counter breaks ties when the clock has not moved."""
    l, c = ts
    if now_ms > l:
        return _checked(now_ms, 0)
    return _checked(l, c + 1)


def hlc_merge(ts: tuple[int, int], remote: tuple[int, int], now_ms: int) -> tuple[int, int]:
    """Advance for a receive event; result exceeds both inputs."""
    l, c = ts
    rl, rc = remote
    nl = max(l, rl, now_ms)
    if nl == l and nl == rl:
        nc = max(c, rc) + 1
    elif nl == l:
        nc = c + 1
    elif nl == rl:
        nc = rc + 1
    else:
        nc = 0
    return _checked(nl, nc)


def _checked(l: int, c: int) -> tuple[int, int]:
    if c > COUNTER_MASK:
        raise ReplikvError(f"hlc counter overflow at l={l} (clock skew pathologically large)")
    if l > MAX_L:
        raise ReplikvError(f"hlc physical part out of range: {l}")
    return (l, c)


RECORD = Schema(
    "CsRecord",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "ut", fixed64),
        field(4, "sr", uint32),
    ],
)
DS_ENTRY = Schema("CsDsEntry", [field(1, "replica", uint32), field(2, "hlc", fixed64)])
GET = Schema(
    "CsGet", [field(1, "key", string), field(2, "ds", message(DS_ENTRY), repeated=True)]
)
PUT = Schema(
    "CsPut",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "ds", message(DS_ENTRY), repeated=True),
    ],
)
CLIENT_MESSAGE = Schema(
    "CsClientMessage",
    [field(1, "get_message", message(GET)), field(2, "put_message", message(PUT))],
    oneof=("get_message", "put_message"),
)
GET_REPLY = Schema(
    "CsGetReply",
    [
        field(1, "value", bytes_),
        field(2, "ut", fixed64),
        field(3, "sr", uint32),
        field(4, "dsv", fixed64, repeated=True),
    ],
)
PUT_REPLY = Schema("CsPutReply", [field(1, "ut", fixed64)])
CLIENT_REPLY = reply_schema("CsClientReply", GET_REPLY, PUT_REPLY)

REPLICATE = Schema("CsReplicate", [field(1, "rec", message(RECORD))])
HEARTBEAT = Schema("CsHeartbeat", [field(1, "dc_id", uint32), field(2, "hlc", fixed64)])
VV_MESSAGE = Schema(
    "CsVv", [field(1, "p_id", uint32), field(2, "vv_item", fixed64, repeated=True)]
)
DSV_MESSAGE = Schema("CsDsv", [field(1, "dsv_item", fixed64, repeated=True)])
SERVER_MESSAGE = Schema(
    "CsServerMessage",
    [
        field(1, "replicate_message", message(REPLICATE)),
        field(2, "heartbeat_message", message(HEARTBEAT)),
        field(3, "vv_message", message(VV_MESSAGE)),
        field(4, "dsv_message", message(DSV_MESSAGE)),
    ],
    oneof=("replicate_message", "heartbeat_message", "vv_message", "dsv_message"),
)


class CausalSpartanServer(ReplicatedServer):
    name = "causalspartan"
    record_schema = RECORD
    client_message_schema = CLIENT_MESSAGE
    server_message_schema = SERVER_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, ctx):
        super().__init__(ctx)
        cfg = ctx.config
        self.hlc = (0, 0)
        self.vv = [0] * self.num_replicas
        self.dsv = [0] * self.num_replicas
        self.parent_pid = int(cfg.prop("parent_p_id", "0"))
        self.children_pids = [int(c) for c in cfg.prop_list("children_p_ids")]
        self.children_vvs = {c: [0] * self.num_replicas for c in self.children_pids}
        self.heartbeat_interval = cfg.prop_int("heartbeat_interval", 10)
        self.stable_interval = cfg.prop_int("gst_comutation_interval", 10)
        self.time_of_last_rep_or_heartbeat = 0
        self.put_lock = threading.Lock()
        self.state_lock = threading.Lock()

    def on_start(self):
        self.ctx.schedule_periodic(self.heartbeat_interval, self.heartbeat_round, "heartbeat")
        self.ctx.schedule_periodic(self.stable_interval, self.stable_round, "dsv")

    def storage_order_key(self, rec):
        return (rec["ut"], rec["sr"])

    # -- state updates -----------------------------------------------------------

    def _bump_vv(self, replica: int, packed: int):
        with self.state_lock:
            if packed > self.vv[replica]:
                self.vv[replica] = packed

    def _merge_dsv(self, candidate: list[int] | dict[int, int]):
        """Elementwise max into the stable vector; records a history event
        when anything advanced."""
        with self.state_lock:
            changed = False
            items = candidate.items() if isinstance(candidate, dict) else enumerate(candidate)
            for i, v in items:
                if i < len(self.dsv) and v > self.dsv[i]:
                    self.dsv[i] = v
                    changed = True
            snapshot = tuple(self.dsv)
        if changed:
            self.ctx.history.record("dsv", str(self.ctx.node), "", "", 0, 0, gate=snapshot)
        return changed

    # -- client messages ------------------------------------------------------------

    def handle_client_message(self, agent: ReplyAgent, msg: dict):
        if msg["get_message"] is not None:
            self._handle_get(agent, msg["get_message"])
        elif msg["put_message"] is not None:
            self._handle_put(agent, msg["put_message"])

    def _handle_get(self, agent, gm):
        # Client-observed dependencies from sibling partitions are already
        # stable replica-wide, so folding them in keeps DSV <= stability
        # while making everything the client saw readable here.
        remote_entries = {
            e["replica"]: e["hlc"] for e in gm["ds"] if e["replica"] != self.m
        }
        if remote_entries:
            self._merge_dsv(remote_entries)
        with self.state_lock:
            dsv = list(self.dsv)
        out: list[dict] = []
        status = self.ctx.storage.read(
            gm["key"], lambda r: r["sr"] == self.m or r["ut"] <= dsv[r["sr"]], out
        )
        if status is Status.SUCCESS and out:
            rec = out[0]
            self.ctx.history.record(
                "get",
                str(self.ctx.node),
                agent.source,
                gm["key"],
                rec["sr"],
                rec["ut"],
                gate=dsv[rec["sr"]],
            )
            self.reply(
                agent,
                {
                    "status": True,
                    "get_reply": {
                        "value": rec["value"],
                        "ut": rec["ut"],
                        "sr": rec["sr"],
                        "dsv": dsv,
                    },
                },
            )
        else:
            self.reply(agent, {"status": False})

    def _handle_put(self, agent, pm):
        now = self.ctx.clock.now_ms()
        ds_max = max((e["hlc"] for e in pm["ds"]), default=0)
        with self.put_lock:
            self.hlc = hlc_merge(self.hlc, hlc_unpack(ds_max), now)
            ut = hlc_pack(*self.hlc)
            self._bump_vv(self.m, ut)
            rec = {"key": pm["key"], "value": pm["value"], "ut": ut, "sr": self.m}
            sm = {"replicate_message": {"rec": rec}}
            for peer in self.peer_partitions():
                self.send(peer, sm)
            self.time_of_last_rep_or_heartbeat = now
        status = self.ctx.storage.insert(pm["key"], rec)
        if status is not Status.SUCCESS:
            self.reply(agent, {"status": False})
            return
        node = str(self.ctx.node)
        self.ctx.history.record("put", node, agent.source, pm["key"], self.m, ut)
        self.ctx.history.record("visible", node, "", pm["key"], self.m, ut)
        self.reply(agent, {"status": True, "put_reply": {"ut": ut}})

    # -- server messages -------------------------------------------------------------

    def handle_server_message(self, msg: dict):
        if msg["replicate_message"] is not None:
            rec = msg["replicate_message"]["rec"]
            self.ctx.storage.insert(rec["key"], rec)
            self.ctx.history.record(
                "visible", str(self.ctx.node), "", rec["key"], rec["sr"], rec["ut"]
            )
            with self.put_lock:
                self.hlc = hlc_merge(self.hlc, hlc_unpack(rec["ut"]), self.ctx.clock.now_ms())
            self._bump_vv(rec["sr"], rec["ut"])
        elif msg["heartbeat_message"] is not None:
            hb = msg["heartbeat_message"]
            self._bump_vv(hb["dc_id"], hb["hlc"])
        elif msg["vv_message"] is not None:
            vm = msg["vv_message"]
            self.children_vvs[vm["p_id"]] = list(vm["vv_item"])
        elif msg["dsv_message"] is not None:
            self._merge_dsv(list(msg["dsv_message"]["dsv_item"]))
            with self.state_lock:
                snapshot = list(self.dsv)
            for child in self.children_pids:
                self.send(f"{self.m}_{child}", {"dsv_message": {"dsv_item": snapshot}})

    # -- periodic tasks ---------------------------------------------------------------

    def stable_round(self):
        with self.state_lock:
            min_vv = list(self.vv)
        for child_vv in self.children_vvs.values():
            for i, v in enumerate(child_vv):
                if v < min_vv[i]:
                    min_vv[i] = v
        if self.parent_pid == self.p:
            self._merge_dsv(min_vv)
            with self.state_lock:
                snapshot = list(self.dsv)
            for child in self.children_pids:
                self.send(f"{self.m}_{child}", {"dsv_message": {"dsv_item": snapshot}})
        else:
            self.send(
                f"{self.m}_{self.parent_pid}",
                {"vv_message": {"p_id": self.p, "vv_item": min_vv}},
            )

    def heartbeat_round(self):
        ct = self.ctx.clock.now_ms()
        if ct >= self.time_of_last_rep_or_heartbeat + self.heartbeat_interval:
            with self.put_lock:
                self.hlc = hlc_tick(self.hlc, ct)
                packed = hlc_pack(*self.hlc)
            self._bump_vv(self.m, packed)
            sm = {"heartbeat_message": {"dc_id": self.m, "hlc": packed}}
            for peer in self.peer_partitions():
                self.send(peer, sm)
            self.time_of_last_rep_or_heartbeat = ct


class CausalSpartanSession(RoutedSession):
    name = "causalspartan"
    client_message_schema = CLIENT_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, config):
        super().__init__(config)
        self.ds: dict[int, int] = {}  # replica -> packed hlc

    def _ds_list(self) -> list[dict]:
        return [{"replica": r, "hlc": h} for r, h in sorted(self.ds.items())]

    def _merge_ds(self, replica: int, packed: int):
        if packed > self.ds.get(replica, 0):
            self.ds[replica] = packed

    def begin_get(self, key):
        return self.server_for(key), {"get_message": {"key": key, "ds": self._ds_list()}}

    def end_get(self, reply):
        if not reply["status"] or reply["get_reply"] is None:
            return GetResult(found=False)
        gr = reply["get_reply"]
        self._merge_ds(gr["sr"], gr["ut"])
        for i, v in enumerate(gr["dsv"]):
            self._merge_ds(i, v)
        return GetResult(
            found=True,
            value=gr["value"],
            meta={"ut": gr["ut"], "sr": gr["sr"], "dsv": list(gr["dsv"])},
        )

    def begin_put(self, key, value):
        return self.server_for(key), {
            "put_message": {"key": key, "value": value, "ds": self._ds_list()}
        }

    def end_put(self, reply):
        if not reply["status"] or reply["put_reply"] is None:
            return PutResult(ok=False)
        ut = reply["put_reply"]["ut"]
        self._merge_ds(self.config.local_replica, ut)
        return PutResult(ok=True, meta={"ut": ut})
