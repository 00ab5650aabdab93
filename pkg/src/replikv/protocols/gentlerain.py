"""GentleRain-style causal consistency.

Versions carry physical-clock update times. Each partition tracks the
latest timestamp received from every replica in a version vector; a tree
of partitions min-aggregates those vectors into a scalar Global Stable
Time, and a remote version is readable once its timestamp is at or below
the local GST. Causal ordering of writes is enforced by the client-carried
dependency time: a PUT whose dependency time is ahead of the server clock
is delayed until the clock catches up, which is exactly the cost the
hybrid-clock protocol removes.

Visibility uses ``ut <= gst`` (not strict), matching the executable
reference rather than the pseudocode.
"""

from __future__ import annotations

import threading

from ..codec import Schema, bytes_, field, message, sint64, string, uint32
from ..storage import Status
from ..runtime.api import GetResult, PutResult, ReplyAgent
from .base import ReplicatedServer, RoutedSession, reply_schema

RECORD = Schema(
    "GrRecord",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "ut", sint64),
        field(4, "sr", uint32),
    ],
)
GET = Schema("GrGet", [field(1, "key", string), field(2, "gst", sint64)])
PUT = Schema(
    "GrPut",
    [field(1, "key", string), field(2, "value", bytes_), field(3, "dt", sint64)],
)
CLIENT_MESSAGE = Schema(
    "GrClientMessage",
    [field(1, "get_message", message(GET)), field(2, "put_message", message(PUT))],
    oneof=("get_message", "put_message"),
)
GET_REPLY = Schema(
    "GrGetReply",
    [field(1, "value", bytes_), field(2, "ut", sint64), field(3, "gst", sint64)],
)
PUT_REPLY = Schema("GrPutReply", [field(1, "ut", sint64)])
CLIENT_REPLY = reply_schema("GrClientReply", GET_REPLY, PUT_REPLY)

REPLICATE = Schema(
    "GrReplicate",
    [field(1, "dc_id", uint32), field(2, "key", string), field(3, "rec", message(RECORD))],
)
HEARTBEAT = Schema("GrHeartbeat", [field(1, "dc_id", uint32), field(2, "time", sint64)])
VV_MESSAGE = Schema(
    "GrVv", [field(1, "p_id", uint32), field(2, "vv_item", sint64, repeated=True)]
)
GST_MESSAGE = Schema("GrGst", [field(1, "gst", sint64)])
SERVER_MESSAGE = Schema(
    "GrServerMessage",
    [
        field(1, "replicate_message", message(REPLICATE)),
        field(2, "heartbeat_message", message(HEARTBEAT)),
        field(3, "vv_message", message(VV_MESSAGE)),
        field(4, "gst_message", message(GST_MESSAGE)),
    ],
    oneof=("replicate_message", "heartbeat_message", "vv_message", "gst_message"),
)


class GentleRainServer(ReplicatedServer):
    name = "gentlerain"
    record_schema = RECORD
    client_message_schema = CLIENT_MESSAGE
    server_message_schema = SERVER_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, ctx):
        super().__init__(ctx)
        cfg = ctx.config
        self.gst = 0
        self.vv = [0] * self.num_replicas
        self.parent_pid = int(cfg.prop("parent_p_id", "0"))
        self.children_pids = [int(c) for c in cfg.prop_list("children_p_ids")]
        self.children_vvs = {c: [0] * self.num_replicas for c in self.children_pids}
        self.heartbeat_interval = cfg.prop_int("heartbeat_interval", 10)
        self.gst_interval = cfg.prop_int("gst_comutation_interval", 10)
        self.time_of_last_rep_or_heartbeat = 0
        self.put_lock = threading.Lock()
        self.gst_lock = threading.Lock()
        self.vv_lock = threading.Lock()

    def on_start(self):
        self.ctx.schedule_periodic(self.heartbeat_interval, self.heartbeat_round, "heartbeat")
        self.ctx.schedule_periodic(self.gst_interval, self.gst_round, "gst")

    def storage_order_key(self, rec):
        return (rec["ut"], rec["sr"])

    # -- gst ------------------------------------------------------------------

    def update_gst(self, sample: int):
        with self.gst_lock:
            if sample > self.gst:
                self.gst = sample
                self.ctx.history.record("gst", str(self.ctx.node), "", "", 0, self.gst)

    # -- client side of the wire -------------------------------------------------

    def handle_client_message(self, agent: ReplyAgent, msg: dict):
        if msg["get_message"] is not None:
            self._handle_get(agent, msg["get_message"])
        elif msg["put_message"] is not None:
            self._handle_put(agent, msg["put_message"])

    def _handle_get(self, agent, gm):
        self.update_gst(gm["gst"])
        g = self.gst
        out: list[dict] = []
        status = self.ctx.storage.read(
            gm["key"], lambda r: r["sr"] == self.m or r["ut"] <= g, out
        )
        if status is Status.SUCCESS and out:
            rec = out[0]
            self.ctx.history.record(
                "get", str(self.ctx.node), agent.source, gm["key"], rec["sr"], rec["ut"], gate=g
            )
            self.reply(
                agent,
                {"status": True, "get_reply": {"value": rec["value"], "ut": rec["ut"], "gst": g}},
            )
        else:
            self.reply(agent, {"status": False})

    def _handle_put(self, agent, pm):
        sleep_ms = pm["dt"] - self.ctx.clock.now_ms()
        if sleep_ms > 0:
            self.ctx.sleep_then(sleep_ms, lambda: self._finish_put(agent, pm))
        else:
            self._finish_put(agent, pm)

    def _finish_put(self, agent, pm):
        now = self.ctx.clock.now_ms()
        with self.put_lock:
            # Monotone bump keeps replicate timestamps strictly increasing
            # per partition even when the clock tick is coarser than the
            # request rate.
            with self.vv_lock:
                t = max(now, self.vv[self.m] + 1)
                self.vv[self.m] = t
            rec = {"key": pm["key"], "value": pm["value"], "ut": t, "sr": self.m}
            self._send_replicates(pm["key"], rec)
        status = self.ctx.storage.insert(pm["key"], rec)
        if status is not Status.SUCCESS:
            self.reply(agent, {"status": False})
            return
        node = str(self.ctx.node)
        self.ctx.history.record("put", node, agent.source, pm["key"], self.m, t)
        self.ctx.history.record("visible", node, "", pm["key"], self.m, t)
        self.reply(agent, {"status": True, "put_reply": {"ut": t}})

    def _send_replicates(self, key: str, rec: dict):
        sm = {"replicate_message": {"dc_id": self.m, "key": key, "rec": rec}}
        for peer in self.peer_partitions():
            self.send(peer, sm)
        self.time_of_last_rep_or_heartbeat = self.ctx.clock.now_ms()

    # -- server side of the wire ----------------------------------------------------

    def handle_server_message(self, msg: dict):
        if msg["replicate_message"] is not None:
            self._handle_replicate(msg["replicate_message"])
        elif msg["heartbeat_message"] is not None:
            hb = msg["heartbeat_message"]
            self._bump_vv(hb["dc_id"], hb["time"])
        elif msg["vv_message"] is not None:
            vm = msg["vv_message"]
            self.children_vvs[vm["p_id"]] = list(vm["vv_item"])
        elif msg["gst_message"] is not None:
            self.update_gst(msg["gst_message"]["gst"])
            self._send_to_children({"gst_message": {"gst": self.gst}})

    def _handle_replicate(self, rm):
        rec = rm["rec"]
        self.ctx.storage.insert(rm["key"], rec)
        self.ctx.history.record("visible", str(self.ctx.node), "", rm["key"], rec["sr"], rec["ut"])
        self._bump_vv(rm["dc_id"], rec["ut"])

    def _bump_vv(self, replica: int, value: int):
        with self.vv_lock:
            if value > self.vv[replica]:
                self.vv[replica] = value

    def _send_to_children(self, sm: dict):
        for child in self.children_pids:
            self.send(f"{self.m}_{child}", sm)

    # -- periodic tasks ----------------------------------------------------------------

    def gst_round(self):
        min_vv = list(self.vv)
        for child_vv in self.children_vvs.values():
            for i, v in enumerate(child_vv):
                if v < min_vv[i]:
                    min_vv[i] = v
        if self.parent_pid == self.p:
            self.update_gst(min(min_vv))
            self._send_to_children({"gst_message": {"gst": self.gst}})
        else:
            self.send(
                f"{self.m}_{self.parent_pid}",
                {"vv_message": {"p_id": self.p, "vv_item": min_vv}},
            )

    def heartbeat_round(self):
        ct = self.ctx.clock.now_ms()
        # >= rather than >: under a quantized clock the timer can fire on
        # the exact interval boundary, which must still count as idle.
        if ct >= self.time_of_last_rep_or_heartbeat + self.heartbeat_interval:
            self._bump_vv(self.m, ct)
            sm = {"heartbeat_message": {"dc_id": self.m, "time": ct}}
            for peer in self.peer_partitions():
                self.send(peer, sm)
            self.time_of_last_rep_or_heartbeat = ct


class GentleRainSession(RoutedSession):
    name = "gentlerain"
    client_message_schema = CLIENT_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def __init__(self, config):
        super().__init__(config)
        self.dt = 0
        self.gst = 0

    def begin_get(self, key):
        return self.server_for(key), {"get_message": {"key": key, "gst": self.gst}}

    def end_get(self, reply):
        if not reply["status"] or reply["get_reply"] is None:
            return GetResult(found=False)
        gr = reply["get_reply"]
        self.gst = max(self.gst, gr["gst"])
        self.dt = max(self.dt, gr["ut"])
        return GetResult(found=True, value=gr["value"], meta={"ut": gr["ut"], "gst": gr["gst"]})

    def begin_put(self, key, value):
        return self.server_for(key), {
            "put_message": {"key": key, "value": value, "dt": self.dt}
        }

    def end_put(self, reply):
        if not reply["status"] or reply["put_reply"] is None:
            return PutResult(ok=False)
        ut = reply["put_reply"]["ut"]
        self.dt = max(self.dt, ut)
        return PutResult(ok=True, meta={"ut": ut})
