"""Eventual consistency: apply local writes immediately, replicate
asynchronously, converge by last-writer-wins.

Versions of a key are totally ordered by (wall-clock timestamp, source
replica id); every replica applies replicated records through the same
rule, so applying any set of records in any order or multiplicity reaches
the same winner. This is the metadata-minimal baseline the other
protocols are compared against.
"""

from __future__ import annotations

from ..codec import Schema, bytes_, field, message, sint64, string, uint32
from ..storage import Status
from ..runtime.api import GetResult, PutResult, ReplyAgent
from .base import ReplicatedServer, RoutedSession, reply_schema

RECORD = Schema(
    "EcRecord",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "ts", sint64),
        field(4, "sr", uint32),
    ],
)
GET = Schema("EcGet", [field(1, "key", string)])
PUT = Schema("EcPut", [field(1, "key", string), field(2, "value", bytes_)])
CLIENT_MESSAGE = Schema(
    "EcClientMessage",
    [field(1, "get_message", message(GET)), field(2, "put_message", message(PUT))],
    oneof=("get_message", "put_message"),
)
REPLICATE = Schema("EcReplicate", [field(1, "rec", message(RECORD))])
SERVER_MESSAGE = Schema(
    "EcServerMessage",
    [field(1, "replicate_message", message(REPLICATE))],
    oneof=("replicate_message",),
)
GET_REPLY = Schema(
    "EcGetReply",
    [field(1, "value", bytes_), field(2, "ts", sint64), field(3, "sr", uint32)],
)
PUT_REPLY = Schema("EcPutReply", [field(1, "ts", sint64)])
CLIENT_REPLY = reply_schema("EcClientReply", GET_REPLY, PUT_REPLY)


class EventualServer(ReplicatedServer):
    name = "eventual"
    record_schema = RECORD
    client_message_schema = CLIENT_MESSAGE
    server_message_schema = SERVER_MESSAGE
    client_reply_schema = CLIENT_REPLY
    supports_storage_centric = True

    def storage_order_key(self, rec):
        return (rec["ts"], rec["sr"])

    def handle_client_message(self, agent: ReplyAgent, msg: dict):
        if msg["get_message"] is not None:
            self._handle_get(agent, msg["get_message"])
        elif msg["put_message"] is not None:
            self._handle_put(agent, msg["put_message"])

    def _handle_get(self, agent, gm):
        out: list[dict] = []
        status = self.ctx.storage.read(gm["key"], lambda r: True, out)
        if status is Status.SUCCESS and out:
            rec = out[0]
            self.ctx.history.record(
                "get", str(self.ctx.node), agent.source, gm["key"], rec["sr"], rec["ts"]
            )
            self.reply(
                agent,
                {
                    "status": True,
                    "get_reply": {"value": rec["value"], "ts": rec["ts"], "sr": rec["sr"]},
                },
            )
        else:
            self.reply(agent, {"status": False})

    def _handle_put(self, agent, pm):
        rec = {
            "key": pm["key"],
            "value": pm["value"],
            "ts": self.ctx.clock.now_ms(),
            "sr": self.m,
        }
        status = self.ctx.storage.insert(pm["key"], rec)
        if status is not Status.SUCCESS:
            self.reply(agent, {"status": False})
            return
        node = str(self.ctx.node)
        self.ctx.history.record("put", node, agent.source, pm["key"], rec["sr"], rec["ts"])
        self.ctx.history.record("visible", node, "", pm["key"], rec["sr"], rec["ts"])
        if self.server_centric():
            replicate = {"replicate_message": {"rec": rec}}
            for peer in self.peer_partitions():
                self.send(peer, replicate)
        self.reply(agent, {"status": True, "put_reply": {"ts": rec["ts"]}})

    def handle_server_message(self, msg: dict):
        rm = msg["replicate_message"]
        if rm is None:
            return
        rec = rm["rec"]
        self.ctx.storage.insert(rec["key"], rec)
        self.ctx.history.record("visible", str(self.ctx.node), "", rec["key"], rec["sr"], rec["ts"])


class EventualSession(RoutedSession):
    name = "eventual"
    client_message_schema = CLIENT_MESSAGE
    client_reply_schema = CLIENT_REPLY

    def begin_get(self, key):
        return self.server_for(key), {"get_message": {"key": key}}

    def end_get(self, reply):
        if not reply["status"] or reply["get_reply"] is None:
            return GetResult(found=False)
        gr = reply["get_reply"]
        return GetResult(found=True, value=gr["value"], meta={"ts": gr["ts"], "sr": gr["sr"]})

    def begin_put(self, key, value):
        return self.server_for(key), {"put_message": {"key": key, "value": value}}

    def end_put(self, reply):
        if not reply["status"] or reply["put_reply"] is None:
            return PutResult(ok=False)
        return PutResult(ok=True, meta={"ts": reply["put_reply"]["ts"]})
