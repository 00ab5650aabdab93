"""Pluggable storage with a default embedded engine.

The driver contract is intentionally minimal (``put``/``get``); protocols
use the richer embedded engine: comparator-ordered version chains,
predicate reads, single- or multi-version mode, optional append-only log
persistence, and a replication-mode flag. In ``server_centric`` mode the
engine never touches the network; in ``storage_centric`` mode it forwards
local writes to the next two nodes on a configured ring and the protocol
layer must not send its own replicate messages.
"""

from __future__ import annotations

import threading
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

from . import codec
from .codec import Schema, bytes_, field, string
from .errors import StorageError

LOG_ENTRY = Schema("LogEntry", [field(1, "key", string), field(2, "record", bytes_)])


class Status(Enum):
    SUCCESS = 0
    NOT_FOUND = 1
    FAILURE = 2


class StorageDriver:
    """Minimal driver interface: byte-valued put/get."""

    def put(self, key: str, value: bytes) -> Status:
        raise NotImplementedError

    def get(self, key: str) -> tuple[Status, bytes | None]:
        raise NotImplementedError


class MemoryStorage:
    """Embedded engine: per-key version chains ordered newest-first.

    ``order_key`` maps a record to a sortable tuple; larger means newer.
    Records whose order keys compare equal are treated as the same version
    and replaced in place, which makes applying a replicated record
    idempotent. In single-version mode only the winning record is kept.
    """

    def __init__(
        self,
        order_key: Callable[[dict], tuple],
        record_schema: Schema,
        *,
        versioning: str = "multi",
        replication: str = "server_centric",
        flush_on_insert: bool = False,
        persist_path: str | Path | None = None,
        ring: Iterable[str] = (),
        node_id: str | None = None,
        replicate_fn: Callable[[str, bytes], None] | None = None,
    ):
        self.order_key = order_key
        self.record_schema = record_schema
        self.versioning = versioning
        self.replication = replication
        self.flush_on_insert = flush_on_insert
        self._chains: dict[str, list[dict]] = {}
        self._lock = threading.RLock()
        self._closed = False
        self._log = None
        self._persist_path = Path(persist_path) if persist_path else None
        self._ring = list(ring)
        self._node_id = node_id
        self._replicate_fn = replicate_fn
        if self._persist_path:
            self._replay_log()
            self._log = open(self._persist_path, "ab")

    # -- lifecycle ---------------------------------------------------------

    def close(self):
        with self._lock:
            self._closed = True
            if self._log:
                self._log.close()
                self._log = None

    def _check_open(self):
        if self._closed:
            raise StorageError("storage engine is closed")

    # -- core operations ----------------------------------------------------

    def insert(self, key: str, rec: dict) -> Status:
        """Place ``rec`` in the chain for ``key`` per the comparator."""
        try:
            self._check_open()
            with self._lock:
                self._apply(key, rec)
                if self._log:
                    self._append_log(key, rec)
            if self.replication == "storage_centric":
                self._forward(key, rec)
            return Status.SUCCESS
        except StorageError:
            return Status.FAILURE
        except OSError:
            return Status.FAILURE

    def read(self, key: str, pred: Callable[[dict], bool], out: list[dict]) -> Status:
        """Append matching versions to ``out`` in chain (newest-first) order."""
        try:
            self._check_open()
        except StorageError:
            return Status.FAILURE
        with self._lock:
            chain = self._chains.get(key)
            if not chain:
                return Status.NOT_FOUND
            out.extend(r for r in chain if pred(r))
        return Status.SUCCESS

    def apply_remote(self, key: str, record_bytes: bytes):
        """Entry point for ring-replicated writes; never re-forwards."""
        rec = self.record_schema.decode(record_bytes)
        with self._lock:
            self._check_open()
            self._apply(key, rec)
            if self._log:
                self._append_log(key, rec)

    # -- helpers -------------------------------------------------------------

    def _apply(self, key: str, rec: dict):
        new_key = self.order_key(rec)
        chain = self._chains.get(key)
        if chain is None:
            self._chains[key] = [rec]
            return
        if self.versioning == "single":
            if new_key >= self.order_key(chain[0]):
                chain[0] = rec
            return
        # multi-version: descending by order key, replace equal versions
        for i, existing in enumerate(chain):
            ek = self.order_key(existing)
            if new_key == ek:
                chain[i] = rec
                return
            if new_key > ek:
                chain.insert(i, rec)
                return
        chain.append(rec)

    def _forward(self, key: str, rec: dict):
        if not self._replicate_fn or not self._ring:
            return
        data = self.record_schema.encode(rec)
        idx = self._ring.index(self._node_id) if self._node_id in self._ring else -1
        if idx < 0:
            return
        n = len(self._ring)
        for step in (1, 2):
            peer = self._ring[(idx + step) % n]
            if peer != self._node_id:
                self._replicate_fn_peer(peer, key, data)

    def _replicate_fn_peer(self, peer: str, key: str, data: bytes):
        self._replicate_fn(peer, codec.encode(LOG_ENTRY, {"key": key, "record": data}))

    def _append_log(self, key: str, rec: dict):
        entry = codec.encode(
            LOG_ENTRY, {"key": key, "record": self.record_schema.encode(rec)}
        )
        self._log.write(len(entry).to_bytes(4, "big") + entry)
        if self.flush_on_insert:
            self._log.flush()

    def _replay_log(self):
        if not self._persist_path.exists():
            return
        data = self._persist_path.read_bytes()
        pos = 0
        while pos + 4 <= len(data):
            n = int.from_bytes(data[pos : pos + 4], "big")
            pos += 4
            if pos + n > len(data):
                break  # torn tail entry, ignore
            entry = codec.decode(LOG_ENTRY, data[pos : pos + n])
            pos += n
            self._apply(entry["key"], self.record_schema.decode(entry["record"]))

    # -- inspection ----------------------------------------------------------

    def keys(self) -> list[str]:
        with self._lock:
            return list(self._chains.keys())

    def chain(self, key: str) -> list[dict]:
        with self._lock:
            return list(self._chains.get(key, ()))

    def newest(self, key: str) -> dict | None:
        with self._lock:
            chain = self._chains.get(key)
            return chain[0] if chain else None
