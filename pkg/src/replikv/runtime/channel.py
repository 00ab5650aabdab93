"""Sequencing and acknowledgment bookkeeping for reliable FIFO channels.

One ``ChannelCore`` per (source, destination) pair on the sender side.
Messages get monotone sequence numbers; everything unacknowledged is
retained and re-sent each resend interval until a cumulative ack covers
it. The receiver side (``ReceiverState``) accepts only the next expected
sequence number, so per-destination delivery order always equals send
order regardless of drops, reordering of retries, or duplicates.
"""

from __future__ import annotations

import threading
from collections import deque

from ..errors import QueueFullError


class ChannelCore:
    def __init__(self, destination: str, capacity: int):
        self.destination = destination
        self.capacity = capacity
        self.next_seq = 1
        self.unacked: deque[tuple[int, bytes]] = deque()
        self._lock = threading.Lock()

    def enqueue(self, payload: bytes) -> tuple[int, bytes]:
        """Assign a sequence number; raises QueueFullError at capacity."""
        with self._lock:
            if len(self.unacked) >= self.capacity:
                raise QueueFullError(self.destination, self.capacity)
            seq = self.next_seq
            self.next_seq += 1
            self.unacked.append((seq, payload))
            return seq, payload

    def on_ack(self, cum_seq: int) -> bool:
        """Drop everything covered by a cumulative ack; True if any dropped."""
        dropped = False
        with self._lock:
            while self.unacked and self.unacked[0][0] <= cum_seq:
                self.unacked.popleft()
                dropped = True
        return dropped

    def pending(self) -> list[tuple[int, bytes]]:
        with self._lock:
            return list(self.unacked)

    def depth(self) -> int:
        return len(self.unacked)


class ReceiverState:
    """Per-source in-order delivery filter on the receiving side."""

    def __init__(self):
        self.expected = 1
        self._lock = threading.Lock()

    def accept(self, seq: int) -> tuple[bool, int]:
        """Returns (deliver?, cumulative ack to send back)."""
        with self._lock:
            if seq == self.expected:
                self.expected += 1
                return True, self.expected - 1
            # duplicate or out-of-order: re-ack what we have, do not deliver
            return False, self.expected - 1
