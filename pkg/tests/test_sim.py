"""Deterministic simulator: channels, scheduling, traces, client facade."""

import pytest

from replikv.errors import (
    DuplicateNodeError,
    QueueFullError,
    ReplyTimeoutError,
    UnknownDestinationError,
)
from replikv.config import make_cluster_configs
from replikv.protocols import get_protocol
from replikv.runtime import SimCluster, SimParams, build_sim_cluster, sim_client


def small_cluster(protocol="eventual", replicas=2, partitions=3, seed=1, **kw):
    return build_sim_cluster(protocol, replicas, partitions, SimParams(seed=seed), **kw)


class TestClusterConstruction:
    def test_two_by_three_runs_six_servers(self):
        cluster = small_cluster()
        assert len(cluster.nodes) == 6
        assert sorted(cluster.nodes) == ["0_0", "0_1", "0_2", "1_0", "1_1", "1_2"]
        # every declared peer link has an outbound channel ready
        for node in cluster.nodes.values():
            assert set(node.channels) == set(node.config.peers)

    def test_single_node_no_channels(self):
        cluster = small_cluster(replicas=1, partitions=1)
        (node,) = cluster.nodes.values()
        assert node.channels == {}

    def test_duplicate_node_rejected(self):
        configs = make_cluster_configs("eventual", 1, 2)
        spec = get_protocol("eventual")
        dup = {k: v for k, v in configs.items()}
        dup["0_1"].node = dup["0_0"].node  # forge a collision
        with pytest.raises(DuplicateNodeError):
            SimCluster({"0_0": dup["0_0"], "0_00": dup["0_1"]}, spec.server_cls)


class TestDeterminism:
    def run_once(self, seed):
        cluster = small_cluster(seed=seed)
        client = sim_client(cluster, "c0", replica=0)
        for i in range(20):
            client.put(f"k{i % 5}", f"v{i}".encode())
            client.get(f"k{(i * 3) % 5}")
        trace = cluster.run_until_quiescent()
        return trace

    def test_same_seed_identical_traces(self):
        t1 = self.run_once(42)
        t2 = self.run_once(42)
        assert t1.to_bytes() == t2.to_bytes()
        assert len(t1) > 0

    def test_different_seed_differs(self):
        t1 = self.run_once(1)
        t2 = self.run_once(2)
        assert t1.to_bytes() != t2.to_bytes()

    def test_idle_cluster_empty_trace(self):
        cluster = small_cluster()
        trace = cluster.run_until_quiescent()
        assert len(trace) == 0 and trace.complete

    def test_max_steps_flags_partial_trace(self):
        cluster = small_cluster()
        client = sim_client(cluster, "c0", replica=0)
        for i in range(10):
            client.put(f"k{i}", b"v")
        trace = cluster.run_until_quiescent(max_steps=3)
        assert not trace.complete


class TestReliableFifo:
    def test_messages_survive_link_down_in_order(self):
        cluster = small_cluster(seed=7)
        node = cluster.nodes["0_0"]
        # link down while both sends happen; retry recovers them in order
        cluster.add_fault("0_0", "1_0", 0, 100)
        node.core.send_to_server("1_0", b"\x01")
        node.core.send_to_server("1_0", b"\x02")
        cluster.run_until_quiescent()
        delivered = [e for e in cluster.trace if e[0] == "deliver" and e[3] == "1_0"]
        assert [e[4] for e in delivered] == [1, 2]  # seq order preserved

    def test_unknown_destination_raises(self):
        cluster = small_cluster()
        with pytest.raises(UnknownDestinationError):
            cluster.nodes["0_0"].core.send_to_server("9_9", b"x")

    def test_queue_full_above_capacity(self):
        cluster = small_cluster(queue_capacity=1)
        cluster.add_fault("0_0", "1_0", 0, 10_000, both_ways=True)
        node = cluster.nodes["0_0"]
        node.core.send_to_server("1_0", b"\x01")
        with pytest.raises(QueueFullError):
            node.core.send_to_server("1_0", b"\x02")


class TestClientFacade:
    def test_put_then_get(self):
        cluster = small_cluster()
        client = sim_client(cluster, "c0", replica=0)
        assert client.put("alpha", b"one").ok
        result = client.get("alpha")
        assert result.found and result.value == b"one"

    def test_missing_key_not_found(self):
        cluster = small_cluster()
        client = sim_client(cluster, "c0", replica=0)
        assert not client.get("nope").found

    def test_read_with_no_outstanding_request_times_out(self):
        cluster = small_cluster()
        client = sim_client(cluster, "c0", replica=0, timeout_ms=50)
        with pytest.raises(ReplyTimeoutError):
            client.transport.read("0_0")

    def test_send_to_unlisted_server_raises(self):
        cluster = small_cluster()
        client = sim_client(cluster, "c0", replica=0)
        with pytest.raises(UnknownDestinationError):
            client.transport.send("7_7", b"x")


class TestDispatchIsolation:
    def test_corrupt_client_payload_counted_not_fatal(self):
        cluster = small_cluster()
        node = cluster.nodes["0_0"]
        before = node.core.stats.dropped_envelopes
        node.core.dispatch_client(None, b"\xff\xff\xff\xff\xff")
        assert node.core.stats.dropped_envelopes == before + 1
        client = sim_client(cluster, "c0", replica=0)
        assert client.put("k", b"v").ok  # server still alive

    def test_handler_error_isolated(self):
        cluster = small_cluster()
        node = cluster.nodes["0_0"]
        original = node.core.protocol.handle_client_message
        node.core.protocol.handle_client_message = lambda *a: (_ for _ in ()).throw(
            RuntimeError("boom")
        )
        node.core.dispatch_client(None, b"")
        assert node.core.stats.handler_errors == 1
        node.core.protocol.handle_client_message = original
        client = sim_client(cluster, "c0", replica=0)
        assert client.put("k", b"v").ok


class TestReplication:
    def test_write_reaches_other_replica_after_drain(self):
        cluster = small_cluster()
        c0 = sim_client(cluster, "c0", replica=0)
        c0.put("shared", b"payload")
        cluster.run_until_quiescent()
        c1 = sim_client(cluster, "c1", replica=1)
        result = c1.get("shared")
        assert result.found and result.value == b"payload"

    def test_single_replica_sends_no_replicates(self):
        cluster = small_cluster(replicas=1, partitions=2)
        client = sim_client(cluster, "c0", replica=0)
        client.put("k", b"v")
        trace = cluster.run_until_quiescent()
        assert all(e[0] != "deliver" for e in trace)
