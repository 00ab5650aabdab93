"""Eventual consistency: last-writer-wins convergence."""

import random

from replikv.runtime import SimParams, build_sim_cluster, sim_client


def cluster_with(seed=3, replicas=2, partitions=3, **kw):
    return build_sim_cluster("eventual", replicas, partitions, SimParams(seed=seed), **kw)


def proto(cluster, nid):
    return cluster.nodes[nid].core.protocol


def rec(key, ts, sr, value=b"v"):
    return {"key": key, "value": value, "ts": ts, "sr": sr}


class TestHandlers:
    def test_put_replicates_to_peer_partition_only(self):
        cluster = cluster_with()
        client = sim_client(cluster, "c0", replica=0)
        client.put("k", b"v")
        cluster.run_until_quiescent()
        deliveries = [e for e in cluster.trace if e[0] == "deliver"]
        assert len(deliveries) == 1
        src, dst = deliveries[0][2], deliveries[0][3]
        assert src.split("_")[1] == dst.split("_")[1]  # same partition id
        assert src.split("_")[0] != dst.split("_")[0]  # other replica

    def test_lww_newest_ts_wins(self):
        cluster = cluster_with()
        client = sim_client(cluster, "c0", replica=0)
        client.put("k", b"old")
        cluster.run_for(5_000_000)  # let the clock move
        client.put("k", b"new")
        assert client.get("k").value == b"new"

    def test_tie_broken_by_replica_id(self):
        cluster = cluster_with()
        node = cluster.nodes["0_0"]
        for sr in (1, 0):  # apply in both orders on different keys
            node.core.protocol.handle_server_message(
                {"replicate_message": {"rec": rec("a", 5, sr, value=f"sr{sr}".encode())}}
            )
            node.core.protocol.handle_server_message(
                {"replicate_message": {"rec": rec("b", 5, 1 - sr, value=f"sr{1 - sr}".encode())}}
            )
        assert node.core.storage.newest("a")["sr"] == 1
        assert node.core.storage.newest("b")["sr"] == 1

    def test_apply_idempotent_and_commutative(self):
        records = [rec("k", ts, sr, value=f"{ts}/{sr}".encode()) for ts in (3, 7, 7, 9) for sr in (0, 1)]
        rng = random.Random(5)
        winners = set()
        for _ in range(10):
            cluster = cluster_with(replicas=1, partitions=1)
            node = cluster.nodes["0_0"]
            shuffled = records * 2
            rng.shuffle(shuffled)
            for r in shuffled:
                node.core.protocol.handle_server_message({"replicate_message": {"rec": r}})
            winner = node.core.storage.newest("k")
            winners.add((winner["ts"], winner["sr"], winner["value"]))
        assert len(winners) == 1
        assert winners.pop()[:2] == (9, 1)


class TestConvergence:
    def run_mixed(self, seed):
        cluster = cluster_with(seed=seed)
        writes = []
        clients = [sim_client(cluster, f"c{r}", replica=r) for r in (0, 1)]
        rng = random.Random(seed)
        for i in range(60):
            c = clients[rng.randrange(2)]
            key = f"k{rng.randrange(6)}"
            value = f"v{i}".encode()
            result = c.put(key, value)
            writes.append((key, result.meta["ts"], c.session.config.local_replica, value))
        cluster.run_until_quiescent()
        return cluster, writes

    def test_matches_offline_lww_oracle(self):
        for seed in (11, 12, 13):
            cluster, writes = self.run_mixed(seed)
            # oracle: fold all writes in any order, pick max (ts, sr)
            expected = {}
            for key, ts, sr, value in writes:
                if (ts, sr) > expected.get(key, ((-1, -1), b""))[0]:
                    expected[key] = ((ts, sr), value)
            for key, ((ts, sr), value) in expected.items():
                partition = None
                for nid, node in cluster.nodes.items():
                    got = node.core.storage.newest(key)
                    if got is not None:
                        assert (got["ts"], got["sr"]) == (ts, sr), (seed, key)
                        assert got["value"] == value
                        partition = nid
                assert partition is not None

    def test_all_replicas_converge(self):
        for seed in (21, 22):
            cluster, _ = self.run_mixed(seed)
            for p in range(3):
                a = cluster.nodes[f"0_{p}"].core.storage
                b = cluster.nodes[f"1_{p}"].core.storage
                assert set(a.keys()) == set(b.keys())
                for key in a.keys():
                    wa, wb = a.newest(key), b.newest(key)
                    assert (wa["ts"], wa["sr"], wa["value"]) == (wb["ts"], wb["sr"], wb["value"])
