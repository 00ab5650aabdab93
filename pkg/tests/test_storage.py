import random

import pytest
from hypothesis import given, settings, strategies as st

from replikv.codec import Schema, bytes_, field, sint64, string, uint32
from replikv.storage import MemoryStorage, Status

REC = Schema(
    "Rec",
    [
        field(1, "key", string),
        field(2, "value", bytes_),
        field(3, "ut", sint64),
        field(4, "sr", uint32),
    ],
)


def order_key(rec):
    return (rec["ut"], rec["sr"])


def make_store(**kw):
    return MemoryStorage(order_key, REC, **kw)


def rec(ut, sr=0, value=b"v"):
    return {"key": "k", "value": value, "ut": ut, "sr": sr}


class TestInsert:
    def test_descending_comparator_order(self):
        s = make_store()
        s.insert("k", rec(5))
        s.insert("k", rec(3))
        assert [r["ut"] for r in s.chain("k")] == [5, 3]

    def test_single_version_second_insert_wins(self):
        s = make_store(versioning="single")
        s.insert("k", rec(1, value=b"a"))
        s.insert("k", rec(2, value=b"b"))
        assert len(s.chain("k")) == 1
        assert s.newest("k")["value"] == b"b"

    def test_single_version_older_does_not_overwrite(self):
        s = make_store(versioning="single")
        s.insert("k", rec(9, value=b"new"))
        s.insert("k", rec(2, value=b"old"))
        assert s.newest("k")["value"] == b"new"

    def test_equal_version_replaced_in_place(self):
        s = make_store()
        s.insert("k", rec(5, sr=1))
        s.insert("k", rec(5, sr=1))
        assert len(s.chain("k")) == 1

    def test_random_inserts_match_sort_oracle(self):
        rng = random.Random(42)
        s = make_store()
        stamps = [(rng.randrange(1000), rng.randrange(4)) for _ in range(10_000)]
        for ut, sr in stamps:
            s.insert("k", rec(ut, sr))
        expected = sorted(set(stamps), reverse=True)  # oracle: offline sort, deduped
        assert [(r["ut"], r["sr"]) for r in s.chain("k")] == expected

    def test_closed_engine_fails(self):
        s = make_store()
        s.close()
        assert s.insert("k", rec(1)) is Status.FAILURE


class TestRead:
    def test_missing_key_not_found(self):
        s = make_store()
        out = []
        assert s.read("nope", lambda r: True, out) is Status.NOT_FOUND
        assert out == []

    def test_predicate_always_true_returns_full_chain(self):
        s = make_store()
        for ut in (1, 4, 2):
            s.insert("k", rec(ut))
        out = []
        assert s.read("k", lambda r: True, out) is Status.SUCCESS
        assert [r["ut"] for r in out] == [4, 2, 1]

    def test_predicate_always_false_empty_success(self):
        s = make_store()
        s.insert("k", rec(1))
        out = []
        assert s.read("k", lambda r: False, out) is Status.SUCCESS
        assert out == []

    def test_visibility_style_predicate_newest_first(self):
        s = make_store()
        local_sr, gst = 0, 40
        s.insert("k", rec(30, sr=1))
        s.insert("k", rec(50, sr=1))
        s.insert("k", rec(80, sr=1))
        out = []
        s.read("k", lambda r: r["sr"] == local_sr or r["ut"] <= gst, out)
        assert out and out[0]["ut"] == 30  # newest visible first


class TestPersistence:
    def test_log_replay(self, tmp_path):
        p = tmp_path / "store.log"
        s = make_store(persist_path=p, flush_on_insert=True)
        s.insert("a", {"key": "a", "value": b"1", "ut": 3, "sr": 0})
        s.insert("b", {"key": "b", "value": b"2", "ut": 7, "sr": 1})
        s.close()
        s2 = make_store(persist_path=p)
        assert s2.newest("a")["ut"] == 3
        assert s2.newest("b")["value"] == b"2"
        s2.close()

    def test_torn_tail_ignored(self, tmp_path):
        p = tmp_path / "store.log"
        s = make_store(persist_path=p, flush_on_insert=True)
        s.insert("a", rec(1))
        s.close()
        with open(p, "ab") as f:
            f.write(b"\x00\x00\x00\x10partial")
        s2 = make_store(persist_path=p)
        assert s2.newest("a")["ut"] == 1
        s2.close()


class TestStorageCentric:
    def test_forwards_to_next_two_on_ring(self):
        sent = []
        s = MemoryStorage(
            order_key,
            REC,
            replication="storage_centric",
            ring=["n0", "n1", "n2", "n3"],
            node_id="n1",
            replicate_fn=lambda peer, payload: sent.append(peer),
        )
        s.insert("k", rec(1))
        assert sent == ["n2", "n3"]

    def test_apply_remote_does_not_reforward(self):
        sent = []
        s = MemoryStorage(
            order_key,
            REC,
            replication="storage_centric",
            ring=["n0", "n1"],
            node_id="n0",
            replicate_fn=lambda peer, payload: sent.append(peer),
        )
        s.apply_remote("k", REC.encode(rec(5)))
        assert sent == []
        assert s.newest("k")["ut"] == 5

    def test_server_centric_never_forwards(self):
        sent = []
        s = MemoryStorage(
            order_key,
            REC,
            replication="server_centric",
            ring=["n0", "n1"],
            node_id="n0",
            replicate_fn=lambda peer, payload: sent.append(peer),
        )
        s.insert("k", rec(1))
        assert sent == []


stamp = st.tuples(st.integers(min_value=0, max_value=50), st.integers(min_value=0, max_value=3))


class TestComparatorProperties:
    @given(st.lists(stamp, min_size=1, max_size=40))
    @settings(max_examples=200)
    def test_chain_always_sorted_descending(self, stamps):
        s = make_store()
        for ut, sr in stamps:
            s.insert("k", rec(ut, sr))
        chain = [(r["ut"], r["sr"]) for r in s.chain("k")]
        assert chain == sorted(set(stamps), reverse=True)

    @given(st.lists(stamp, min_size=1, max_size=8), st.randoms(use_true_random=False))
    @settings(max_examples=100)
    def test_total_order_insert_order_independent(self, stamps, rnd):
        s1, s2 = make_store(), make_store()
        for ut, sr in stamps:
            s1.insert("k", rec(ut, sr))
        shuffled = list(stamps)
        rnd.shuffle(shuffled)
        for ut, sr in shuffled:
            s2.insert("k", rec(ut, sr))
        assert [order_key(r) for r in s1.chain("k")] == [order_key(r) for r in s2.chain("k")]
