"""Checker soundness: constructed controls and a brute-force oracle."""

import random

from replikv.checker import (
    audit_visibility,
    build_dependencies,
    check_causal,
    check_convergence,
    extract_states,
    find_stuck,
    load_history,
    save_history,
    _History,
)
from replikv.ids import partition_for_key
from replikv.runtime import SimParams, build_sim_cluster, sim_client


def ev(index, kind, node, session="", key="", sr=0, stamp=0, deps=(), gate=None):
    return (index, kind, node, session, key, sr, stamp, deps, gate)


def owner(replica, key, partitions=2):
    return f"{replica}_{partition_for_key(key, partitions)}"


class TestConstructedControls:
    def test_empty_history_no_violations(self):
        assert check_causal([], num_partitions=2, protocol="cops") == []

    def test_single_violation_named(self):
        # v2 (key b) depends on v1 (key a); a reader at replica 1 sees v2
        # while v1 is not yet visible there -> exactly one violation on v2
        events = [
            ev(0, "put", owner(0, "a"), "w", "a", sr=0, stamp=1),
            ev(1, "visible", owner(0, "a"), "", "a", sr=0, stamp=1),
            ev(2, "put", owner(0, "b"), "w", "b", sr=0, stamp=2, deps=(("a", 0, 1),)),
            ev(3, "visible", owner(0, "b"), "", "b", sr=0, stamp=2),
            ev(4, "visible", owner(1, "b"), "", "b", sr=0, stamp=2),
            ev(5, "get", owner(1, "b"), "r", "b", sr=0, stamp=2),
            ev(6, "visible", owner(1, "a"), "", "a", sr=0, stamp=1),  # too late
        ]
        violations = check_causal(events, num_partitions=2, protocol="cops")
        assert len(violations) == 1
        v = violations[0]
        assert v.version == ("b", 0, 2) and v.dep == ("a", 0, 1)

    def test_clean_history_passes(self):
        events = [
            ev(0, "put", owner(0, "a"), "w", "a", sr=0, stamp=1),
            ev(1, "visible", owner(0, "a"), "", "a", sr=0, stamp=1),
            ev(2, "put", owner(0, "b"), "w", "b", sr=0, stamp=2, deps=(("a", 0, 1),)),
            ev(3, "visible", owner(0, "b"), "", "b", sr=0, stamp=2),
            ev(4, "visible", owner(1, "a"), "", "a", sr=0, stamp=1),  # dep first
            ev(5, "visible", owner(1, "b"), "", "b", sr=0, stamp=2),
            ev(6, "get", owner(1, "b"), "r", "b", sr=0, stamp=2),
        ]
        assert check_causal(events, num_partitions=2, protocol="cops") == []

    def test_transitive_dependency_checked(self):
        # c -> b -> a; only a's visibility is missing at replica 1
        events = [
            ev(0, "put", owner(0, "a"), "w", "a", sr=0, stamp=1),
            ev(1, "visible", owner(0, "a"), "", "a", sr=0, stamp=1),
            ev(2, "put", owner(0, "b"), "w", "b", sr=0, stamp=2, deps=(("a", 0, 1),)),
            ev(3, "visible", owner(0, "b"), "", "b", sr=0, stamp=2),
            ev(4, "put", owner(0, "c"), "w", "c", sr=0, stamp=3, deps=(("b", 0, 2),)),
            ev(5, "visible", owner(0, "c"), "", "c", sr=0, stamp=3),
            ev(6, "visible", owner(1, "b"), "", "b", sr=0, stamp=2),
            ev(7, "visible", owner(1, "c"), "", "c", sr=0, stamp=3),
            ev(8, "get", owner(1, "c"), "r", "c", sr=0, stamp=3),
        ]
        violations = check_causal(events, num_partitions=2, protocol="cops")
        assert len(violations) == 1
        assert violations[0].dep == ("a", 0, 1)


class TestSessionDerivedDeps:
    def test_session_order_and_reads_from(self):
        events = [
            ev(0, "put", "0_0", "s1", "a", sr=0, stamp=1),
            ev(1, "get", "0_1", "s2", "b", sr=0, stamp=7),
            ev(2, "put", "0_0", "s2", "c", sr=0, stamp=9),
            ev(3, "put", "0_1", "s2", "d", sr=0, stamp=11),
        ]
        history = _History(events, 2, "gentlerain")
        deps = build_dependencies(history)
        assert deps[("a", 0, 1)] == ()
        assert deps[("c", 0, 9)] == (("b", 0, 7),)
        assert deps[("d", 0, 11)] == (("c", 0, 9),)  # nearest-dep collapse


class TestConvergence:
    def test_identical_states_true(self):
        states = {0: {"k": (1, 0, b"v")}, 1: {"k": (1, 0, b"v")}}
        ok, diffs = check_convergence(states)
        assert ok and diffs == {}

    def test_divergent_key_listed(self):
        states = {0: {"k": (1, 0, b"v")}, 1: {"k": (2, 0, b"w")}}
        ok, diffs = check_convergence(states)
        assert not ok and "k" in diffs

    def test_missing_key_counts_as_divergence(self):
        states = {0: {"k": (1, 0, b"v")}, 1: {}}
        ok, diffs = check_convergence(states)
        assert not ok


class TestAudit:
    def test_eventual_skipped(self):
        assert audit_visibility([], "eventual").skipped

    def test_forged_early_visible_record_flagged(self):
        events = [
            ev(0, "visible", "1_0", "", "a", sr=0, stamp=100),
            ev(1, "get", "1_0", "r", "a", sr=0, stamp=100, gate=50),  # gate below stamp
        ]
        result = audit_visibility(events, "gentlerain")
        assert not result.skipped
        assert any(v.kind == "gate" for v in result.violations)

    def test_read_before_store_flagged(self):
        events = [ev(0, "get", "1_0", "r", "a", sr=0, stamp=5, gate=10)]
        result = audit_visibility(events, "cops")
        assert any(v.kind == "read-before-store" for v in result.violations)

    def test_clean_gentlerain_run_passes(self):
        cluster = build_sim_cluster("gentlerain", 2, 3, SimParams(seed=2))
        client = sim_client(cluster, "c0", replica=0)
        for i in range(30):
            client.put(f"k{i % 7}", bytes([i]))
            client.get(f"k{(i * 3) % 7}")
        cluster.run_until_quiescent()
        result = audit_visibility(cluster.history.events, "gentlerain")
        assert result.violations == []


class TestStuck:
    def test_pending_forever_reported(self):
        events = [
            ev(0, "applied", "1_0", "", "a", sr=0, stamp=5),
        ]
        assert find_stuck(events) == [("1_0", ("a", 0, 5))]

    def test_released_not_reported(self):
        events = [
            ev(0, "applied", "1_0", "", "a", sr=0, stamp=5),
            ev(1, "visible", "1_0", "", "a", sr=0, stamp=5),
        ]
        assert find_stuck(events) == []


class TestTraceFile:
    def test_roundtrip(self, tmp_path):
        events = [
            ev(0, "put", "0_0", "s", "a", sr=0, stamp=1, deps=(("x", 1, 9),)),
            ev(1, "gst", "0_0", "", "", 0, 42),
            ev(2, "dsv", "0_1", "", "", 0, 0, gate=(3, 4)),
            ev(3, "get", "0_0", "s", "a", sr=0, stamp=1, gate=7),
        ]
        path = tmp_path / "trace.bin"
        save_history(events, path, protocol="cops", num_replicas=2, num_partitions=3)
        header, loaded = load_history(path)
        assert header["protocol"] == "cops"
        assert header["num_partitions"] == 3
        assert loaded == events


def brute_force_check(events, num_partitions, protocol):
    """Independent oracle: explicit transitive closure per get, no memoing."""
    history = _History(events, num_partitions, protocol)
    deps = build_dependencies(history)
    violations = []
    for ev_ in history.gets:
        index, _, node, _, key, sr, stamp, _, _ = ev_
        replica = int(node.split("_")[0])
        # closure by BFS
        frontier = list(deps.get((key, sr, stamp), ()))
        seen = set()
        while frontier:
            d = frontier.pop()
            if d in seen:
                continue
            seen.add(d)
            frontier.extend(deps.get(d, ()))
        for d in seen:
            owner = f"{replica}_{partition_for_key(d[0], num_partitions)}"
            va = history.visibility_index(owner, d)
            if va is None or va > index:
                violations.append(((key, sr, stamp), d, index))
    return violations


class TestAgainstBruteForce:
    def random_history(self, rng, inject_violation):
        """Random multi-session history over 2 replicas x 2 partitions with
        visibility events scheduled after dependencies (valid), optionally
        mutated to delay one dependency's visibility (invalid)."""
        events = []
        index = 0
        stamp = 0
        sessions = {f"s{i}": [] for i in range(3)}
        versions = []

        def emit(kind, node, session="", key="", sr=0, st=0, deps=()):
            nonlocal index
            events.append(ev(index, kind, node, session, key, sr, st, deps))
            index += 1

        for _ in range(rng.randrange(4, 12)):
            session = rng.choice(list(sessions))
            replica = rng.randrange(2)
            key = f"k{rng.randrange(4)}"
            owner = f"{replica}_{partition_for_key(key, 2)}"
            if versions and rng.random() < 0.4:
                # read an existing version (made visible first if needed)
                vkey, vsr, vst = rng.choice(versions)
                vowner = f"{replica}_{partition_for_key(vkey, 2)}"
                if all(not (e[1] == "visible" and e[2] == vowner and (e[4], e[5], e[6]) == (vkey, vsr, vst)) for e in events):
                    emit("visible", vowner, key=vkey, sr=vsr, st=vst)
                emit("get", vowner, session, vkey, vsr, vst)
                sessions[session].append((vkey, vsr, vst))
            else:
                stamp += 1
                deps = tuple(dict.fromkeys(sessions[session]))
                version = (key, replica, stamp)
                emit("put", owner, session, key, replica, stamp, deps)
                emit("visible", owner, key=key, sr=replica, st=stamp)
                # replicate everywhere with deps first (valid schedule)
                other = 1 - replica
                for dkey, dsr, dst in deps:
                    downer = f"{other}_{partition_for_key(dkey, 2)}"
                    if all(not (e[1] == "visible" and e[2] == downer and (e[4], e[5], e[6]) == (dkey, dsr, dst)) for e in events):
                        emit("visible", downer, key=dkey, sr=dsr, st=dst)
                emit("visible", f"{other}_{partition_for_key(key, 2)}", key=key, sr=replica, st=stamp)
                sessions[session] = [version]
                versions.append(version)

        if inject_violation and versions:
            # pick a version with deps, read it remotely before one dep
            candidates = [v for v in versions if any(e[1] == "put" and (e[4], e[5], e[6]) == v and e[7] for e in events)]
            if candidates:
                vkey, vsr, vst = rng.choice(candidates)
                put_ev = next(e for e in events if e[1] == "put" and (e[4], e[5], e[6]) == (vkey, vsr, vst))
                dep = put_ev[7][0]
                other = 1 - vsr
                downer = f"{other}_{partition_for_key(dep[0], 2)}"
                # strip the dep's visible event at the remote replica
                events = [
                    e
                    for e in events
                    if not (e[1] == "visible" and e[2] == downer and (e[4], e[5], e[6]) == dep)
                ]
                reader = f"{other}_{partition_for_key(vkey, 2)}"
                events.append(ev(index, "get", reader, "attacker", vkey, vsr, vst))
        return events

    def test_checker_matches_brute_force(self):
        rng = random.Random(1234)
        agreements = 0
        for trial in range(120):
            inject = trial % 2 == 1
            events = self.random_history(rng, inject)
            fast = check_causal(events, 2, "cops")
            slow = brute_force_check(events, 2, "cops")
            assert bool(fast) == bool(slow), f"trial {trial} disagreement"
            fast_pairs = {(v.version, v.dep) for v in fast if v.dep}
            slow_pairs = {(v, d) for v, d, _ in slow}
            assert fast_pairs == slow_pairs
            agreements += 1
        assert agreements == 120


class TestExtractStates:
    def test_sim_cluster_states(self):
        cluster = build_sim_cluster("eventual", 2, 2, SimParams(seed=1))
        client = sim_client(cluster, "c0", replica=0)
        client.put("k", b"v")
        cluster.run_until_quiescent()
        states = extract_states(cluster)
        ok, diffs = check_convergence(states)
        assert ok, diffs
