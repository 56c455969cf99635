"""Stock node programs against the single-threaded reference executor."""

import random

import pytest

from refinedb.harness import CountingOracle, replay_program
from refinedb.graphstate import Op, VertexVersions
from refinedb.programs import (
    DuplicateProgram,
    UnknownProgram,
    get_program,
    list_programs,
    register_program,
)
from refinedb.reference import run_reference
from refinedb.shard import ShardCore
from refinedb.store import shard_for
from refinedb.timestamps import VectorTimestamp

TS0 = VectorTimestamp.zero(1, 0)


def shards_from_snapshot(snapshot, n_shards):
    oracle = CountingOracle()
    cores = {s: ShardCore(s, 1, oracle) for s in range(n_shards)}
    for v, node in snapshot.items():
        rec = VertexVersions(v, TS0)
        for k, val in node["properties"].items():
            rec.apply(Op("set_property", v, key=k, value=val), TS0)
        for eh, e in node["edges"].items():
            rec.apply(Op("create_edge", eh, v, e["dst"]), TS0)
            for k, val in e["properties"].items():
                rec.apply(Op("set_property", eh, v, key=k, value=val), TS0)
        cores[shard_for(v, n_shards)].graph[v] = rec
    return cores


def random_snapshot(rng, n_vertices, p_edge=0.15):
    names = [f"n{i}" for i in range(n_vertices)]
    snap = {v: {"properties": {}, "edges": {}} for v in names}
    e = 0
    for src in names:
        for dst in names:
            if src != dst and rng.random() < p_edge:
                props = {"weight": str(rng.randint(1, 3))} if rng.random() < 0.3 else {}
                snap[src]["edges"][f"e{e}"] = {"dst": dst, "properties": props}
                e += 1
        if rng.random() < 0.4:
            snap[src]["properties"]["tag"] = rng.choice("abc")
    return snap


def both(snapshot, n_shards, name, start, params):
    cores = shards_from_snapshot(snapshot, n_shards)
    got = replay_program(cores, n_shards, name, start, params, TS0, "t")
    want = run_reference(name, snapshot, start, params)
    return got, want


def test_registry():
    assert set(list_programs()) >= {
        "get_node", "get_edges", "count_edges", "reachability",
        "clustering_coefficient",
    }
    with pytest.raises(UnknownProgram):
        get_program("nope")
    with pytest.raises(DuplicateProgram):
        register_program("get_node", None, None)


def test_get_node_missing_vertex():
    got, want = both({"a": {"properties": {}, "edges": {}}}, 2, "get_node", ["zz"], {})
    assert got == want == {"error": "not_found"}


def test_reachability_simple_chain():
    snap = {
        "a": {"properties": {}, "edges": {"e1": {"dst": "b", "properties": {}}}},
        "b": {"properties": {}, "edges": {"e2": {"dst": "c", "properties": {}}}},
        "c": {"properties": {}, "edges": {}},
    }
    got, want = both(snap, 2, "reachability", ["a"], {"to": "c"})
    assert got == want
    assert got["reachable"] == "true" and got["path"] == "a,b,c"
    got, want = both(snap, 2, "reachability", ["c"], {"to": "a"})
    assert got == want == {"reachable": "false", "path": ""}


def test_reachability_respects_edge_filter():
    snap = {
        "a": {"properties": {}, "edges": {
            "e1": {"dst": "b", "properties": {"color": "red"}},
            "e2": {"dst": "c", "properties": {}},
        }},
        "b": {"properties": {}, "edges": {}},
        "c": {"properties": {}, "edges": {}},
    }
    got, want = both(snap, 2, "reachability", ["a"], {"to": "b", "edge_property": "color"})
    assert got == want and got["reachable"] == "true"
    got, want = both(snap, 2, "reachability", ["a"], {"to": "c", "edge_property": "color"})
    assert got == want and got["reachable"] == "false"


def test_clustering_triangle():
    snap = {
        "a": {"properties": {}, "edges": {"e1": {"dst": "b", "properties": {}},
                                          "e2": {"dst": "c", "properties": {}}}},
        "b": {"properties": {}, "edges": {"e3": {"dst": "c", "properties": {}}}},
        "c": {"properties": {}, "edges": {}},
    }
    got, want = both(snap, 3, "clustering_coefficient", ["a"], {})
    assert got == want == {"coefficient": "1/2"}


def test_get_edges_filter_forms():
    snap = {
        "a": {"properties": {}, "edges": {
            "e1": {"dst": "b", "properties": {"w": "2"}},
            "e2": {"dst": "c", "properties": {"w": "3"}},
            "e3": {"dst": "d", "properties": {}},
        }},
        "b": {"properties": {}, "edges": {}},
        "c": {"properties": {}, "edges": {}},
        "d": {"properties": {}, "edges": {}},
    }
    for params in ({}, {"filter": "w"}, {"filter": "w=3"}):
        got, want = both(snap, 2, "get_edges", ["a"], params)
        assert got == want
        got, want = both(snap, 2, "count_edges", ["a"], params)
        assert got == want


@pytest.mark.parametrize("seed", range(8))
def test_randomized_equivalence(seed):
    rng = random.Random(seed)
    snap = random_snapshot(rng, rng.randint(4, 30))
    names = sorted(snap)
    for name in ("get_node", "get_edges", "count_edges", "clustering_coefficient"):
        start = [rng.choice(names)]
        got, want = both(snap, 1 + seed % 3, name, start, {})
        assert got == want, (name, start)
    for _ in range(4):
        src, dst = rng.choice(names), rng.choice(names)
        got, want = both(snap, 1 + seed % 3, "reachability", [src], {"to": dst})
        assert got == want, (src, dst)
