"""Simulation harness: determinism, workload generators, history logs."""

import random

import pytest

from refinedb.harness import (
    HistoryLog,
    GraphModel,
    ScenarioConfig,
    make_workload,
    ring_graph,
    run_scenario,
)


def small_cfg(**kw):
    vertices, edges = ring_graph(12)
    base = dict(
        seed=5,
        n_gatekeepers=2,
        n_shards=2,
        n_clients=3,
        duration_ms=150.0,
        initial_vertices=vertices,
        initial_edges=edges,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def lines(res):
    return [r.to_line() for r in res.history.records]


def test_ring_graph_shape():
    vertices, edges = ring_graph(4)  # below the chord threshold: a plain ring
    assert len(vertices) == 4 and len(edges) == 4
    assert set(src for _, src, _ in edges) == set(vertices)
    assert set(dst for _, _, dst in edges) == set(vertices)
    vertices, edges = ring_graph(8)  # ring plus one chord per vertex
    assert len(edges) == 16
    handles = [e for e, _, _ in edges]
    assert len(set(handles)) == len(handles)


def test_same_seed_same_history():
    a = run_scenario(small_cfg())
    b = run_scenario(small_cfg())
    assert lines(a) == lines(b)
    assert a.counters.ops > 0


def test_different_seed_different_history():
    a = run_scenario(small_cfg(seed=5))
    b = run_scenario(small_cfg(seed=6))
    assert lines(a) != lines(b)


def test_ops_budget_stops_clients_early():
    res = run_scenario(small_cfg(duration_ms=100000.0, ops_per_client=4))
    per_client = {}
    for rec in res.history.records:
        per_client[rec.client] = per_client.get(rec.client, 0) + 1
    assert per_client and all(n <= 4 for n in per_client.values())


def test_history_roundtrips_through_file(tmp_path):
    res = run_scenario(small_cfg())
    path = tmp_path / "history.log"
    res.history.save(str(path))
    loaded = HistoryLog.load(str(path))
    assert [r.to_line() for r in loaded.records] == lines(res)


def test_tao_mix_is_read_heavy():
    sample = make_workload("tao")
    vertices, edges = ring_graph(30)
    model = GraphModel(vertices, edges)
    rng = random.Random(1)
    kinds = [sample(rng, model, 0) for _ in range(100_000)]
    reads = sum(1 for op in kinds if op["kind"] == "program")
    assert reads / len(kinds) == pytest.approx(0.998, abs=0.002)


def test_readmix_respects_fraction():
    sample = make_workload("readmix:0.5")
    vertices, edges = ring_graph(30)
    model = GraphModel(vertices, edges)
    rng = random.Random(1)
    kinds = [sample(rng, model, 0) for _ in range(50_000)]
    reads = sum(1 for op in kinds if op["kind"] == "program")
    assert reads / len(kinds) == pytest.approx(0.5, abs=0.01)


def test_unknown_workload_rejected():
    with pytest.raises(ValueError):
        make_workload("scan-all")
