"""End-to-end smoke test: real processes, sockets, and the client library.

Kept deliberately small — one gatekeeper, one shard — so it stays fast on
tiny CI boxes; the distributed behaviors get their coverage in the
simulation tests.
"""

import time

import pytest

from refinedb.client import GraphClient
from refinedb.realmode import start_cluster


@pytest.fixture(scope="module")
def cluster(tmp_path_factory):
    data_dir = str(tmp_path_factory.mktemp("store"))
    c = start_cluster(n_gatekeepers=1, n_shards=1, data_dir=data_dir)
    # wait for the gatekeeper to accept connections
    deadline = time.monotonic() + 15
    client = None
    while time.monotonic() < deadline:
        try:
            client = GraphClient(c.topo.host, c.topo.gk_ports[0], timeout_s=2.0)
            client.read("warmup")
            break
        except Exception:
            if client is not None:
                client.close()
                client = None
            time.sleep(0.2)
    if client is None:
        c.stop()
        pytest.fail("cluster did not come up")
    yield c, client
    client.close()
    c.stop()


def test_commit_then_read(cluster):
    _, client = cluster
    tx = client.begin()
    tx.create_vertex("alice")
    tx.create_vertex("bob")
    tx.create_edge("knows1", "alice", "bob")
    tx.set_property("alice", "city", "zurich")
    result = tx.commit()
    assert result["status"] == "committed"
    assert "ts" in result

    view, _, _ = client.read("alice")
    assert view["exists"] and view["properties"] == {"city": "zurich"}
    assert view["edges"]["knows1"]["dst"] == "bob"


def test_transaction_overlay_reads_own_writes(cluster):
    _, client = cluster
    tx = client.begin()
    tx.create_vertex("carol")
    tx.create_edge("knows2", "alice", "carol")
    view = tx.read("carol")
    assert view["exists"]
    view = tx.read("alice")
    assert "knows2" in view["edges"]
    assert tx.commit()["status"] == "committed"


def test_occ_conflict_aborts_stale_reader(cluster):
    _, client = cluster
    tx = client.begin()
    tx.read("alice")
    tx.set_property("alice", "mood", "stale")

    interloper = client.begin()
    interloper.set_property("alice", "city", "basel")
    assert interloper.commit()["status"] == "committed"

    result = tx.commit()
    assert result["status"] == "aborted"
    assert result["reason"] == "conflict"


def test_invalid_operation_rejected(cluster):
    _, client = cluster
    tx = client.begin()
    tx.create_vertex("alice")  # handle already taken
    result = tx.commit()
    assert result["status"] == "aborted"
    assert result["reason"] == "invalid_operation"


def test_program_roundtrip(cluster):
    _, client = cluster
    result = client.submit_program("reachability", ["alice"], {"to": "bob"})
    assert result["reachable"] == "true"
    assert result["path"] == "alice,bob"
    result = client.submit_program("count_edges", ["bob"], {})
    assert result["count"] == "0"
