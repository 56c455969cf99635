"""Gatekeeper: timestamp issue, transaction execution, program driving."""

from refinedb.gatekeeper import GatekeeperConfig, GatekeeperCore
from refinedb.graphstate import Op
from refinedb.store import BackingStore
from refinedb.timestamps import Order, VectorTimestamp


def make_gk(gk_id=0, store=None, n_gk=2, n_shards=2):
    store = store if store is not None else BackingStore()
    cfg = GatekeeperConfig(n_gk, n_shards, tau_ms=10.0, nop_ms=1.0, gc_ms=None)
    return GatekeeperCore(gk_id, store, cfg)


def seed_vertex(gk, handle):
    result, _ = gk.commit_transaction(f"seed-{handle}", [Op("create_vertex", handle)], {})
    assert result["status"] == "committed"
    return result["ts"]


def test_timestamps_strictly_increase():
    gk = make_gk()
    a = gk.assign_timestamp()
    b = gk.assign_timestamp()
    assert a.compare(b) is Order.BEFORE
    assert a.issuer == 0


def test_announce_merges_peer_clock():
    gk = make_gk()
    gk.handle_announce(VectorTimestamp(0, 1, (0, 7)))
    ts = gk.assign_timestamp()
    assert ts.clocks[1] == 7


def test_commit_writes_store_and_ships_items():
    gk = make_gk()
    result, outbox = gk.commit_transaction("t1", [Op("create_vertex", "v1")], {})
    assert result["status"] == "committed"
    assert gk.store.get(BackingStore.vertex_key("v1")) is not None
    assert len(outbox) == 1
    item = outbox[0]["item"]
    assert item.txid == "t1" and item.ts == result["ts"]


def test_commit_is_idempotent_per_txid():
    gk = make_gk()
    first, _ = gk.commit_transaction("t1", [Op("create_vertex", "v1")], {})
    again, outbox = gk.commit_transaction("t1", [Op("create_vertex", "v1")], {})
    assert again["status"] == "committed"
    assert again["ts"] == first["ts"]
    assert again.get("replayed")
    assert outbox == []  # nothing re-applied, nothing re-shipped


def test_invalid_operation_aborts():
    gk = make_gk()
    result, outbox = gk.commit_transaction("t1", [Op("delete_vertex", "ghost")], {})
    assert result == {
        "status": "aborted",
        "reason": "invalid_operation",
        "detail": result["detail"],
    }
    assert outbox == []


def test_occ_conflict_on_version_mismatch():
    gk = make_gk()
    seed_vertex(gk, "v1")
    _view, key, version = gk.handle_read("v1")
    # another committer moves the vertex after our read
    result, _ = gk.commit_transaction(
        "writer", [Op("set_property", "v1", key="k", value="x")], {}
    )
    assert result["status"] == "committed"
    result, _ = gk.commit_transaction(
        "reader", [Op("set_property", "v1", key="k", value="y")], {key: version}
    )
    assert result == {"status": "aborted", "reason": "conflict"}


def test_stale_timestamp_abort_merges_clock():
    store = BackingStore()
    gk0 = make_gk(0, store)
    gk1 = make_gk(1, store)
    for _ in range(5):
        gk0.assign_timestamp()  # gk0's clock races ahead
    seed = gk0.commit_transaction("seed", [Op("create_vertex", "v1")], {})[0]
    assert seed["status"] == "committed"
    # gk1 has never heard from gk0, so its timestamp cannot dominate the
    # vertex's last update; the touched-vertex rule must refuse it
    result, _ = gk1.commit_transaction(
        "t-stale", [Op("set_property", "v1", key="k", value="x")], {}
    )
    assert result == {"status": "aborted", "reason": "stale_timestamp"}
    # the abort folded the winning clock in, so the retry dominates and wins
    retry, _ = gk1.commit_transaction(
        "t-retry", [Op("set_property", "v1", key="k", value="x")], {}
    )
    assert retry["status"] == "committed"
    assert seed["ts"].compare(retry["ts"]) is Order.BEFORE


def test_read_view_shape():
    gk = make_gk()
    gk.commit_transaction(
        "t1",
        [
            Op("create_vertex", "v1"),
            Op("create_vertex", "v2"),
            Op("create_edge", "e1", "v1", "v2"),
            Op("set_property", "v1", key="k", value="x"),
        ],
        {},
    )
    view, _key, version = gk.handle_read("v1")
    assert view["exists"]
    assert view["properties"] == {"k": "x"}
    assert view["edges"]["e1"]["dst"] == "v2"
    assert version > 0
    missing, _, v0 = gk.handle_read("ghost")
    assert missing == {"exists": False}


def test_unknown_program_rejected():
    gk = make_gk()
    err, outbox = gk.submit_node_program("frobnicate", ["v1"], {}, ("client", 0), 1)
    assert err == {"error": "unknown_program"}
    assert outbox == []


def test_program_round_trip_through_fragments():
    gk = make_gk(n_shards=1)
    seed_vertex(gk, "v1")
    err, outbox = gk.submit_node_program("get_node", ["v1"], {}, ("client", 3), 7)
    assert err is None
    assert len(outbox) == 1
    item = outbox[0]["item"]
    # simulate the shard answering the single round
    reply = gk.handle_fragments(
        {
            "program_id": item.program_id,
            "round_no": 0,
            "shard": 0,
            "items": [
                (0, "v1", {}, {"found": "true", "properties": "{}", "edges": "{}"}, [])
            ],
        }
    )
    [result_msg] = [m for m in reply if m["type"] == "program_result"]
    assert result_msg["to"] == ("client", 3)
    assert result_msg["result"]["found"] == "true"
    assert not gk.ongoing
    assert any(m["type"] == "program_done" for m in reply)


def test_tick_emits_announces_and_nops():
    gk = make_gk(n_gk=3, n_shards=2)
    out = gk.tick(now=100.0)
    announces = [m for m in out if m["type"] == "announce"]
    nops = [m for m in out if m.get("item") and m["item"].kind == "nop"]
    assert len(announces) == 2  # both peers, never itself
    assert len(nops) == 2  # one per quiet shard channel
    # immediately after, nothing is due
    assert gk.tick(now=100.0) == []


def test_start_epoch_resets_clock_and_aborts_programs():
    gk = make_gk(n_shards=1)
    seed_vertex(gk, "v1")
    gk.submit_node_program("get_node", ["v1"], {}, ("client", 0), 9)
    out = gk.start_epoch(3)
    assert gk.epoch == 3
    assert gk.clock.epoch == 3 and set(gk.clock.clocks) == {0}
    aborts = [m for m in out if m["type"] == "program_result"]
    assert aborts and aborts[0]["result"] == {"error": "epoch_change"}
    assert not gk.ongoing
    # old-epoch announces are ignored after the move
    gk.handle_announce(VectorTimestamp(0, 1, (0, 99)))
    assert gk.assign_timestamp().clocks[1] == 0
