"""Shard merge: FIFO repair, effective ordering, program release rules."""

from refinedb.graphstate import Op, VertexVersions
from refinedb.harness import CountingOracle
from refinedb.shard import NopItem, ProgramItem, ShardCore, TxItem
from refinedb.store import StoredVertex
from refinedb.timestamps import Order, VectorTimestamp


def ts(clocks, issuer=0, epoch=0):
    return VectorTimestamp(epoch, issuer, tuple(clocks))


def make_shard(n_gk=2, oracle=None):
    core = ShardCore(0, n_gk, oracle or CountingOracle())
    core.graph["v1"] = VertexVersions("v1", ts([0] * n_gk))
    core.graph["v2"] = VertexVersions("v2", ts([0] * n_gk))
    return core


def tx(clocks, txid, ops=(), issuer=0):
    return TxItem(ts(clocks, issuer), tuple(ops), txid)


def test_fifo_gap_repair():
    core = make_shard(n_gk=1)
    first = tx([1], "t1")
    second = tx([2], "t2")
    core.receive(0, 0, 2, second)  # arrives out of order
    assert core.pump() == []  # seq 1 still missing; nothing executes
    core.receive(0, 0, 1, first)
    core.pump()
    assert [txid for _, _, txid in core.exec_log] == ["t1", "t2"]


def test_duplicate_delivery_ignored():
    core = make_shard(n_gk=1)
    item = tx([1], "t1")
    core.receive(0, 0, 1, item)
    core.receive(0, 0, 1, item)
    core.pump()
    core.receive(0, 0, 1, item)
    core.pump()
    assert len(core.exec_log) == 1


def test_blocked_until_every_channel_has_a_head():
    core = make_shard(n_gk=2)
    core.receive(0, 0, 1, tx([1, 0], "t1"))
    assert core.pump() == []  # gk1's channel is empty; t1 could be overtaken
    core.receive(1, 0, 1, NopItem(ts([1, 2], issuer=1)))
    core.pump()
    assert [txid for _, _, txid in core.exec_log] == ["t1"]


def test_concurrent_nop_drains_first():
    core = make_shard(n_gk=2)
    core.receive(0, 0, 1, tx([1, 0], "t1"))
    core.receive(1, 0, 1, NopItem(ts([0, 1], issuer=1)))
    core.pump()
    assert core.channels[1].queue == []  # concurrent nop consumed silently
    assert core.exec_log == []  # t1 still waits: gk1 may yet send (0, 2)-ish
    core.receive(1, 0, 2, NopItem(ts([1, 2], issuer=1)))
    core.pump()
    assert [txid for _, _, txid in core.exec_log] == ["t1"]
    assert core.oracle.oracle.event_count() == 0  # nops are never registered


def test_vector_order_respected_without_oracle():
    core = make_shard(n_gk=2)
    core.receive(0, 0, 1, tx([1, 0], "early"))
    core.receive(1, 0, 1, tx([2, 1], "late", issuer=1))
    core.pump()
    # "early" is vector-below "late", so it runs; "late" then waits for gk0
    assert [txid for _, _, txid in core.exec_log] == ["early"]
    core.receive(0, 0, 2, NopItem(ts([3, 2])))
    core.pump()
    assert [txid for _, _, txid in core.exec_log] == ["early", "late"]
    assert core.oracle.order_calls == 0


def test_concurrent_transactions_ordered_once_by_oracle():
    core = make_shard(n_gk=2)
    a = tx([1, 0], "a", [Op("set_property", "v1", key="k", value="a")])
    b = tx([0, 1], "b", [Op("set_property", "v2", key="k", value="b")], issuer=1)
    def drive(shard):
        shard.receive(0, 0, 1, a)
        shard.receive(1, 0, 1, b)
        shard.pump()
        shard.receive(0, 0, 2, NopItem(ts([2, 2])))
        shard.receive(1, 0, 2, NopItem(ts([2, 2], issuer=1)))
        shard.pump()

    drive(core)
    assert len(core.exec_log) == 2
    rel = core.oracle.oracle.query_order(a.ts, b.ts)
    assert rel in (Order.BEFORE, Order.AFTER)
    # a second shard consulting the same oracle sees the same decision
    twin = make_shard(n_gk=2, oracle=core.oracle)
    drive(twin)
    assert [e[2] for e in twin.exec_log] == [e[2] for e in core.exec_log]


def prog(clocks, pid, vertex="v1", issuer=1, name="get_node"):
    return ProgramItem(ts(clocks, issuer), pid, name, issuer, 0, ((0, vertex, ()),))


def test_program_waits_for_concurrent_transaction():
    core = make_shard(n_gk=2)
    write = tx([1, 0], "w", [Op("create_edge", "e9", "v1", "v2")])
    reader = prog([0, 1], "p1")
    core.receive(0, 0, 1, write)
    core.receive(1, 0, 1, reader)
    out = core.pump()
    # the program may not run yet: gk0's clock has not provably passed it
    assert [e[1] for e in core.exec_log] == ["tx"]
    assert out == []
    # once gk0's channel frontier dominates the program, it runs and sees the
    # refined-earlier write
    core.receive(0, 0, 2, NopItem(ts([2, 2])))
    out = core.pump()
    assert [e[1] for e in core.exec_log] == ["tx", "program"]
    fragment = out[0]["items"][0][3]
    assert "e9" in fragment["edges"]


def test_program_snapshot_excludes_later_writes():
    core = make_shard(n_gk=2)
    reader = prog([0, 1], "p1")
    core.receive(1, 0, 1, reader)
    core.receive(0, 0, 1, NopItem(ts([1, 2])))  # frontier passes the program
    out = core.pump()
    fragment = out[0]["items"][0][3]
    assert "e9" not in fragment["edges"]
    late = tx([2, 2], "w", [Op("create_edge", "e9", "v1", "v2")])
    core.receive(0, 0, 2, late)
    core.receive(1, 0, 2, NopItem(ts([2, 3], issuer=1)))
    core.pump()
    # re-reading the record at the program's timestamp still excludes it
    view = core.graph["v1"].edges_at(reader.ts, core.leq)
    assert [e.handle for e in view] == []


def test_old_epoch_traffic_dropped_and_future_stashed():
    core = make_shard(n_gk=1)
    core.receive(0, 1, 1, tx([5], "future", (), 0))  # future epoch: stashed
    assert core.pump() == []
    restored = [StoredVertex("v1", VertexVersions("v1", ts([0])), ts([0]), 0)]
    core.start_epoch(1, restored)
    core.receive(0, 0, 9, tx([1], "stale"))  # pre-barrier epoch: dropped
    future = TxItem(VectorTimestamp(1, 0, (5,)), (), "future")
    core.receive(0, 1, 1, future)
    core.pump()
    assert [txid for _, _, txid in core.exec_log] == ["future"]


def test_start_epoch_reloads_from_restore():
    core = make_shard(n_gk=1)
    core.receive(0, 0, 1, tx([1], "t1", [Op("set_property", "v1", key="k", value="x")]))
    core.pump()
    payload = VertexVersions("v1", ts([0]))
    restored = [StoredVertex("v1", payload, ts([0]), 0)]
    core.start_epoch(1, restored)
    assert core.graph["v1"].current_properties() == {}
    assert core.channels[0].queue == []


def test_gc_needs_every_gatekeeper_threshold():
    core = make_shard(n_gk=2)
    core.graph["v1"].apply(Op("set_property", "v1", key="k", value="a"), ts([1, 1]))
    core.graph["v1"].apply(Op("set_property", "v1", key="k", value="b"), ts([2, 2]))
    assert core.note_gc_threshold(0, ts([9, 9])) == 0  # gk1 not heard from
    reclaimed = core.note_gc_threshold(1, ts([5, 9], issuer=1))
    assert reclaimed == 1  # the superseded "a" version; min threshold applied
