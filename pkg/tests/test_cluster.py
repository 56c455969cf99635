"""Manager membership, failure detection, and the two-phase epoch barrier."""

from refinedb.cluster import ManagerCore


def beat_all(mgr, now):
    for kind, index in list(mgr.members):
        mgr.handle_heartbeat(kind, index, now)


def test_healthy_cluster_never_changes_view():
    mgr = ManagerCore(2, 2, timeout_ms=500.0)
    for t in range(0, 2000, 100):
        beat_all(mgr, float(t))
        assert mgr.check(float(t)) == []
    assert mgr.epoch == 0
    assert mgr.view().gatekeepers == [0, 1]
    assert mgr.view().shards == [0, 1]


def test_gatekeeper_death_runs_prepare_then_view():
    mgr = ManagerCore(2, 1, timeout_ms=500.0)
    beat_all(mgr, 0.0)
    mgr.handle_heartbeat("gatekeeper", 1, 600.0)
    mgr.handle_heartbeat("shard", 0, 600.0)
    out = mgr.check(600.0)  # gk0 timed out
    assert mgr.epoch == 1
    assert out == [{"type": "prepare", "to": ("gatekeeper", 1), "epoch": 1}]
    # the view installs only after every survivor acks
    assert mgr.handle_prepare_ack(1, epoch=0) == []  # stale ack ignored
    installed = mgr.handle_prepare_ack(1, epoch=1)
    targets = {m["to"] for m in installed}
    assert targets == {("gatekeeper", 1), ("shard", 0)}
    assert all(m["type"] == "view" and m["epoch"] == 1 for m in installed)
    assert installed[0]["view"].gatekeepers == [1]


def test_one_view_change_at_a_time():
    mgr = ManagerCore(3, 1, timeout_ms=500.0)
    beat_all(mgr, 0.0)
    for kind, index in list(mgr.members):
        if (kind, index) != ("gatekeeper", 0):
            mgr.handle_heartbeat(kind, index, 600.0)
    mgr.check(600.0)
    assert mgr.barrier_pending == {1, 2}
    # gk1 dies while the barrier is open; detection waits for the install
    mgr.handle_heartbeat("gatekeeper", 2, 1200.0)
    mgr.handle_heartbeat("shard", 0, 1200.0)
    assert mgr.check(1200.0) == []
    assert mgr.epoch == 1
    mgr.handle_prepare_ack(1, epoch=1)
    mgr.handle_prepare_ack(2, epoch=1)
    out = mgr.check(1200.0)  # now gk1's missed beats surface
    assert mgr.epoch == 2
    assert out == [{"type": "prepare", "to": ("gatekeeper", 2), "epoch": 2}]


def test_dead_member_stops_beating_back_in():
    mgr = ManagerCore(1, 1, timeout_ms=500.0)
    beat_all(mgr, 0.0)
    mgr.handle_heartbeat("gatekeeper", 0, 600.0)
    mgr.check(600.0)
    assert not mgr.members[("shard", 0)].alive
    # a late heartbeat from the dead process is ignored...
    mgr.handle_heartbeat("shard", 0, 601.0)
    assert not mgr.members[("shard", 0)].alive
    # ...until a replacement is registered
    mgr.mark_replaced("shard", 0)
    mgr.handle_heartbeat("shard", 0, 602.0)
    assert mgr.members[("shard", 0)].alive


def test_all_gatekeepers_dead_installs_directly():
    mgr = ManagerCore(1, 1, timeout_ms=500.0)
    beat_all(mgr, 0.0)
    mgr.handle_heartbeat("shard", 0, 600.0)
    out = mgr.check(600.0)
    assert mgr.epoch == 1
    assert [m["type"] for m in out] == ["view"]
    assert out[0]["view"].gatekeepers == []


def test_epochs_strictly_increase_across_failures():
    mgr = ManagerCore(3, 1, timeout_ms=500.0)
    seen = []
    now = 0.0
    beat_all(mgr, now)
    for victim in (0, 1, 2):
        now += 600.0
        for kind, index in list(mgr.members):
            if not (kind == "gatekeeper" and index <= victim):
                mgr.handle_heartbeat(kind, index, now)
        out = mgr.check(now)
        for msg in out:
            if msg["type"] == "prepare":
                mgr.handle_prepare_ack(msg["to"][1], msg["epoch"])
        seen.append(mgr.epoch)
    assert seen == [1, 2, 3]
