"""Timeline oracle: acyclic event DAG with irreversible order decisions."""

import pytest

from refinedb.oracle import (
    CycleError,
    NotRegistered,
    OrderPreference,
    TimelineOracle,
)
from refinedb.timestamps import Order, VectorTimestamp


def ts(clocks, issuer=0, epoch=0):
    return VectorTimestamp(epoch, issuer, tuple(clocks))


def test_create_is_idempotent():
    orc = TimelineOracle()
    a = ts([1, 0])
    orc.create_event(a)
    orc.create_event(a)
    assert orc.event_count() == 1
    assert orc.known(a)


def test_unregistered_rejected():
    orc = TimelineOracle()
    orc.create_event(ts([1, 0]))
    with pytest.raises(NotRegistered):
        orc.query_order(ts([1, 0]), ts([0, 1]))


def test_assign_and_query():
    orc = TimelineOracle()
    a, b = ts([0, 1]), ts([1, 0], issuer=1)
    orc.create_event(a)
    orc.create_event(b)
    assert orc.query_order(a, b) is Order.CONCURRENT
    orc.assign_order({a}, {b})
    assert orc.query_order(a, b) is Order.BEFORE
    assert orc.query_order(b, a) is Order.AFTER


def test_transitivity_through_vector_implied_edges():
    # once <0,1> precedes <1,0>, it must also precede <2,0>, which the
    # vector order already places after <1,0>.
    orc = TimelineOracle()
    a, b, c = ts([0, 1], issuer=1), ts([1, 0]), ts([2, 0])
    for e in (a, b, c):
        orc.create_event(e)
    orc.assign_order({a}, {b})
    assert orc.query_order(a, c) is Order.BEFORE


def test_cycle_rejected_direct_and_transitive():
    orc = TimelineOracle()
    a, b, c = ts([0, 0, 1], issuer=2), ts([0, 1, 0], issuer=1), ts([1, 0, 0])
    for e in (a, b, c):
        orc.create_event(e)
    orc.assign_order({a}, {b})
    orc.assign_order({b}, {c})
    with pytest.raises(CycleError):
        orc.assign_order({c}, {a})
    with pytest.raises(CycleError):
        orc.assign_order({b}, {a})
    assert orc.is_acyclic()


def test_cycle_against_vector_order_rejected():
    orc = TimelineOracle()
    lo, hi = ts([1, 0]), ts([2, 0])
    orc.create_event(lo)
    orc.create_event(hi)
    with pytest.raises(CycleError):
        orc.assign_order({hi}, {lo})


def test_order_or_assign_prefers_existing_answer():
    orc = TimelineOracle()
    a, b = ts([0, 1], issuer=1), ts([1, 0])
    orc.create_event(a)
    orc.create_event(b)
    orc.assign_order({a}, {b})
    # caller orients b first, but the pre-established a before b wins
    (rel,) = orc.order_or_assign([(b, a)], OrderPreference.ARRIVAL_ORDER)
    assert rel is Order.AFTER


def test_order_or_assign_decides_concurrent_pairs():
    orc = TimelineOracle()
    a, b = ts([0, 1], issuer=1), ts([1, 0])
    orc.create_event(a)
    orc.create_event(b)
    (rel,) = orc.order_or_assign([(a, b)], OrderPreference.PROGRAM_AFTER_TRANSACTIONS)
    assert rel is Order.BEFORE
    # the decision is irreversible: asking the other way agrees forever
    (rel2,) = orc.order_or_assign([(b, a)], OrderPreference.ARRIVAL_ORDER)
    assert rel2 is Order.AFTER


def test_answers_monotonic_over_time():
    orc = TimelineOracle()
    events = [ts([i, 0]) for i in range(3)] + [ts([0, j], issuer=1) for j in range(1, 4)]
    for e in events:
        orc.create_event(e)
    answered = {}
    for a in events:
        for b in events:
            if a != b:
                answered[(a, b)] = orc.query_order(a, b)
    orc.order_or_assign([(events[0], events[3])], OrderPreference.ARRIVAL_ORDER)
    for (a, b), old in answered.items():
        if old is not Order.CONCURRENT:
            assert orc.query_order(a, b) is old


def test_gc_preserves_surviving_orders():
    orc = TimelineOracle()
    old = ts([1, 1])
    mid = ts([0, 5], issuer=1)
    new = ts([5, 3])
    for e in (old, mid, new):
        orc.create_event(e)
    # old precedes mid only through an explicit edge; gc of old must splice
    orc.assign_order({old}, {mid})
    orc.assign_order({mid}, {new})
    dropped = orc.gc_events(ts([2, 2]))
    assert dropped == 1
    assert not orc.known(old)
    assert orc.query_order(mid, new) is Order.BEFORE
    assert orc.is_acyclic()


def test_gc_splices_explicit_bridge():
    # a -> gone -> b with both neighbors surviving: the path must survive gc.
    orc = TimelineOracle()
    a = ts([0, 3], issuer=1)
    gone = ts([1, 1])
    b = ts([3, 0])
    for e in (a, gone, b):
        orc.create_event(e)
    orc.assign_order({a}, {gone})
    orc.assign_order({gone}, {b})
    assert orc.gc_events(ts([2, 2])) == 1
    assert orc.query_order(a, b) is Order.BEFORE


def test_replay_rebuilds_identical_answers():
    orc = TimelineOracle()
    events = [ts([i, 5 - i], issuer=i % 2) for i in range(5)]
    for e in events:
        orc.create_event(e)
    orc.order_or_assign([(events[0], events[4])], OrderPreference.ARRIVAL_ORDER)
    orc.order_or_assign([(events[1], events[3])], OrderPreference.ARRIVAL_ORDER)
    twin = TimelineOracle.replay(orc.command_log)
    for a in events:
        for b in events:
            if a != b:
                assert twin.query_order(a, b) is orc.query_order(a, b)
