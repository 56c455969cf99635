"""Vector timestamp ordering properties."""

import pytest
from hypothesis import given, strategies as st

from refinedb.timestamps import (
    ClockLengthMismatch,
    Order,
    StaleAnnounce,
    VectorTimestamp,
    compare,
)


def ts(clocks, issuer=0, epoch=0):
    return VectorTimestamp(epoch, issuer, tuple(clocks))


vts = st.builds(
    VectorTimestamp,
    st.integers(min_value=0, max_value=2),
    st.integers(min_value=0, max_value=2),
    st.tuples(*[st.integers(min_value=0, max_value=5)] * 3),
)


def test_basic_orders():
    assert ts([1, 0]).compare(ts([2, 0])) is Order.BEFORE
    assert ts([2, 1]).compare(ts([1, 0])) is Order.AFTER
    assert ts([1, 0]).compare(ts([1, 0])) is Order.EQUAL
    assert ts([1, 0]).compare(ts([0, 1])) is Order.CONCURRENT


def test_epoch_strictly_dominates():
    old = ts([100, 100], epoch=0)
    new = ts([0, 0], epoch=1)
    assert old.compare(new) is Order.BEFORE
    assert new.compare(old) is Order.AFTER


def test_mismatched_lengths_rejected():
    with pytest.raises(ClockLengthMismatch):
        ts([1, 2]).compare(ts([1, 2, 3]))


@given(vts, vts)
def test_compare_antisymmetric(a, b):
    if len(a.clocks) != len(b.clocks):
        return
    assert a.compare(b) is b.compare(a).flipped()


@given(vts, vts, vts)
def test_compare_transitive(a, b, c):
    if a.compare(b) is Order.BEFORE and b.compare(c) is Order.BEFORE:
        assert a.compare(c) is Order.BEFORE


@given(vts, vts)
def test_merge_is_join(a, b):
    if a.epoch != b.epoch:
        return
    m = a.merge(b)
    # upper bound of both, and the least one (pointwise max); note the merge
    # is never strictly below either input even when issuers differ
    for side in (a, b):
        assert m.compare(side) is not Order.BEFORE
        assert all(x >= y for x, y in zip(m.clocks, side.clocks))
    assert m.clocks == tuple(max(x, y) for x, y in zip(a.clocks, b.clocks))
    assert a.merge(b).clocks == b.merge(a).clocks  # commutative
    assert a.merge(a).clocks == a.clocks  # idempotent


@given(vts, vts, vts)
def test_merge_associative(a, b, c):
    if not (a.epoch == b.epoch == c.epoch):
        return
    assert a.merge(b).merge(c).clocks == a.merge(b.merge(c)).clocks


def test_merge_rejects_older_epoch():
    with pytest.raises(StaleAnnounce):
        ts([1, 1], epoch=1).merge(ts([5, 5], epoch=0))


@given(vts)
def test_increment_local_strictly_after(a):
    nxt = a.increment_local()
    assert a.compare(nxt) is Order.BEFORE
    assert nxt.issuer == a.issuer
    # exactly the issuer's component moved
    for i, (x, y) in enumerate(zip(a.clocks, nxt.clocks)):
        assert y == x + (1 if i == a.issuer else 0)


def test_single_issuer_totally_ordered():
    cur = VectorTimestamp.zero(3, 1)
    seen = []
    for _ in range(10):
        cur = cur.increment_local()
        for old in seen:
            assert old.compare(cur) is Order.BEFORE
        seen.append(cur)


@given(vts)
def test_bytes_roundtrip(a):
    decoded, n = VectorTimestamp.from_bytes(a.to_bytes())
    assert decoded == a
    assert n == len(a.to_bytes())


@given(vts)
def test_list_roundtrip(a):
    assert VectorTimestamp.from_list(a.to_list()) == a


@given(vts, vts)
def test_sort_key_total_and_consistent(a, b):
    if len(a.clocks) != len(b.clocks):
        return
    # sort_key is a total order refining the partial vector order
    if a.compare(b) is Order.BEFORE:
        assert a.sort_key() < b.sort_key()
    if a.sort_key() == b.sort_key():
        assert a == b


@given(vts, vts)
def test_module_level_compare_matches_method(a, b):
    if len(a.clocks) != len(b.clocks):
        return
    assert compare(a, b) is a.compare(b)
