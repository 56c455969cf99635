"""Timeline oracle: an acyclic happens-before DAG over outstanding events.

One logical, deterministic state machine.  Every mutating command is appended
to an internal command log so a crash-restart can replay to the same state.
Edges implied by vector-clock comparison are honored without being
materialized: reachability searches treat "a.compare(b) is BEFORE" as an
edge a -> b between registered events.
"""

from __future__ import annotations

from enum import Enum

from .timestamps import Order, VectorTimestamp


class CycleError(Exception):
    """The requested happens-before edges would create a cycle."""


class NotRegistered(Exception):
    """Query names an event that was never created (or already collected)."""


class OrderPreference(Enum):
    ARRIVAL_ORDER = "arrival"
    PROGRAM_AFTER_TRANSACTIONS = "program_after_transactions"


class TimelineOracle:
    def __init__(self) -> None:
        self._events: set[VectorTimestamp] = set()
        self._succ: dict[VectorTimestamp, set[VectorTimestamp]] = {}
        self._pred: dict[VectorTimestamp, set[VectorTimestamp]] = {}
        self.command_log: list[tuple] = []
        self.order_calls = 0  # order_or_assign invocations, for Fig-8 style counters

    # -- event lifecycle ---------------------------------------------------

    def create_event(self, ts: VectorTimestamp) -> None:
        if ts in self._events:
            return  # re-registration is a no-op
        self.command_log.append(("create", ts))
        self._events.add(ts)
        self._succ[ts] = set()
        self._pred[ts] = set()

    def known(self, ts: VectorTimestamp) -> bool:
        return ts in self._events

    def event_count(self) -> int:
        return len(self._events)

    # -- reachability over explicit + vector-implied edges ------------------

    def _successors(self, ts: VectorTimestamp):
        yield from self._succ[ts]
        for other in self._events:
            if other not in self._succ[ts] and ts.compare(other) is Order.BEFORE:
                yield other

    def _reaches(self, a: VectorTimestamp, b: VectorTimestamp) -> bool:
        if a.compare(b) is Order.BEFORE:
            return True
        seen = {a}
        stack = [a]
        while stack:
            cur = stack.pop()
            for nxt in self._successors(cur):
                if nxt == b:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    # -- ordering API --------------------------------------------------------

    def assign_order(
        self,
        before: set[VectorTimestamp] | frozenset[VectorTimestamp],
        after: set[VectorTimestamp] | frozenset[VectorTimestamp],
    ) -> None:
        for ts in list(before) + list(after):
            if ts not in self._events:
                raise NotRegistered(str(ts))
        # Validate everything first so a rejected call leaves the graph intact.
        for a in after:
            for b in before:
                if a == b or self._reaches(a, b):
                    raise CycleError(f"{a} already precedes {b}")
        self.command_log.append(("assign", frozenset(before), frozenset(after)))
        for b in before:
            for a in after:
                self._succ[b].add(a)
                self._pred[a].add(b)

    def query_order(self, a: VectorTimestamp, b: VectorTimestamp) -> Order:
        if a not in self._events or b not in self._events:
            raise NotRegistered(f"{a} / {b}")
        if a == b:
            return Order.EQUAL
        if self._reaches(a, b):
            return Order.BEFORE
        if self._reaches(b, a):
            return Order.AFTER
        return Order.CONCURRENT

    def order_or_assign(
        self,
        pairs: list[tuple[VectorTimestamp, VectorTimestamp]],
        pref: OrderPreference,
    ) -> list[Order]:
        """Return a definite order for each (a, b) pair, establishing one if needed.

        Callers orient each pair so that `a` is the element the preference
        would place first (arrival order, or the transaction in a
        transaction-vs-program pair).  A pre-established order always wins.
        """
        self.order_calls += 1
        out = []
        for a, b in pairs:
            if a not in self._events or b not in self._events:
                raise NotRegistered(f"{a} / {b}")
            rel = self.query_order(a, b)
            if rel is Order.CONCURRENT:
                self.assign_order({a}, {b})
                rel = Order.BEFORE
            out.append(rel)
        return out

    # -- garbage collection ---------------------------------------------------

    def gc_events(self, threshold: VectorTimestamp) -> int:
        """Drop events strictly before the oldest ongoing operation.

        Removing a node could sever an explicit path between survivors, so each
        removal splices bypass edges pred -> succ.  Implied-implied hops need no
        bypass (vector BEFORE is transitive on its own).
        """
        doomed = [e for e in self._events if e.compare(threshold) is Order.BEFORE]
        if not doomed:
            return 0
        self.command_log.append(("gc", threshold))
        for y in doomed:
            survivors_after = [
                s for s in self._events if s != y and y.compare(s) is Order.BEFORE
            ]
            e_pred = list(self._pred[y])
            e_succ = list(self._succ[y])
            for p in e_pred:
                for s in e_succ + survivors_after:
                    if p != s and s in self._events:
                        self._succ[p].add(s)
                        self._pred[s].add(p)
            implied_pred = [
                p for p in self._events if p != y and p.compare(y) is Order.BEFORE
            ]
            for p in implied_pred:
                for s in e_succ:
                    if p != s:
                        self._succ[p].add(s)
                        self._pred[s].add(p)
            for p in self._pred[y]:
                self._succ[p].discard(y)
            for s in self._succ[y]:
                self._pred[s].discard(y)
            self._events.discard(y)
            del self._succ[y]
            del self._pred[y]
        # Bypass edges may point at nodes GC'd later in the same sweep.
        for e in self._events:
            self._succ[e] &= self._events
            self._pred[e] &= self._events
        return len(doomed)

    # -- invariants and recovery ----------------------------------------------

    def is_acyclic(self) -> bool:
        """Topological-sort check over explicit + vector-implied edges."""
        indeg = {e: 0 for e in self._events}
        succ = {e: set(self._successors(e)) for e in self._events}
        for e, outs in succ.items():
            for o in outs:
                indeg[o] += 1
        ready = [e for e, d in indeg.items() if d == 0]
        seen = 0
        while ready:
            cur = ready.pop()
            seen += 1
            for o in succ[cur]:
                indeg[o] -= 1
                if indeg[o] == 0:
                    ready.append(o)
        return seen == len(self._events)

    @classmethod
    def replay(cls, log: list[tuple]) -> "TimelineOracle":
        oracle = cls()
        for cmd in log:
            if cmd[0] == "create":
                oracle.create_event(cmd[1])
            elif cmd[0] == "assign":
                oracle.assign_order(cmd[1], cmd[2])
            elif cmd[0] == "gc":
                oracle.gc_events(cmd[1])
        return oracle
