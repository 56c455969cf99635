"""Strict-serializability checker for operation histories.

Searches (brute force with pruning) for a total order of the completed
operations that respects real-time precedence and replays every committed
transaction, reproduces every semantic abort, and matches every program
result against the single-threaded reference executor.  The replay engine
here is written independently of the server code paths on purpose: it
validates against its own model of graph semantics, so a bug in the
server's shared code cannot hide itself.

Conflict and stale-timestamp aborts have no effect and are excluded; a
history is checked only if its concurrency window is small enough for the
search to be exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

from .harness import HistoryLog, HistoryRecord
from .reference import run_reference
from .timestamps import Order, VectorTimestamp

MAX_WINDOW = 10


class RefInvalid(Exception):
    pass


class WindowExceeded(Exception):
    pass


# ---------------------------------------------------------------------------
# independent replay semantics
# ---------------------------------------------------------------------------


def new_state(snapshot: dict) -> dict:
    """Build checker state from a plain snapshot."""
    live = {}
    for v, node in snapshot.items():
        live[v] = {
            "properties": dict(node["properties"]),
            "edges": {eh: {"dst": e["dst"], "properties": dict(e["properties"])}
                      for eh, e in node["edges"].items()},
            "dead_edges": set(),
        }
    return {"live": live, "dead_vertices": set()}


def copy_state(state: dict) -> dict:
    return {
        "live": {
            v: {
                "properties": dict(n["properties"]),
                "edges": {eh: {"dst": e["dst"], "properties": dict(e["properties"])}
                          for eh, e in n["edges"].items()},
                "dead_edges": set(n["dead_edges"]),
            }
            for v, n in state["live"].items()
        },
        "dead_vertices": set(state["dead_vertices"]),
    }


def state_digest(state: dict) -> str:
    doc = {
        "live": {
            v: {
                "p": n["properties"],
                "e": {eh: [e["dst"], e["properties"]] for eh, e in n["edges"].items()},
                "d": sorted(n["dead_edges"]),
            }
            for v, n in state["live"].items()
        },
        "dead": sorted(state["dead_vertices"]),
    }
    return json.dumps(doc, sort_keys=True)


def state_snapshot(state: dict) -> dict:
    return {
        v: {"properties": n["properties"], "edges": n["edges"]}
        for v, n in state["live"].items()
    }


def ref_apply(state: dict, ops: list[list]) -> None:
    """Apply a transaction's op list to checker state, in place.

    Raises RefInvalid on the first semantic violation; callers must apply
    to a copy if they need atomicity.
    """
    live = state["live"]
    for kind, handle, src, dst, key, value in ops:
        if kind == "create_vertex":
            if handle in live or handle in state["dead_vertices"]:
                raise RefInvalid(f"vertex handle reused: {handle}")
            live[handle] = {"properties": {}, "edges": {}, "dead_edges": set()}
        elif kind == "delete_vertex":
            if handle not in live:
                raise RefInvalid(f"delete of missing vertex: {handle}")
            del live[handle]
            state["dead_vertices"].add(handle)
        elif kind == "create_edge":
            node = live.get(src)
            if node is None:
                raise RefInvalid(f"edge source missing: {src}")
            if dst not in live:
                raise RefInvalid(f"edge destination missing: {dst}")
            if handle in node["edges"] or handle in node["dead_edges"]:
                raise RefInvalid(f"edge handle reused: {handle}")
            node["edges"][handle] = {"dst": dst, "properties": {}}
        elif kind == "delete_edge":
            node = live.get(src)
            if node is None or handle not in node["edges"]:
                raise RefInvalid(f"delete of missing edge: {handle}")
            del node["edges"][handle]
            node["dead_edges"].add(handle)
        elif kind in ("set_property", "delete_property"):
            if src is not None:
                node = live.get(src)
                if node is None or handle not in node["edges"]:
                    raise RefInvalid(f"property edge missing: {handle}")
                props = node["edges"][handle]["properties"]
            else:
                node = live.get(handle)
                if node is None:
                    raise RefInvalid(f"property vertex missing: {handle}")
                props = node["properties"]
            if kind == "set_property":
                props[key] = value
            else:
                if key not in props:
                    raise RefInvalid(f"property not set: {key}")
                del props[key]
        else:
            raise RefInvalid(f"unknown op kind: {kind}")


def read_view(state: dict, handle: str) -> dict:
    node = state["live"].get(handle)
    if node is None:
        return {"exists": False}
    return {
        "exists": True,
        "properties": dict(node["properties"]),
        "edges": {eh: {"dst": e["dst"], "properties": dict(e["properties"])}
                  for eh, e in node["edges"].items()},
    }


# ---------------------------------------------------------------------------
# the search
# ---------------------------------------------------------------------------


@dataclass
class _Node:
    idx: int
    rec: HistoryRecord
    kind: str  # "commit" | "invalid" | "program"


def _relevant(history: HistoryLog) -> list[_Node]:
    nodes = []
    for rec in history.records:
        if rec.kind == "tx":
            status = rec.result.get("status")
            if status == "committed":
                nodes.append(_Node(len(nodes), rec, "commit"))
            elif rec.result.get("reason") == "invalid_operation":
                nodes.append(_Node(len(nodes), rec, "invalid"))
            # conflict/stale aborts left no trace anywhere; skip
        elif rec.kind == "program":
            nodes.append(_Node(len(nodes), rec, "program"))
    return nodes


def concurrency_window(nodes: list[_Node]) -> int:
    points = []
    for n in nodes:
        points.append((n.rec.inv, 1))
        points.append((n.rec.resp, -1))
    depth = best = 0
    for _, delta in sorted(points, key=lambda p: (p[0], p[1])):
        depth += delta
        best = max(best, depth)
    return best


def _try_place(node: _Node, state: dict) -> Optional[dict]:
    """Return the post-state if the node fits here, else None."""
    rec = node.rec
    if node.kind == "program":
        result = {k: v for k, v in rec.result.items() if k != "ts"}
        expect = run_reference(
            rec.payload["name"], state_snapshot(state), rec.payload["start"],
            rec.payload["params"],
        )
        return state if result == expect else None
    # transactions: recorded reads must match the state at this point
    if node.kind == "commit":
        for handle, view in rec.payload.get("reads", {}).items():
            if read_view(state, handle) != view:
                return None
        nxt = copy_state(state)
        try:
            ref_apply(nxt, rec.payload["ops"])
        except RefInvalid:
            return None
        return nxt
    # invalid-operation abort: validation must fail here
    probe = copy_state(state)
    try:
        ref_apply(probe, rec.payload["ops"])
    except RefInvalid:
        return state
    return None


def check_strict_serializability(
    history: HistoryLog, initial_snapshot: dict, max_window: int = MAX_WINDOW
) -> tuple[bool, str]:
    """Returns (ok, detail).  Raises WindowExceeded when the history is too
    concurrent for an exact search."""
    nodes = _relevant(history)
    if not nodes:
        return True, "empty history"
    window = concurrency_window(nodes)
    if window > max_window:
        raise WindowExceeded(f"concurrency window {window} exceeds {max_window}")

    n = len(nodes)
    preds: list[set[int]] = [set() for _ in range(n)]
    for a in nodes:
        for b in nodes:
            if a.rec.resp < b.rec.inv:
                preds[b.idx].add(a.idx)

    state0 = new_state(initial_snapshot)
    seen: set[tuple[frozenset, str]] = set()

    def search(placed: frozenset, state: dict) -> bool:
        if len(placed) == n:
            return True
        key = (placed, state_digest(state))
        if key in seen:
            return False
        seen.add(key)
        for node in nodes:
            if node.idx in placed or not preds[node.idx] <= placed:
                continue
            nxt = _try_place(node, state)
            if nxt is not None and search(placed | {node.idx}, nxt):
                return True
        return False

    ok = search(frozenset(), state0)
    detail = f"{n} operations, window {window}"
    return ok, detail


# ---------------------------------------------------------------------------
# real-time vector order over conflicting committed writes
# ---------------------------------------------------------------------------


def check_realtime_vector_order(history: HistoryLog) -> tuple[bool, str]:
    """Committed transactions that conflict and do not overlap in real time
    must carry vector timestamps in matching order (no refinement needed)."""
    txs = []
    for rec in history.records:
        if rec.kind != "tx" or rec.result.get("status") != "committed":
            continue
        ops = rec.payload["ops"]
        touched = set()
        observed = set()
        for kind, handle, src, dst, key, value in ops:
            owner = handle if kind in ("create_vertex", "delete_vertex") else (
                src if src is not None else handle
            )
            touched.add(owner)
            if kind == "create_edge" and dst is not None:
                observed.add(dst)
        for h, view in rec.payload.get("reads", {}).items():
            observed.add(h)
        txs.append((rec, VectorTimestamp.from_list(rec.result["ts"]), touched, observed))

    checked = 0
    for rec_a, ts_a, touched_a, _ in txs:
        for rec_b, ts_b, touched_b, observed_b in txs:
            if rec_a.resp >= rec_b.inv:
                continue
            if not (touched_a & (touched_b | observed_b)):
                continue
            checked += 1
            if ts_a.compare(ts_b) is not Order.BEFORE:
                return False, (
                    f"tx {rec_a.payload['txid']} finished before {rec_b.payload['txid']} "
                    f"started on shared vertices but timestamps are not ordered"
                )
    return True, f"{checked} conflicting real-time pairs checked"
