"""Single-threaded reference executor over a materialized graph snapshot.

Independent implementations of every stock program, used as the equivalence
oracle for the distributed execution path and as the replay engine inside the
strict-serializability checker.  A snapshot is a plain dict:

    {vertex: {"properties": {k: v}, "edges": {ehandle: {"dst": h, "properties": {...}}}}}
"""

from __future__ import annotations

import json
from fractions import Fraction
from typing import Optional

Snapshot = dict[str, dict]


def _filter_ok(edge: dict, spec: Optional[str]) -> bool:
    if not spec:
        return True
    if "=" in spec:
        key, value = spec.split("=", 1)
        return edge["properties"].get(key) == value
    return spec in edge["properties"]


def _neighbors(snapshot: Snapshot, vertex: str, spec: Optional[str]) -> list[str]:
    out = set()
    for e in snapshot[vertex]["edges"].values():
        if _filter_ok(e, spec) and e["dst"] != vertex:
            out.add(e["dst"])
    return sorted(out)


def ref_get_node(snapshot: Snapshot, vertex: str) -> dict[str, str]:
    if vertex not in snapshot:
        return {"error": "not_found"}
    node = snapshot[vertex]
    return {
        "found": "true",
        "properties": json.dumps(node["properties"], sort_keys=True),
        "edges": json.dumps(
            {eh: e["dst"] for eh, e in node["edges"].items()}, sort_keys=True
        ),
    }


def ref_get_edges(snapshot: Snapshot, vertex: str, spec: Optional[str] = None) -> dict:
    if vertex not in snapshot:
        return {"error": "not_found"}
    handles = sorted(
        eh for eh, e in snapshot[vertex]["edges"].items() if _filter_ok(e, spec)
    )
    return {"edges": ",".join(handles)}

def ref_count_edges(snapshot: Snapshot, vertex: str, spec: Optional[str] = None) -> dict:
    res = ref_get_edges(snapshot, vertex, spec)
    if "error" in res:
        return res
    return {"count": str(len(res["edges"].split(",")) if res["edges"] else 0)}


def ref_reachability(
    snapshot: Snapshot, source: str, target: str, spec: Optional[str] = None
) -> dict[str, str]:
    """Level-synchronous BFS; parent of a new vertex is the smallest-handle
    frontier vertex with a qualifying edge to it (the canonical path rule)."""
    if source == target and source in snapshot:
        return {"reachable": "true", "path": ""}
    if source not in snapshot:
        return {"reachable": "false", "path": ""}
    parent: dict[str, Optional[str]] = {source: None}
    frontier = [source]
    while frontier:
        new: dict[str, str] = {}
        for u in frontier:
            if u not in snapshot:
                continue
            for dst in _neighbors(snapshot, u, spec):
                if dst not in parent and dst not in new:
                    new[dst] = u
        parent.update(new)
        if target in new:
            path = [target]
            while parent[path[-1]] is not None:
                path.append(parent[path[-1]])
            return {"reachable": "true", "path": ",".join(reversed(path))}
        frontier = sorted(new)
    return {"reachable": "false", "path": ""}


def ref_clustering_coefficient(snapshot: Snapshot, vertex: str) -> dict[str, str]:
    if vertex not in snapshot:
        return {"coefficient": "0"}
    neighbors = _neighbors(snapshot, vertex, None)
    d = len(neighbors)
    if d < 2:
        return {"coefficient": "0"}
    nset = set(neighbors)
    hits = 0
    for u in neighbors:
        if u not in snapshot:
            continue
        dsts = {e["dst"] for e in snapshot[u]["edges"].values()}
        hits += len((dsts & nset) - {u})
    return {"coefficient": str(Fraction(hits, d * (d - 1)))}


def run_reference(
    name: str, snapshot: Snapshot, start: list[str], params: dict[str, str]
) -> dict[str, str]:
    if name == "get_node":
        return ref_get_node(snapshot, start[0])
    if name == "get_edges":
        return ref_get_edges(snapshot, start[0], params.get("filter"))
    if name == "count_edges":
        return ref_count_edges(snapshot, start[0], params.get("filter"))
    if name == "reachability":
        return ref_reachability(
            snapshot, start[0], params["to"], params.get("edge_property")
        )
    if name == "clustering_coefficient":
        return ref_clustering_coefficient(snapshot, start[0])
    raise ValueError(f"unknown program {name}")
