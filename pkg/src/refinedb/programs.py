"""Vertex-centric node programs: the framework plus the stock programs.

A program is split between a per-vertex step function, executed inside the
owning shard against the snapshot defined by the program's timestamp, and a
driver, executed at the submitting gatekeeper, which turns each round's
fragments into the next round of chunks or the final result.

Step functions are pure in (vertex view, prog_state, params) and return
(fragment, next-hop suggestions); all cross-vertex bookkeeping lives in the
driver so that results are deterministic regardless of fragment arrival
order: the framework hands fragments to the driver sorted by chunk index.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Optional

from .graphstate import LeqFn, VertexVersions
from .timestamps import VectorTimestamp

Params = dict[str, str]
Chunk = tuple[str, Params]  # (vertex handle, per-hop params)
Fragment = dict[str, str]
StepResult = tuple[Fragment, list[Chunk]]


class UnknownProgram(Exception):
    pass


class DuplicateProgram(Exception):
    pass


class VertexView:
    """Read-only view of one vertex as it exists at the program's timestamp."""

    def __init__(
        self,
        record: Optional[VertexVersions],
        at: VectorTimestamp,
        leq: LeqFn,
    ):
        self._record = record
        self._at = at
        self._leq = leq

    @property
    def handle(self) -> Optional[str]:
        return self._record.handle if self._record else None

    def exists(self) -> bool:
        return self._record is not None and self._record.visible_at(self._at, self._leq)

    def properties(self) -> dict[str, str]:
        return self._record.properties_at(self._at, self._leq)

    def edges(self) -> list[dict]:
        """Visible out-edges sorted by edge handle."""
        out = []
        for e in self._record.edges_at(self._at, self._leq):
            out.append(
                {
                    "handle": e.handle,
                    "dst": e.dst,
                    "properties": self._record.properties_at(
                        self._at, self._leq, e.handle
                    ),
                }
            )
        return out


def _edge_filter(spec: Optional[str]) -> Callable[[dict], bool]:
    if not spec:
        return lambda e: True
    if "=" in spec:
        key, value = spec.split("=", 1)
        return lambda e: e["properties"].get(key) == value
    return lambda e: spec in e["properties"]


def _neighbors(view: VertexView, filter_spec: Optional[str]) -> list[str]:
    keep = _edge_filter(filter_spec)
    seen = set()
    for e in view.edges():
        if keep(e) and e["dst"] != view.handle:
            seen.add(e["dst"])
    return sorted(seen)


# -- step functions (run at the shards) ---------------------------------------


def step_get_node(view: VertexView, prog_state: dict, params: Params) -> StepResult:
    if not view.exists():
        return {"found": "false"}, []
    import json

    props = json.dumps(view.properties(), sort_keys=True)
    edges = json.dumps({e["handle"]: e["dst"] for e in view.edges()}, sort_keys=True)
    return {"found": "true", "properties": props, "edges": edges}, []


def step_get_edges(view: VertexView, prog_state: dict, params: Params) -> StepResult:
    if not view.exists():
        return {"found": "false", "edges": ""}, []
    keep = _edge_filter(params.get("filter"))
    handles = sorted(e["handle"] for e in view.edges() if keep(e))
    return {"found": "true", "edges": ",".join(handles)}, []


def step_reachability(view: VertexView, prog_state: dict, params: Params) -> StepResult:
    if not view.exists():
        return {"found": "false", "neighbors": ""}, []
    if prog_state.get("visited"):
        return {"found": "true", "neighbors": ""}, []
    prog_state["visited"] = "1"
    neighbors = _neighbors(view, params.get("edge_property"))
    return {"found": "true", "neighbors": ",".join(neighbors)}, [
        (n, params) for n in neighbors
    ]


def step_clustering(view: VertexView, prog_state: dict, params: Params) -> StepResult:
    if "targets" in params:
        if not view.exists():
            return {"hits": "0"}, []
        targets = set(params["targets"].split(","))
        targets.discard(view.handle)
        dsts = {e["dst"] for e in view.edges()}
        return {"hits": str(len(dsts & targets))}, []
    # First hop: enumerate the out-neighborhood and fan out to it.
    if not view.exists():
        return {"neighbors": ""}, []
    neighbors = _neighbors(view, None)
    hops: list[Chunk] = []
    if len(neighbors) >= 2:
        joined = ",".join(neighbors)
        hops = [(n, {"targets": joined}) for n in neighbors]
    return {"neighbors": ",".join(neighbors)}, hops


# -- drivers (run at the submitting gatekeeper) ------------------------------------

RoundItem = tuple[Chunk, Fragment, list[Chunk]]


class GetNodeDriver:
    def __init__(self, start: list[str], params: Params):
        self.start = start

    def first_round(self) -> list[Chunk]:
        return [(self.start[0], {})]

    def on_round(self, items: list[RoundItem]):
        _, fragment, _ = items[0]
        if fragment.get("found") != "true":
            return "done", {"error": "not_found"}
        return "done", {"found": "true", "properties": fragment["properties"], "edges": fragment["edges"]}


class GetEdgesDriver:
    def __init__(self, start: list[str], params: Params, count_only: bool = False):
        self.start = start
        self.params = params
        self.count_only = count_only

    def first_round(self) -> list[Chunk]:
        params: Params = {}
        if "filter" in self.params:
            params["filter"] = self.params["filter"]
        return [(self.start[0], params)]

    def on_round(self, items: list[RoundItem]):
        _, fragment, _ = items[0]
        if fragment.get("found") != "true":
            return "done", {"error": "not_found"}
        edges = fragment["edges"]
        if self.count_only:
            return "done", {"count": str(len(edges.split(",")) if edges else 0)}
        return "done", {"edges": edges}


class ReachabilityDriver:
    """Level-synchronous BFS with a canonical parent rule.

    New vertices discovered in a round get as parent the smallest-handle
    frontier vertex with a qualifying edge to them; the next frontier is the
    sorted set of new vertices.  This pins down one path per snapshot, so the
    result is reproducible across re-executions and matches the reference
    executor exactly.
    """

    def __init__(self, start: list[str], params: Params):
        self.source = start[0]
        self.target = params["to"]
        self.params: Params = {}
        if "edge_property" in params:
            self.params["edge_property"] = params["edge_property"]
        self.parent: dict[str, Optional[str]] = {self.source: None}
        self.frontier = [self.source]

    def first_round(self) -> list[Chunk]:
        return [(self.source, self.params)]

    def _result(self, reachable: bool):
        if not reachable:
            return "done", {"reachable": "false", "path": ""}
        if self.source == self.target:
            return "done", {"reachable": "true", "path": ""}
        path = [self.target]
        while self.parent[path[-1]] is not None:
            path.append(self.parent[path[-1]])
        return "done", {"reachable": "true", "path": ",".join(reversed(path))}

    def on_round(self, items: list[RoundItem]):
        if self.source == self.target:
            exists = items[0][1].get("found") == "true"
            return self._result(exists)
        if items and items[0][0][0] == self.source and items[0][1].get("found") == "false":
            return self._result(False)
        new: dict[str, str] = {}
        for (vertex, _), fragment, _ in items:
            for dst in filter(None, fragment.get("neighbors", "").split(",")):
                if dst not in self.parent and dst not in new:
                    new[dst] = vertex
        self.parent.update(new)
        if self.target in new:
            return self._result(True)
        if not new:
            return self._result(False)
        self.frontier = sorted(new)
        return "continue", [(v, self.params) for v in self.frontier]


class ClusteringDriver:
    def __init__(self, start: list[str], params: Params):
        self.center = start[0]
        self.degree = 0

    def first_round(self) -> list[Chunk]:
        return [(self.center, {})]

    def on_round(self, items: list[RoundItem]):
        if self.degree == 0:
            _, fragment, hops = items[0]
            if "neighbors" not in fragment:
                return "done", {"coefficient": "0"}
            neighbors = [n for n in fragment["neighbors"].split(",") if n]
            self.degree = len(neighbors)
            if self.degree < 2 or not hops:
                return "done", {"coefficient": "0"}
            return "continue", hops
        hits = sum(int(frag.get("hits", "0")) for _, frag, _ in items)
        coeff = Fraction(hits, self.degree * (self.degree - 1))
        return "done", {"coefficient": str(coeff)}


class ProgramDef:
    def __init__(self, name: str, step, driver_factory):
        self.name = name
        self.step = step
        self.driver_factory = driver_factory


_REGISTRY: dict[str, ProgramDef] = {}


def register_program(name: str, step, driver_factory) -> None:
    if name in _REGISTRY:
        raise DuplicateProgram(name)
    _REGISTRY[name] = ProgramDef(name, step, driver_factory)


def get_program(name: str) -> ProgramDef:
    if name not in _REGISTRY:
        raise UnknownProgram(name)
    return _REGISTRY[name]


def list_programs() -> list[str]:
    return sorted(_REGISTRY)


def _register_stock() -> None:
    register_program("get_node", step_get_node, GetNodeDriver)
    register_program("get_edges", step_get_edges, GetEdgesDriver)
    register_program(
        "count_edges",
        step_get_edges,
        lambda start, params: GetEdgesDriver(start, params, count_only=True),
    )
    register_program("reachability", step_reachability, ReachabilityDriver)
    register_program("clustering_coefficient", step_clustering, ClusteringDriver)


_register_stock()
