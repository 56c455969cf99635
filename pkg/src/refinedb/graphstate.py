"""Multi-version property-graph elements.

Writes never mutate in place: creates stamp a creation timestamp, deletes
stamp a tombstone, property writes close the previous version and open a new
one.  The same structures serve as the shard's in-memory graph and as the
backing store's durable vertex payload, so a shard restored from the store is
bit-for-bit the multi-version state it lost.

Visibility at a timestamp T is decided by an order function supplied by the
caller: vector-clock comparison first, with concurrent pairs refined through
the timeline oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional

from .timestamps import VectorTimestamp

# leq(w, t) -> True when write-timestamp w is effectively before-or-equal t.
LeqFn = Callable[[VectorTimestamp, VectorTimestamp], bool]


@dataclass(frozen=True, slots=True)
class Op:
    """One buffered write inside a client transaction."""

    kind: str  # create_vertex | delete_vertex | create_edge | delete_edge |
    #            set_property | delete_property
    handle: str  # vertex handle, or edge handle for edge ops
    src: Optional[str] = None
    dst: Optional[str] = None
    key: Optional[str] = None
    value: Optional[str] = None

    def owner_vertex(self) -> str:
        """The vertex whose record this op lives on (edges live on their source)."""
        if self.kind in ("create_vertex", "delete_vertex"):
            return self.handle
        if self.kind in ("create_edge", "delete_edge"):
            return self.src
        return self.src if self.src is not None else self.handle

    def to_list(self) -> list:
        return [self.kind, self.handle, self.src, self.dst, self.key, self.value]

    @classmethod
    def from_list(cls, raw: list) -> "Op":
        return cls(*raw)


def touched_vertices(ops: list[Op]) -> list[str]:
    """Vertices whose records an op list writes, in first-touch order."""
    seen: dict[str, None] = {}
    for op in ops:
        seen.setdefault(op.owner_vertex(), None)
    return list(seen)


def read_vertices(ops: list[Op]) -> list[str]:
    """Vertices the ops depend on but do not write (edge destinations)."""
    written = set(touched_vertices(ops))
    out: dict[str, None] = {}
    for op in ops:
        if op.kind == "create_edge" and op.dst not in written:
            out.setdefault(op.dst, None)
    return list(out)


@dataclass
class PropertyVersion:
    key: str
    value: str
    created_at: VectorTimestamp
    deleted_at: Optional[VectorTimestamp] = None

    def to_dict(self) -> dict:
        return {
            "k": self.key,
            "v": self.value,
            "c": self.created_at.to_list(),
            "d": self.deleted_at.to_list() if self.deleted_at else None,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "PropertyVersion":
        return cls(
            raw["k"],
            raw["v"],
            VectorTimestamp.from_list(raw["c"]),
            VectorTimestamp.from_list(raw["d"]) if raw["d"] else None,
        )


@dataclass
class EdgeVersion:
    handle: str
    dst: str
    created_at: VectorTimestamp
    deleted_at: Optional[VectorTimestamp] = None
    properties: list[PropertyVersion] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "h": self.handle,
            "dst": self.dst,
            "c": self.created_at.to_list(),
            "d": self.deleted_at.to_list() if self.deleted_at else None,
            "p": [p.to_dict() for p in self.properties],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "EdgeVersion":
        return cls(
            raw["h"],
            raw["dst"],
            VectorTimestamp.from_list(raw["c"]),
            VectorTimestamp.from_list(raw["d"]) if raw["d"] else None,
            [PropertyVersion.from_dict(p) for p in raw["p"]],
        )


@dataclass
class VertexVersions:
    """A vertex record: its own lifetime plus all outgoing edges and properties."""

    handle: str
    created_at: VectorTimestamp
    deleted_at: Optional[VectorTimestamp] = None
    properties: list[PropertyVersion] = field(default_factory=list)
    out_edges: dict[str, EdgeVersion] = field(default_factory=dict)

    # -- current (latest-committed) state, used by gatekeeper validation ------

    def live_now(self) -> bool:
        return self.deleted_at is None

    def live_edge_now(self, ehandle: str) -> bool:
        e = self.out_edges.get(ehandle)
        return e is not None and e.deleted_at is None

    def current_properties(self, ehandle: Optional[str] = None) -> dict[str, str]:
        versions = (
            self.properties if ehandle is None else self.out_edges[ehandle].properties
        )
        return {p.key: p.value for p in versions if p.deleted_at is None}

    # -- snapshot state at a timestamp ----------------------------------------

    def visible_at(self, t: VectorTimestamp, leq: LeqFn) -> bool:
        if not leq(self.created_at, t):
            return False
        return self.deleted_at is None or not leq(self.deleted_at, t)

    def properties_at(
        self, t: VectorTimestamp, leq: LeqFn, ehandle: Optional[str] = None
    ) -> dict[str, str]:
        versions = (
            self.properties if ehandle is None else self.out_edges[ehandle].properties
        )
        out = {}
        for p in versions:
            if leq(p.created_at, t) and (p.deleted_at is None or not leq(p.deleted_at, t)):
                out[p.key] = p.value
        return out

    def edges_at(self, t: VectorTimestamp, leq: LeqFn) -> list[EdgeVersion]:
        out = []
        for eh in sorted(self.out_edges):
            e = self.out_edges[eh]
            if leq(e.created_at, t) and (e.deleted_at is None or not leq(e.deleted_at, t)):
                out.append(e)
        return out

    # -- write application ------------------------------------------------------

    def apply(self, op: Op, ts: VectorTimestamp) -> None:
        """Apply one committed op at ts.  Re-applying the same (op, ts) is a no-op."""
        if op.kind == "delete_vertex":
            if self.deleted_at is None:
                self.deleted_at = ts
        elif op.kind == "create_edge":
            if op.handle not in self.out_edges:
                self.out_edges[op.handle] = EdgeVersion(op.handle, op.dst, ts)
        elif op.kind == "delete_edge":
            e = self.out_edges[op.handle]
            if e.deleted_at is None:
                e.deleted_at = ts
        elif op.kind == "set_property":
            versions = (
                self.properties
                if op.src is None
                else self.out_edges[op.handle].properties
            )
            for p in versions:
                if p.key == op.key and p.deleted_at is None:
                    if p.created_at == ts and p.value == op.value:
                        return  # duplicate delivery
                    p.deleted_at = ts
            versions.append(PropertyVersion(op.key, op.value, ts))
        elif op.kind == "delete_property":
            versions = (
                self.properties
                if op.src is None
                else self.out_edges[op.handle].properties
            )
            for p in versions:
                if p.key == op.key and p.deleted_at is None:
                    p.deleted_at = ts
        elif op.kind == "create_vertex":
            pass  # creation is the record's construction
        else:
            raise ValueError(f"unknown op kind {op.kind}")

    # -- GC -----------------------------------------------------------------------

    def gc_versions(self, threshold: VectorTimestamp, strictly_before: LeqFn) -> int:
        """Physically drop versions tombstoned strictly before threshold."""
        reclaimed = 0

        def sweep(versions: list[PropertyVersion]) -> list[PropertyVersion]:
            nonlocal reclaimed
            keep = []
            for p in versions:
                if p.deleted_at is not None and strictly_before(p.deleted_at, threshold):
                    reclaimed += 1
                else:
                    keep.append(p)
            return keep

        self.properties = sweep(self.properties)
        doomed_edges = []
        for eh, e in self.out_edges.items():
            e.properties = sweep(e.properties)
            if e.deleted_at is not None and strictly_before(e.deleted_at, threshold):
                doomed_edges.append(eh)
        for eh in doomed_edges:
            del self.out_edges[eh]
            reclaimed += 1
        return reclaimed

    # -- serialization ---------------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "h": self.handle,
            "c": self.created_at.to_list(),
            "d": self.deleted_at.to_list() if self.deleted_at else None,
            "p": [p.to_dict() for p in self.properties],
            "e": {eh: e.to_dict() for eh, e in sorted(self.out_edges.items())},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "VertexVersions":
        return cls(
            raw["h"],
            VectorTimestamp.from_list(raw["c"]),
            VectorTimestamp.from_list(raw["d"]) if raw["d"] else None,
            [PropertyVersion.from_dict(p) for p in raw["p"]],
            {eh: EdgeVersion.from_dict(e) for eh, e in raw["e"].items()},
        )

    def to_bytes(self) -> bytes:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, data: bytes) -> "VertexVersions":
        return cls.from_dict(json.loads(data.decode()))


class InvalidOperation(Exception):
    """A semantically invalid write (delete of a deleted vertex, dangling edge...)."""


def validate_and_apply(
    records: dict[str, Optional[VertexVersions]], ops: list[Op], ts: VectorTimestamp
) -> dict[str, Optional[VertexVersions]]:
    """Check a transaction's ops against current records and produce new ones.

    `records` maps every touched/read vertex handle to its current record
    (None when absent).  Mutates copies, never the inputs.  Raises
    InvalidOperation on the first semantic violation, mirroring abort-on-store
    behavior.
    """
    work: dict[str, Optional[VertexVersions]] = {
        h: (VertexVersions.from_dict(r.to_dict()) if r is not None else None)
        for h, r in records.items()
    }

    def live(h: str) -> Optional[VertexVersions]:
        v = work.get(h)
        return v if v is not None and v.live_now() else None

    for op in ops:
        if op.kind == "create_vertex":
            if work.get(op.handle) is not None:
                raise InvalidOperation(f"vertex handle {op.handle!r} already used")
            work[op.handle] = VertexVersions(op.handle, ts)
        elif op.kind == "delete_vertex":
            v = live(op.handle)
            if v is None:
                raise InvalidOperation(f"delete of missing/deleted vertex {op.handle!r}")
            v.apply(op, ts)
        elif op.kind == "create_edge":
            v = live(op.src)
            if v is None:
                raise InvalidOperation(f"edge source {op.src!r} missing")
            if live(op.dst) is None:
                raise InvalidOperation(f"edge destination {op.dst!r} missing")
            if op.handle in v.out_edges:
                raise InvalidOperation(f"edge handle {op.handle!r} already used")
            v.apply(op, ts)
        elif op.kind == "delete_edge":
            v = live(op.src)
            if v is None or not v.live_edge_now(op.handle):
                raise InvalidOperation(f"delete of missing/deleted edge {op.handle!r}")
            v.apply(op, ts)
        elif op.kind in ("set_property", "delete_property"):
            owner = op.src if op.src is not None else op.handle
            v = live(owner)
            if v is None:
                raise InvalidOperation(f"property target {owner!r} missing")
            if op.src is not None and not v.live_edge_now(op.handle):
                raise InvalidOperation(f"property edge {op.handle!r} missing")
            if op.kind == "delete_property":
                ehandle = op.handle if op.src is not None else None
                if op.key not in v.current_properties(ehandle):
                    raise InvalidOperation(f"property {op.key!r} not set")
            v.apply(op, ts)
        else:
            raise InvalidOperation(f"unknown op kind {op.kind!r}")
    return work
