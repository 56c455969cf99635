"""Gatekeeper server core: the front door for every client request.

Assigns refinable timestamps, executes write transactions against the
backing store (optimistic validation plus the per-vertex last-update
timestamp check), announces its clock to peers every tau, keeps every
shard queue alive with NOPs, and drives node-program rounds.

Like ShardCore this is a pure state machine; transports feed handlers and
deliver the outbox.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .graphstate import (
    InvalidOperation,
    Op,
    read_vertices,
    touched_vertices,
    validate_and_apply,
)
from .programs import Chunk, get_program, UnknownProgram
from .shard import NopItem, ProgramItem, TxItem
from .store import BackingStore, StoredVertex, shard_for
from .timestamps import Order, VectorTimestamp


@dataclass
class GatekeeperConfig:
    n_gatekeepers: int
    n_shards: int
    tau_ms: Optional[float] = 10.0  # None disables announces entirely
    nop_ms: float = 1.0
    gc_ms: Optional[float] = 50.0  # None disables garbage collection


@dataclass
class ProgramRun:
    program_id: str
    name: str
    ts: VectorTimestamp
    driver: object
    client: object  # opaque reply address
    corr_id: int
    round_no: int = 0
    expected: int = 0
    items: dict[int, tuple] = field(default_factory=dict)


class GatekeeperCore:
    def __init__(self, gk_id: int, store: BackingStore, config: GatekeeperConfig, epoch: int = 0):
        self.gk_id = gk_id
        self.store = store
        self.config = config
        self.epoch = epoch
        self.clock = VectorTimestamp.zero(config.n_gatekeepers, gk_id, epoch)
        self.shard_seq = {s: 1 for s in range(config.n_shards)}
        self.ongoing: dict[str, ProgramRun] = {}
        self._next_pid = 0
        self._last_announce = 0.0
        self._last_send = {s: 0.0 for s in range(config.n_shards)}
        self._last_gc = 0.0
        self.announces_sent = 0

    # -- timestamps -------------------------------------------------------------

    def assign_timestamp(self) -> VectorTimestamp:
        self.clock = self.clock.increment_local()
        return self.clock

    def handle_announce(self, ts: VectorTimestamp) -> None:
        if ts.epoch != self.epoch:
            return  # stale announce from a previous epoch
        self.clock = self.clock.merge(ts)

    # -- shard channel helpers ----------------------------------------------------

    def _ship(self, shard: int, item, now: float) -> dict:
        seq = self.shard_seq[shard]
        self.shard_seq[shard] = seq + 1
        self._last_send[shard] = now
        return {
            "type": "shard_item",
            "to": ("shard", shard),
            "gk": self.gk_id,
            "epoch": self.epoch,
            "seq": seq,
            "item": item,
        }

    # -- interactive reads ------------------------------------------------------------

    def handle_read(self, handle: str) -> tuple[dict, str, int]:
        """Proxy a client read to the backing store.

        Returns (current live view of the vertex, store key, observed version)
        so the client can fold the version into its commit-time read set.
        """
        key = BackingStore.vertex_key(handle)
        txn = self.store.txn_begin()
        raw, version = self.store.txn_read(txn, key)
        if raw is None:
            return {"exists": False}, key, version
        record = StoredVertex.from_bytes(handle, raw)
        payload = record.payload
        if not payload.live_now():
            return {"exists": False}, key, version
        view = {
            "exists": True,
            "properties": payload.current_properties(),
            "edges": {
                eh: {"dst": e.dst, "properties": payload.current_properties(eh)}
                for eh, e in payload.out_edges.items()
                if e.deleted_at is None
            },
        }
        return view, key, version

    # -- write transactions --------------------------------------------------------------

    def commit_transaction(
        self,
        txid: str,
        ops: list[Op],
        read_versions: dict[str, int],
        now: float = 0.0,
    ) -> tuple[dict, list[dict]]:
        """Execute a buffered client transaction.  Returns (result, outbox)."""
        prior = self.store.get(BackingStore.txn_outcome_key(txid))
        if prior is not None:
            # Retry of a transaction that already committed (response was
            # lost in a failure); do not double-apply.
            doc = json.loads(prior.decode())
            return {
                "status": "committed",
                "ts": VectorTimestamp.from_list(doc["ts"]),
                "replayed": True,
            }, []

        ts = self.assign_timestamp()
        txn = self.store.txn_begin()
        txn.reads.update(read_versions)

        touched = touched_vertices(ops)
        observed = read_vertices(ops)
        records: dict[str, Optional[StoredVertex]] = {}
        for handle in touched + observed:
            raw, _version = self.store.txn_read(txn, BackingStore.vertex_key(handle))
            records[handle] = StoredVertex.from_bytes(handle, raw) if raw else None

        try:
            new_payloads = validate_and_apply(
                {h: (r.payload if r else None) for h, r in records.items()}, ops, ts
            )
        except InvalidOperation as exc:
            return {"status": "aborted", "reason": "invalid_operation", "detail": str(exc)}, []

        for handle, record in records.items():
            if record is None:
                continue
            if record.last_update_ts.compare(ts) is not Order.BEFORE:
                # A concurrent committer won the vertex with a timestamp we do
                # not dominate.  Fold its clock into ours so the client's
                # retry draws a strictly larger timestamp.
                if record.last_update_ts.epoch == self.epoch:
                    self.clock = self.clock.merge(record.last_update_ts)
                return {"status": "aborted", "reason": "stale_timestamp"}, []

        if ops:
            for handle in touched:
                record = records.get(handle)
                shard = record.shard if record else shard_for(handle, self.config.n_shards)
                stored = StoredVertex(handle, new_payloads[handle], ts, shard)
                self.store.txn_write(txn, BackingStore.vertex_key(handle), stored.to_bytes())
                if record is None:
                    self.store.txn_write(
                        txn, BackingStore.mapping_key(handle), str(shard).encode()
                    )
            self.store.txn_write(
                txn,
                BackingStore.txn_outcome_key(txid),
                json.dumps({"status": "committed", "ts": ts.to_list()}).encode(),
            )

        if self.store.txn_commit(txn) == "conflict":
            return {"status": "aborted", "reason": "conflict"}, []

        outbox = []
        if ops:
            by_shard: dict[int, list[Op]] = {}
            for op in ops:
                handle = op.owner_vertex()
                record = records.get(handle)
                shard = record.shard if record else shard_for(handle, self.config.n_shards)
                by_shard.setdefault(shard, []).append(op)
            for shard, shard_ops in sorted(by_shard.items()):
                outbox.append(self._ship(shard, TxItem(ts, tuple(shard_ops), txid), now))
        return {"status": "committed", "ts": ts}, outbox

    # -- node programs --------------------------------------------------------------------

    def submit_node_program(
        self,
        name: str,
        start: list[str],
        params: dict[str, str],
        client,
        corr_id: int,
        now: float = 0.0,
    ) -> tuple[Optional[dict], list[dict]]:
        """Returns (immediate error reply or None, outbox)."""
        try:
            prog = get_program(name)
        except UnknownProgram:
            return {"error": "unknown_program"}, []
        ts = self.assign_timestamp()
        pid = f"p{self.epoch}.{self.gk_id}.{self._next_pid}"
        self._next_pid += 1
        run = ProgramRun(pid, name, ts, prog.driver_factory(start, params), client, corr_id)
        self.ongoing[pid] = run
        chunks = run.driver.first_round()
        return None, self._dispatch_round(run, chunks, now)

    def _dispatch_round(self, run: ProgramRun, chunks: list[Chunk], now: float) -> list[dict]:
        run.expected = len(chunks)
        run.items = {}
        by_shard: dict[int, list] = {}
        for idx, (vertex, params) in enumerate(chunks):
            shard = shard_for(vertex, self.config.n_shards)
            by_shard.setdefault(shard, []).append(
                (idx, vertex, tuple(sorted(params.items())))
            )
        out = []
        for shard, shard_chunks in sorted(by_shard.items()):
            item = ProgramItem(
                run.ts, run.program_id, run.name, self.gk_id, run.round_no,
                tuple(shard_chunks),
            )
            out.append(self._ship(shard, item, now))
        return out

    def handle_fragments(self, msg: dict, now: float = 0.0) -> list[dict]:
        run = self.ongoing.get(msg["program_id"])
        if run is None or msg["round_no"] != run.round_no:
            return []  # late fragments from an aborted or finished program
        for chunk_idx, vertex, params, fragment, hops in msg["items"]:
            run.items[chunk_idx] = ((vertex, params), fragment, list(hops))
        if len(run.items) < run.expected:
            return []
        ordered = [run.items[i] for i in sorted(run.items)]
        verdict, payload = run.driver.on_round(ordered)
        if verdict == "continue":
            run.round_no += 1
            return self._dispatch_round(run, payload, now)
        del self.ongoing[run.program_id]
        reply = {
            "type": "program_result",
            "to": run.client,
            "corr_id": run.corr_id,
            "program_id": run.program_id,
            "ts": run.ts,
            "result": payload,
        }
        release = [
            {"type": "program_done", "to": ("shard", s), "program_id": run.program_id}
            for s in range(self.config.n_shards)
        ]
        return [reply] + release

    # -- periodic work ----------------------------------------------------------------------

    def oldest_ongoing(self) -> VectorTimestamp:
        if self.ongoing:
            return min((r.ts for r in self.ongoing.values()), key=lambda t: t.sort_key())
        return self.clock

    def tick(self, now: float) -> list[dict]:
        out: list[dict] = []
        tau = self.config.tau_ms
        if tau is not None and now - self._last_announce >= tau:
            self._last_announce = now
            for peer in range(self.config.n_gatekeepers):
                if peer == self.gk_id:
                    continue
                self.announces_sent += 1
                out.append(
                    {
                        "type": "announce",
                        "to": ("gatekeeper", peer),
                        "ts": self.clock,
                    }
                )
        nop_ts = None
        for shard in range(self.config.n_shards):
            if now - self._last_send[shard] >= self.config.nop_ms:
                if nop_ts is None:
                    nop_ts = self.assign_timestamp()
                out.append(self._ship(shard, NopItem(nop_ts), now))
        if self.config.gc_ms is not None and now - self._last_gc >= self.config.gc_ms:
            self._last_gc = now
            threshold = self.oldest_ongoing()
            for shard in range(self.config.n_shards):
                out.append(
                    {
                        "type": "gc_threshold",
                        "to": ("shard", shard),
                        "gk": self.gk_id,
                        "ts": threshold,
                    }
                )
            out.append(
                {"type": "gc_threshold", "to": ("oracle", 0), "gk": self.gk_id, "ts": threshold}
            )
        return out

    # -- epoch transitions -------------------------------------------------------------------

    def start_epoch(self, epoch: int) -> list[dict]:
        """Adopt a new view: restart the vector clock, reset channels, abort
        ongoing programs so clients resubmit with fresh timestamps."""
        self.epoch = epoch
        self.clock = VectorTimestamp.zero(self.config.n_gatekeepers, self.gk_id, epoch)
        self.shard_seq = {s: 1 for s in range(self.config.n_shards)}
        self._last_send = {s: 0.0 for s in self._last_send}
        out = []
        for run in self.ongoing.values():
            out.append(
                {
                    "type": "program_result",
                    "to": run.client,
                    "corr_id": run.corr_id,
                    "program_id": run.program_id,
                    "ts": run.ts,
                    "result": {"error": "epoch_change"},
                }
            )
        self.ongoing.clear()
        return out
