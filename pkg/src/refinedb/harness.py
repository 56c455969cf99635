"""Scenario harness: wires cores into the simulation runtime.

Builds a whole cluster (store, oracle, gatekeepers, shards, manager,
closed-loop clients) inside one deterministic `Simulator`, runs a
workload, and returns the operation history plus coordination counters.
The history feeds the strict-serializability checker; the counters feed
the tau sweep and scaling studies.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from typing import Callable, Optional

from .cluster import ManagerCore
from .gatekeeper import GatekeeperConfig, GatekeeperCore
from .graphstate import Op, VertexVersions
from .oracle import TimelineOracle
from .programs import get_program
from .runtime import Address, Simulator
from .shard import ShardCore
from .store import BackingStore, StoredVertex, shard_for
from .timestamps import VectorTimestamp


# ---------------------------------------------------------------------------
# configuration / results
# ---------------------------------------------------------------------------


@dataclass
class ScenarioConfig:
    seed: int = 0
    n_gatekeepers: int = 2
    n_shards: int = 2
    n_clients: int = 4
    duration_ms: float = 500.0
    drain_ms: float = 300.0
    tau_ms: Optional[float] = 10.0
    nop_ms: float = 1.0
    gc_ms: Optional[float] = 50.0
    think_ms: float = 0.5
    client_timeout_ms: float = 120.0
    retry_backoff_ms: float = 20.0
    heartbeat_ms: float = 100.0
    failure_timeout_ms: float = 500.0
    # Constant-latency FIFO fabric: with a fixed delay, arrival order at every
    # shard equals ship order, so the arrival-aware refinement rules preserve
    # real-time order exactly.  Under jittery delivery the same guarantee
    # would need commit acknowledgements before answering clients.
    latency_ms: tuple[float, float] = (0.25, 0.25)
    workload: str = "readmix:0.8"
    initial_vertices: tuple[str, ...] = ()
    initial_edges: tuple[tuple[str, str, str], ...] = ()  # (ehandle, src, dst)
    faults: tuple[tuple[str, int, float], ...] = ()  # (kind, index, kill_at_ms)
    data_dir: Optional[str] = None
    ops_per_client: Optional[int] = None  # stop each client after N operations


@dataclass
class HistoryRecord:
    client: int
    opid: int
    inv: float
    resp: float
    kind: str  # "tx" | "program"
    payload: dict
    result: dict

    def to_line(self) -> str:
        return "\t".join(
            [
                str(self.client),
                str(self.opid),
                repr(self.inv),
                repr(self.resp),
                self.kind,
                json.dumps(self.payload, sort_keys=True),
                json.dumps(self.result, sort_keys=True),
            ]
        )

    @classmethod
    def from_line(cls, line: str) -> "HistoryRecord":
        client, opid, inv, resp, kind, payload, result = line.rstrip("\n").split("\t")
        return cls(
            int(client), int(opid), float(inv), float(resp), kind,
            json.loads(payload), json.loads(result),
        )


class HistoryLog:
    def __init__(self) -> None:
        self.records: list[HistoryRecord] = []

    def append(self, rec: HistoryRecord) -> None:
        self.records.append(rec)

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            for rec in self.records:
                f.write(rec.to_line() + "\n")

    @classmethod
    def load(cls, path: str) -> "HistoryLog":
        log = cls()
        with open(path) as f:
            for line in f:
                if line.strip():
                    log.append(HistoryRecord.from_line(line))
        return log


@dataclass
class Counters:
    announces: int = 0
    oracle_calls: int = 0
    commits: int = 0
    aborts: dict[str, int] = field(default_factory=dict)
    programs_ok: int = 0
    commit_latencies: list[float] = field(default_factory=list)
    program_latencies: list[float] = field(default_factory=list)

    @property
    def ops(self) -> int:
        return self.commits + sum(self.aborts.values()) + self.programs_ok

    def mean_latency(self) -> float:
        samples = self.commit_latencies + self.program_latencies
        return sum(samples) / len(samples) if samples else 0.0

    def abort_rate(self) -> float:
        attempts = self.commits + sum(self.aborts.values())
        return sum(self.aborts.values()) / attempts if attempts else 0.0


@dataclass
class ScenarioResult:
    cfg: ScenarioConfig
    history: HistoryLog
    counters: Counters
    initial_snapshot: dict
    sim: Simulator
    store: BackingStore
    oracle: "CountingOracle"
    gatekeepers: dict[int, "GatekeeperActor"]
    shards: dict[int, "ShardActor"]
    manager: ManagerCore


# ---------------------------------------------------------------------------
# oracle service wrapper
# ---------------------------------------------------------------------------


class CountingOracle:
    """Adapts TimelineOracle to the shard-facing client protocol and counts
    ordering requests (event registration is bookkeeping, not coordination)."""

    def __init__(self) -> None:
        self.oracle = TimelineOracle()
        self.order_calls = 0
        self._gc_inputs: dict[int, VectorTimestamp] = {}

    def ensure_event(self, ts: VectorTimestamp) -> None:
        self.oracle.create_event(ts)

    def order_or_assign(self, pairs, pref):
        self.order_calls += 1
        return self.oracle.order_or_assign(pairs, pref)

    def query(self, a: VectorTimestamp, b: VectorTimestamp):
        self.order_calls += 1
        return self.oracle.query_order(a, b)

    def note_gc(self, gk: int, ts: VectorTimestamp, n_gatekeepers: int) -> int:
        self._gc_inputs[gk] = ts
        epoch = max(t.epoch for t in self._gc_inputs.values())
        current = [t for t in self._gc_inputs.values() if t.epoch == epoch]
        if len(current) < n_gatekeepers:
            return 0
        clocks = tuple(
            min(t.clocks[i] for t in current) for i in range(len(current[0].clocks))
        )
        return self.oracle.gc_events(VectorTimestamp(epoch, 0, clocks))


# ---------------------------------------------------------------------------
# workload generators
# ---------------------------------------------------------------------------


class GraphModel:
    """Client-side view of handles that exist, fed by observed commits."""

    def __init__(self, vertices, edges) -> None:
        self.vertices = list(vertices)
        self.edges = {eh: (src, dst) for eh, src, dst in edges}
        self._counter = 0

    def new_edge_handle(self, client: int) -> str:
        self._counter += 1
        return f"we{client}x{self._counter}"

    def random_vertex(self, rng: random.Random) -> str:
        return rng.choice(self.vertices)

    def random_edge(self, rng: random.Random) -> Optional[tuple[str, str, str]]:
        if not self.edges:
            return None
        eh = rng.choice(sorted(self.edges))
        src, dst = self.edges[eh]
        return eh, src, dst

    def note_commit(self, ops: list[Op]) -> None:
        for op in ops:
            if op.kind == "create_edge":
                self.edges[op.handle] = (op.src, op.dst)
            elif op.kind == "delete_edge":
                self.edges.pop(op.handle, None)
            elif op.kind == "create_vertex":
                if op.handle not in self.vertices:
                    self.vertices.append(op.handle)


def _read_op(rng: random.Random, model: GraphModel, mix: tuple[float, float]) -> dict:
    v = model.random_vertex(rng)
    q = rng.random()
    if q < mix[0]:
        return {"kind": "program", "name": "get_edges", "start": [v], "params": {}}
    if q < mix[0] + mix[1]:
        return {"kind": "program", "name": "count_edges", "start": [v], "params": {}}
    return {"kind": "program", "name": "get_node", "start": [v], "params": {}}


def _write_op(rng: random.Random, model: GraphModel, client: int, create_frac: float) -> dict:
    if rng.random() < create_frac or not model.edges:
        src = model.random_vertex(rng)
        dst = model.random_vertex(rng)
        eh = model.new_edge_handle(client)
        return {"kind": "tx", "ops": [Op("create_edge", eh, src, dst)]}
    eh, src, dst = model.random_edge(rng)
    return {"kind": "tx", "ops": [Op("delete_edge", eh, src, dst)]}


def make_workload(spec: str) -> Callable[[random.Random, GraphModel, int], dict]:
    """Build a sampler from a workload spec string.

    tao          social-graph operation mix (99.8% reads)
    readmix:<r>  r fraction of reads, rest edge writes plus some
                 read-modify-write property updates
    traverse     mostly multi-hop programs (reachability, clustering)
    """
    if spec == "tao":

        def sample(rng: random.Random, model: GraphModel, client: int) -> dict:
            if rng.random() < 0.998:
                return _read_op(rng, model, (0.594, 0.117))
            return _write_op(rng, model, client, 0.8)

        return sample

    if spec.startswith("readmix:"):
        read_frac = float(spec.split(":", 1)[1])

        def sample(rng: random.Random, model: GraphModel, client: int) -> dict:
            if rng.random() < read_frac:
                return _read_op(rng, model, (0.4, 0.2))
            q = rng.random()
            if q < 0.25:
                # read-modify-write: observe a vertex, then bump a property on it
                v = model.random_vertex(rng)
                return {
                    "kind": "tx",
                    "read": v,
                    "ops": [Op("set_property", v, key="touched_by", value=f"c{client}")],
                }
            return _write_op(rng, model, client, 0.6)

        return sample

    if spec == "traverse":

        def sample(rng: random.Random, model: GraphModel, client: int) -> dict:
            q = rng.random()
            if q < 0.45:
                return {
                    "kind": "program",
                    "name": "reachability",
                    "start": [model.random_vertex(rng)],
                    "params": {"to": model.random_vertex(rng)},
                }
            if q < 0.9:
                return {
                    "kind": "program",
                    "name": "clustering_coefficient",
                    "start": [model.random_vertex(rng)],
                    "params": {},
                }
            if q < 0.95:
                return _read_op(rng, model, (0.0, 0.0))
            return _write_op(rng, model, client, 0.7)

        return sample

    raise ValueError(f"unknown workload: {spec}")


# ---------------------------------------------------------------------------
# actors
# ---------------------------------------------------------------------------


class GatekeeperActor:
    def __init__(self, scn: "Scenario", core: GatekeeperCore):
        self.scn = scn
        self.sim = scn.sim
        self.core = core
        self.addr: Address = ("gatekeeper", core.gk_id)
        self.quiesced = False
        self._handle = self.handle

    def install(self) -> None:
        self.sim.register(self.addr, self._handle)
        self._loop(self.scn.cfg.nop_ms)
        self._heartbeat(self.scn.cfg.heartbeat_ms)

    def _alive(self) -> bool:
        return self.sim.handlers.get(self.addr) is self._handle and self.addr not in self.sim.crashed

    def _loop(self, period: float) -> None:
        if not self._alive():
            return
        self.sim.route(self.core.tick(self.sim.now))
        self.sim.after(period, lambda: self._loop(period))

    def _heartbeat(self, period: float) -> None:
        if not self._alive():
            return
        self.sim.send(
            ("manager", 0),
            {"type": "heartbeat", "kind": "gatekeeper", "index": self.core.gk_id},
        )
        self.sim.after(period, lambda: self._heartbeat(period))

    def handle(self, msg: dict) -> Optional[list]:
        t = msg["type"]
        if t == "announce":
            self.core.handle_announce(msg["ts"])
            return None
        if t == "read":
            view, key, version = self.core.handle_read(msg["handle"])
            self.sim.send(
                msg["client"],
                {"type": "read_reply", "corr": msg["corr"], "view": view,
                 "key": key, "version": version},
            )
            return None
        if t == "commit":
            if self.quiesced:
                result: dict = {"status": "aborted", "reason": "unavailable"}
                outbox: list = []
            else:
                result, outbox = self.core.commit_transaction(
                    msg["txid"], msg["ops"], msg["read_versions"], self.sim.now
                )
            self.sim.send(
                msg["client"], {"type": "commit_reply", "corr": msg["corr"], "result": result}
            )
            return outbox
        if t == "submit_program":
            if self.quiesced:
                self.sim.send(
                    msg["client"],
                    {"type": "program_result", "corr_id": msg["corr"],
                     "result": {"error": "unavailable"}},
                )
                return None
            err, outbox = self.core.submit_node_program(
                msg["name"], msg["start"], msg["params"], msg["client"], msg["corr"],
                self.sim.now,
            )
            if err is not None:
                self.sim.send(
                    msg["client"],
                    {"type": "program_result", "corr_id": msg["corr"], "result": err},
                )
            return outbox
        if t == "fragments":
            return self.core.handle_fragments(msg, self.sim.now)
        if t == "prepare":
            self.quiesced = True
            self.sim.send(
                ("manager", 0),
                {"type": "prepare_ack", "gk": self.core.gk_id, "epoch": msg["epoch"]},
            )
            return None
        if t == "view":
            outbox = self.core.start_epoch(msg["epoch"])
            self.quiesced = False
            return outbox
        return None


class ShardActor:
    def __init__(self, scn: "Scenario", core: ShardCore):
        self.scn = scn
        self.sim = scn.sim
        self.core = core
        self.addr: Address = ("shard", core.shard_id)
        self._handle = self.handle

    def install(self) -> None:
        self.sim.register(self.addr, self._handle)
        self._heartbeat(self.scn.cfg.heartbeat_ms)

    def _alive(self) -> bool:
        return self.sim.handlers.get(self.addr) is self._handle and self.addr not in self.sim.crashed

    def _heartbeat(self, period: float) -> None:
        if not self._alive():
            return
        self.sim.send(
            ("manager", 0),
            {"type": "heartbeat", "kind": "shard", "index": self.core.shard_id},
        )
        self.sim.after(period, lambda: self._heartbeat(period))

    def handle(self, msg: dict) -> Optional[list]:
        t = msg["type"]
        if t == "shard_item":
            self.core.receive(msg["gk"], msg["epoch"], msg["seq"], msg["item"])
            return self.core.pump()
        if t == "program_done":
            self.core.release_program_state(msg["program_id"])
            return None
        if t == "gc_threshold":
            self.core.note_gc_threshold(msg["gk"], msg["ts"])
            return None
        if t == "view":
            restored = self.scn.store.restore_shard(self.core.shard_id)
            self.core.start_epoch(msg["epoch"], restored)
            return self.core.pump()
        return None


class OracleActor:
    """Receives GC thresholds; ordering traffic is a synchronous service call."""

    def __init__(self, scn: "Scenario"):
        self.scn = scn

    def handle(self, msg: dict) -> None:
        if msg["type"] == "gc_threshold":
            self.scn.oracle.note_gc(msg["gk"], msg["ts"], self.scn.cfg.n_gatekeepers)


class ManagerActor:
    def __init__(self, scn: "Scenario", core: ManagerCore):
        self.scn = scn
        self.sim = scn.sim
        self.core = core

    def install(self) -> None:
        self.sim.register(("manager", 0), self.handle)
        self.sim.every(self.scn.cfg.heartbeat_ms, self._check)

    def _check(self) -> None:
        self._route(self.core.check(self.sim.now))

    def _route(self, messages: list) -> None:
        if any(m["type"] == "view" for m in messages):
            self.scn.respawn_dead(self.core.epoch)
        self.sim.route(messages)

    def handle(self, msg: dict) -> None:
        t = msg["type"]
        if t == "heartbeat":
            self.core.handle_heartbeat(msg["kind"], msg["index"], self.sim.now)
        elif t == "prepare_ack":
            self._route(self.core.handle_prepare_ack(msg["gk"], msg["epoch"]))


class ClientActor:
    """Closed-loop client: one operation in flight, retries on timeout."""

    def __init__(self, scn: "Scenario", cid: int):
        self.scn = scn
        self.sim = scn.sim
        self.cid = cid
        self.addr: Address = ("client", cid)
        self.gk: Address = ("gatekeeper", cid % scn.cfg.n_gatekeepers)
        self.corr = 0
        self.opid = 0
        self.cur: Optional[dict] = None
        self.sim.register(self.addr, self.handle)

    def start(self, delay: float) -> None:
        self.sim.after(delay, self.next_op)

    def next_op(self) -> None:
        budget = self.scn.cfg.ops_per_client
        if self.sim.now >= self.scn.cfg.duration_ms or (
            budget is not None and self.opid >= budget
        ):
            self.scn.client_stopped()
            return
        desc = self.scn.sampler(self.sim.rng, self.scn.model, self.cid)
        self.opid += 1
        self.cur = {
            "desc": desc,
            "opid": self.opid,
            "inv": self.sim.now,
            "phase": None,
            "reads": {},
            "read_versions": {},
            "txid": f"c{self.cid}.{self.opid}",
            "corrs": set(),
        }
        self.dispatch()

    def dispatch(self) -> None:
        cur = self.cur
        if cur is None:
            return
        self.corr += 1
        cur["corrs"].add(self.corr)
        desc = cur["desc"]
        if desc["kind"] == "program":
            self.sim.send(
                self.gk,
                {"type": "submit_program", "name": desc["name"], "start": desc["start"],
                 "params": desc["params"], "corr": self.corr, "client": self.addr},
            )
        elif desc.get("read") and cur["phase"] != "commit":
            cur["phase"] = "read"
            self.sim.send(
                self.gk,
                {"type": "read", "handle": desc["read"], "corr": self.corr,
                 "client": self.addr},
            )
        else:
            cur["phase"] = "commit"
            self.sim.send(
                self.gk,
                {"type": "commit", "txid": cur["txid"], "ops": desc["ops"],
                 "read_versions": cur["read_versions"], "corr": self.corr,
                 "client": self.addr},
            )
        opid = cur["opid"]
        corr = self.corr
        self.sim.after(
            self.scn.cfg.client_timeout_ms, lambda: self._on_timeout(opid, corr)
        )

    def _on_timeout(self, opid: int, corr: int) -> None:
        cur = self.cur
        if cur is not None and cur["opid"] == opid and corr == self.corr:
            self.dispatch()  # still waiting on this attempt; retry

    def _finish(self, kind: str, payload: dict, result: dict) -> None:
        cur = self.cur
        self.cur = None
        self.scn.history.append(
            HistoryRecord(self.cid, cur["opid"], cur["inv"], self.sim.now, kind, payload, result)
        )
        self.sim.after(self.scn.cfg.think_ms, self.next_op)

    def handle(self, msg: dict) -> None:
        cur = self.cur
        if cur is None:
            return
        corr = msg.get("corr", msg.get("corr_id"))
        if corr not in cur["corrs"]:
            return  # reply for a previous operation; drop
        t = msg["type"]
        desc = cur["desc"]
        if t == "read_reply":
            if cur["phase"] != "read":
                return
            cur["reads"][desc["read"]] = msg["view"]
            cur["read_versions"][msg["key"]] = msg["version"]
            cur["phase"] = "commit"
            self.dispatch()
            return
        if t == "commit_reply":
            result = msg["result"]
            if result.get("reason") == "unavailable":
                self.sim.after(self.scn.cfg.retry_backoff_ms, self.dispatch)
                return
            payload = {
                "txid": cur["txid"],
                "ops": [op.to_list() for op in desc["ops"]],
                "reads": cur["reads"],
            }
            out = {"status": result["status"]}
            if result["status"] == "committed":
                out["ts"] = result["ts"].to_list()
                self.scn.model.note_commit(desc["ops"])
                self.scn.counters.commits += 1
                self.scn.counters.commit_latencies.append(self.sim.now - cur["inv"])
            else:
                out["reason"] = result["reason"]
                tally = self.scn.counters.aborts
                tally[result["reason"]] = tally.get(result["reason"], 0) + 1
            self._finish("tx", payload, out)
            return
        if t == "program_result":
            result = dict(msg["result"])
            if result.get("error") in ("epoch_change", "unavailable"):
                cur["corrs"].clear()
                self.sim.after(self.scn.cfg.retry_backoff_ms, self.dispatch)
                return
            if "ts" in msg:
                result["ts"] = msg["ts"].to_list()
            payload = {"name": desc["name"], "start": desc["start"], "params": desc["params"]}
            self.scn.counters.programs_ok += 1
            self.scn.counters.program_latencies.append(self.sim.now - cur["inv"])
            self._finish("program", payload, result)
            return


# ---------------------------------------------------------------------------
# scenario assembly
# ---------------------------------------------------------------------------


def initial_snapshot(cfg: ScenarioConfig) -> dict:
    snap: dict = {}
    for v in cfg.initial_vertices:
        snap[v] = {"properties": {}, "edges": {}}
    for eh, src, dst in cfg.initial_edges:
        snap[src]["edges"][eh] = {"dst": dst, "properties": {}}
    return snap


class Scenario:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.sim = Simulator(cfg.seed, cfg.latency_ms)
        self.store = BackingStore(cfg.data_dir)
        self.oracle = CountingOracle()
        self.history = HistoryLog()
        self.counters = Counters()
        self.sampler = make_workload(cfg.workload)
        self.model = GraphModel(cfg.initial_vertices, cfg.initial_edges)
        self.manager = ManagerCore(
            cfg.n_gatekeepers, cfg.n_shards, cfg.heartbeat_ms, cfg.failure_timeout_ms
        )
        self._stopped_clients = 0
        gk_cfg = GatekeeperConfig(
            cfg.n_gatekeepers, cfg.n_shards, cfg.tau_ms, cfg.nop_ms, cfg.gc_ms
        )
        self.gk_cfg = gk_cfg
        self.gatekeepers = {
            g: GatekeeperActor(self, GatekeeperCore(g, self.store, gk_cfg))
            for g in range(cfg.n_gatekeepers)
        }
        self.shards = {
            s: ShardActor(self, ShardCore(s, cfg.n_gatekeepers, self.oracle))
            for s in range(cfg.n_shards)
        }
        self._bootstrap()

    def _bootstrap(self) -> None:
        """Install the initial graph directly in the store and shards with the
        zero timestamp, which every later timestamp dominates."""
        cfg = self.cfg
        ts0 = VectorTimestamp.zero(cfg.n_gatekeepers, 0, 0)
        by_vertex: dict[str, list[Op]] = {
            v: [Op("create_vertex", v)] for v in cfg.initial_vertices
        }
        for eh, src, dst in cfg.initial_edges:
            by_vertex[src].append(Op("create_edge", eh, src, dst))
        txn = self.store.txn_begin()
        for v, ops in by_vertex.items():
            payload = VertexVersions(v, ts0)
            for op in ops[1:]:
                payload.apply(op, ts0)
            shard = shard_for(v, cfg.n_shards)
            stored = StoredVertex(v, payload, ts0, shard)
            self.store.txn_write(txn, BackingStore.vertex_key(v), stored.to_bytes())
            self.store.txn_write(txn, BackingStore.mapping_key(v), str(shard).encode())
            self.shards[shard].core.graph[v] = StoredVertex.from_bytes(v, stored.to_bytes()).payload
        assert self.store.txn_commit(txn) == "committed"

    def client_stopped(self) -> None:
        """Once every client has retired, nothing left can extend the history;
        skip the remaining idle ticking instead of simulating it."""
        self._stopped_clients += 1
        if self._stopped_clients >= self.cfg.n_clients:
            self.sim.stopped = True

    def respawn_dead(self, epoch: int) -> None:
        for (kind, index), member in list(self.manager.members.items()):
            if member.alive:
                continue
            if kind == "gatekeeper":
                core = GatekeeperCore(index, self.store, self.gk_cfg, epoch)
                actor = GatekeeperActor(self, core)
                self.gatekeepers[index] = actor
            else:
                core = ShardCore(index, self.cfg.n_gatekeepers, self.oracle, epoch)
                core.start_epoch(epoch, self.store.restore_shard(index))
                actor = ShardActor(self, core)
                self.shards[index] = actor
            actor.install()
            self.manager.mark_replaced(kind, index)

    def run(self) -> ScenarioResult:
        cfg = self.cfg
        snap0 = initial_snapshot(cfg)
        for actor in self.gatekeepers.values():
            actor.install()
        for actor in self.shards.values():
            actor.install()
        ManagerActor(self, self.manager).install()
        self.sim.register(("oracle", 0), OracleActor(self).handle)
        clients = [ClientActor(self, c) for c in range(cfg.n_clients)]
        for i, client in enumerate(clients):
            client.start(0.1 + 0.01 * i)
        for kind, index, at in cfg.faults:
            addr = (kind, index)
            self.sim.at(at, lambda a=addr: self.sim.crash(a))
        self.sim.run(until=cfg.duration_ms + cfg.drain_ms)
        self.counters.announces = sum(
            a.core.announces_sent for a in self.gatekeepers.values()
        )
        self.counters.oracle_calls = self.oracle.order_calls
        return ScenarioResult(
            cfg, self.history, self.counters, snap0, self.sim, self.store,
            self.oracle, self.gatekeepers, self.shards, self.manager,
        )


def run_scenario(cfg: ScenarioConfig) -> ScenarioResult:
    return Scenario(cfg).run()


def replay_program(
    shards: dict[int, ShardCore],
    n_shards: int,
    name: str,
    start: list[str],
    params: dict,
    ts: VectorTimestamp,
    program_id: str,
) -> dict:
    """Re-execute a node program against the shards' multi-version state at a
    pinned timestamp, mirroring the gatekeeper driver's round loop.

    Writes applied after a program originally ran always carry timestamps
    after it (a program is only released once every channel's clock has
    passed it), so replaying at the same timestamp reads the same snapshot.
    """
    driver = get_program(name).driver_factory(start, params)
    chunks = driver.first_round()
    while True:
        items = []
        for vertex, p in chunks:
            core = shards[shard_for(vertex, n_shards)]
            fragment, hops = core.run_program_step(name, program_id, vertex, p, ts)
            items.append(((vertex, p), fragment, hops))
        status, payload = driver.on_round(items)
        if status == "done":
            for core in shards.values():
                core.release_program_state(program_id)
            return payload
        chunks = payload


# ---------------------------------------------------------------------------
# helpers used by the CLI and studies
# ---------------------------------------------------------------------------


def ring_graph(n: int, prefix: str = "v") -> tuple[tuple[str, ...], tuple[tuple[str, str, str], ...]]:
    """A small connected seed graph: a ring plus chords, handy for workloads."""
    vertices = tuple(f"{prefix}{i}" for i in range(n))
    edges = []
    for i in range(n):
        edges.append((f"{prefix}e{i}", vertices[i], vertices[(i + 1) % n]))
        if n > 4:
            edges.append((f"{prefix}c{i}", vertices[i], vertices[(i + 3) % n]))
    return vertices, tuple(edges)


def load_edge_list(path: str) -> tuple[tuple[str, ...], tuple[tuple[str, str, str], ...]]:
    """Parse a whitespace-separated edge list file (one `src dst` per line;
    lines starting with # are comments)."""
    vertices: dict[str, None] = {}
    edges = []
    n = 0
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            src, dst = line.split()[:2]
            vertices.setdefault(src, None)
            vertices.setdefault(dst, None)
            edges.append((f"le{n}", src, dst))
            n += 1
    return tuple(vertices), tuple(edges)


@dataclass
class SweepPoint:
    tau_ms: float
    announce_rate: float  # announce messages per simulated second
    announces_per_op: float
    oracle_calls_per_op: float
    abort_rate: float
    mean_latency_ms: float


def sweep_tau(values: list[float], base: ScenarioConfig) -> list[SweepPoint]:
    points = []
    for tau in values:
        cfg = ScenarioConfig(**{**base.__dict__, "tau_ms": tau})
        res = run_scenario(cfg)
        c = res.counters
        ops = max(c.ops, 1)
        points.append(
            SweepPoint(
                tau,
                c.announces / (cfg.duration_ms / 1000.0),
                c.announces / ops,
                c.oracle_calls / ops,
                c.abort_rate(),
                c.mean_latency(),
            )
        )
    return points
