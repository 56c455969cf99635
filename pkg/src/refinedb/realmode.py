"""Socket-transport deployment: one OS process per server.

The same cores that run under the simulator run here behind TCP servers
speaking the binary wire protocol.  This mode exists for the CLI `serve`
commands and for throughput benchmarks on real parallelism; epochs and
fault recovery are exercised end to end in the simulation harness, so the
socket-mode cluster manager only tracks heartbeats.
"""

from __future__ import annotations

import multiprocessing
import socket
import socketserver
import threading
import time
from dataclasses import dataclass
from typing import Optional

from . import wire
from .cluster import ManagerCore
from .gatekeeper import GatekeeperConfig, GatekeeperCore
from .graphstate import Op
from .oracle import OrderPreference, TimelineOracle
from .shard import NopItem, ProgramItem, ShardCore, TxItem
from .store import BackingStore, NotFound, StoreTransaction, StoredVertex
from .timestamps import Order, VectorTimestamp


@dataclass
class Topology:
    host: str
    store_port: int
    oracle_port: int
    manager_port: int
    gk_ports: dict[int, int]
    shard_ports: dict[int, int]

    def to_dict(self) -> dict:
        return {
            "host": self.host,
            "store_port": self.store_port,
            "oracle_port": self.oracle_port,
            "manager_port": self.manager_port,
            "gk_ports": {str(k): v for k, v in self.gk_ports.items()},
            "shard_ports": {str(k): v for k, v in self.shard_ports.items()},
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "Topology":
        return cls(
            raw["host"], raw["store_port"], raw["oracle_port"], raw["manager_port"],
            {int(k): v for k, v in raw["gk_ports"].items()},
            {int(k): v for k, v in raw["shard_ports"].items()},
        )


def _now_ms() -> float:
    return time.monotonic() * 1000.0


class _Peer:
    """Lazy outbound connection with a send lock."""

    def __init__(self, host: str, port: int):
        self.host = host
        self.port = port
        self.sock: Optional[socket.socket] = None
        self.lock = threading.Lock()

    def send(self, msg_type: int, corr: int, fields: dict) -> None:
        with self.lock:
            for attempt in range(40):
                try:
                    if self.sock is None:
                        self.sock = socket.create_connection((self.host, self.port), timeout=5.0)
                        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    wire.send_msg(self.sock, msg_type, corr, fields)
                    return
                except OSError:
                    if self.sock is not None:
                        self.sock.close()
                        self.sock = None
                    time.sleep(0.05 * min(attempt + 1, 10))
            raise ConnectionError(f"cannot reach {self.host}:{self.port}")


class _RpcPeer(_Peer):
    """Outbound connection for request/response exchanges."""

    def call(self, msg_type: int, fields: dict) -> dict:
        with self.lock:
            for attempt in range(40):
                try:
                    if self.sock is None:
                        self.sock = socket.create_connection((self.host, self.port), timeout=5.0)
                        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                    wire.send_msg(self.sock, msg_type, 0, fields)
                    got = wire.recv_msg(self.sock, role="resp")
                    if got is None:
                        raise ConnectionError("closed")
                    return got[2]
                except OSError:
                    if self.sock is not None:
                        self.sock.close()
                        self.sock = None
                    time.sleep(0.05 * min(attempt + 1, 10))
            raise ConnectionError(f"cannot reach {self.host}:{self.port}")


# ---------------------------------------------------------------------------
# remote service adapters
# ---------------------------------------------------------------------------


class RemoteStore:
    """Client-side view of the store server, method-compatible with
    BackingStore for everything the gatekeeper core uses."""

    vertex_key = staticmethod(BackingStore.vertex_key)
    mapping_key = staticmethod(BackingStore.mapping_key)
    txn_outcome_key = staticmethod(BackingStore.txn_outcome_key)

    def __init__(self, host: str, port: int):
        self._peer = _RpcPeer(host, port)

    def txn_begin(self) -> StoreTransaction:
        return StoreTransaction()

    def txn_read(self, txn: StoreTransaction, key: str):
        if key in txn.writes:
            return txn.writes[key], txn.reads.get(key, 0)
        body = self._peer.call(wire.STORE_GET, {"key": key})
        value = bytes.fromhex(body["value"]) if body["found"] else None
        # first observation wins: a version recorded before the transaction
        # opened must survive for the commit-time conflict check
        txn.reads.setdefault(key, body["version"])
        return value, body["version"]

    def txn_write(self, txn: StoreTransaction, key: str, value: Optional[bytes]) -> None:
        txn.writes[key] = value

    def txn_commit(self, txn: StoreTransaction) -> str:
        body = self._peer.call(
            wire.STORE_COMMIT,
            {"reads": txn.reads,
             "writes": {k: (v.hex() if v is not None else None) for k, v in txn.writes.items()}},
        )
        return body["status"]

    def get(self, key: str) -> Optional[bytes]:
        body = self._peer.call(wire.STORE_GET, {"key": key})
        return bytes.fromhex(body["value"]) if body["found"] else None

    def get_shard(self, handle: str) -> int:
        body = self._peer.call(wire.STORE_GET_SHARD, {"handle": handle})
        if not body["found"]:
            raise NotFound(handle)
        return body["shard"]

    def restore_shard(self, shard: int) -> list[StoredVertex]:
        body = self._peer.call(wire.STORE_RESTORE, {"shard": shard})
        return [
            StoredVertex.from_bytes(handle, bytes.fromhex(raw))
            for handle, raw in body["records"]
        ]


class RemoteOracle:
    def __init__(self, host: str, port: int):
        self._peer = _RpcPeer(host, port)

    def ensure_event(self, ts: VectorTimestamp) -> None:
        self._peer.call(wire.ORACLE_CREATE, {"ts": ts})

    def order_or_assign(self, pairs, pref) -> list[Order]:
        flat = [t for pair in pairs for t in pair]
        body = self._peer.call(
            wire.ORACLE_ORDER, {"pref": int(pref is OrderPreference.PROGRAM_AFTER_TRANSACTIONS),
                                "pairs": flat}
        )
        return [Order[name] for name in body["orders"]]

    def query(self, a: VectorTimestamp, b: VectorTimestamp) -> Order:
        body = self._peer.call(wire.ORACLE_QUERY, {"a": a, "b": b})
        return list(Order)[body["order"]]


# ---------------------------------------------------------------------------
# servers
# ---------------------------------------------------------------------------


class _Server(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


def _serve(port: int, handler_factory, host: str = "127.0.0.1") -> None:
    class Handler(socketserver.BaseRequestHandler):
        def handle(self) -> None:
            cb = handler_factory()
            while True:
                got = wire.recv_msg(self.request)
                if got is None:
                    return
                msg_type, corr, body = got
                cb(self.request, msg_type, corr, body)

    with _Server((host, port), Handler) as srv:
        srv.serve_forever()


def serve_store(port: int, data_dir: Optional[str] = None, host: str = "127.0.0.1") -> None:
    store = BackingStore(data_dir)
    lock = threading.Lock()

    def handler():
        def cb(sock, msg_type, corr, body):
            with lock:
                if msg_type == wire.STORE_GET:
                    value = store.get(body["key"])
                    version = store._version(body["key"])
                    wire.send_msg(sock, msg_type, corr, {
                        "found": int(value is not None),
                        "value": value.hex() if value is not None else "",
                        "version": version,
                    }, role="resp")
                elif msg_type == wire.STORE_COMMIT:
                    txn = StoreTransaction()
                    txn.reads.update(body["reads"])
                    for k, v in body["writes"].items():
                        txn.writes[k] = bytes.fromhex(v) if v is not None else None
                    status = store.txn_commit(txn)
                    wire.send_msg(sock, msg_type, corr, {"status": status}, role="resp")
                elif msg_type == wire.STORE_RESTORE:
                    records = [
                        [sv.handle, sv.to_bytes().hex()]
                        for sv in store.restore_shard(body["shard"])
                    ]
                    wire.send_msg(sock, msg_type, corr, {"records": records}, role="resp")
                elif msg_type == wire.STORE_GET_SHARD:
                    try:
                        shard = store.get_shard(body["handle"])
                        found = 1
                    except NotFound:
                        shard, found = 0, 0
                    wire.send_msg(sock, msg_type, corr,
                                  {"found": found, "shard": shard}, role="resp")
        return cb

    _serve(port, handler, host)


def serve_oracle(port: int, host: str = "127.0.0.1") -> None:
    oracle = TimelineOracle()
    lock = threading.Lock()
    gc_inputs: dict[int, VectorTimestamp] = {}

    def handler():
        def cb(sock, msg_type, corr, body):
            with lock:
                if msg_type == wire.ORACLE_CREATE:
                    oracle.create_event(body["ts"])
                    wire.send_msg(sock, msg_type, corr, {"ok": 1}, role="resp")
                elif msg_type == wire.ORACLE_ORDER:
                    flat = body["pairs"]
                    pairs = list(zip(flat[0::2], flat[1::2]))
                    pref = (OrderPreference.PROGRAM_AFTER_TRANSACTIONS if body["pref"]
                            else OrderPreference.ARRIVAL_ORDER)
                    orders = oracle.order_or_assign(pairs, pref)
                    wire.send_msg(sock, msg_type, corr,
                                  {"orders": [o.name for o in orders]}, role="resp")
                elif msg_type == wire.ORACLE_QUERY:
                    order = oracle.query_order(body["a"], body["b"])
                    wire.send_msg(sock, msg_type, corr,
                                  {"order": list(Order).index(order)}, role="resp")
                elif msg_type == wire.ORACLE_GC:
                    gc_inputs[body["gk"]] = body["ts"]
                    clocks = tuple(
                        min(t.clocks[i] for t in gc_inputs.values())
                        for i in range(len(body["ts"].clocks))
                    )
                    n = oracle.gc_events(VectorTimestamp(body["ts"].epoch, 0, clocks))
                    wire.send_msg(sock, msg_type, corr, {"reclaimed": n}, role="resp")
        return cb

    _serve(port, handler, host)


def serve_shard(shard_id: int, topo: Topology, n_gatekeepers: int) -> None:
    oracle = RemoteOracle(topo.host, topo.oracle_port)
    core = ShardCore(shard_id, n_gatekeepers, oracle)
    store = RemoteStore(topo.host, topo.store_port)
    core.start_epoch(0, store.restore_shard(shard_id))
    lock = threading.Lock()
    gk_peers = {g: _Peer(topo.host, p) for g, p in topo.gk_ports.items()}

    def flush(outbox: list) -> None:
        for msg in outbox:
            _, gk = msg["to"]
            items = [
                [idx, vertex, dict(params), fragment, hops]
                for idx, vertex, params, fragment, hops in msg["items"]
            ]
            gk_peers[gk].send(wire.FRAGMENTS, 0, {
                "program_id": msg["program_id"], "round_no": msg["round_no"],
                "shard": msg["shard"], "items": items,
            })

    def handler():
        def cb(sock, msg_type, corr, body):
            with lock:
                if msg_type == wire.SHARD_TX:
                    ops = tuple(Op.from_list(raw) for raw in body["ops"])
                    core.receive(body["gk"], body["epoch"], body["seq"],
                                 TxItem(body["ts"], ops, body["txid"]))
                elif msg_type == wire.SHARD_NOP:
                    core.receive(body["gk"], body["epoch"], body["seq"], NopItem(body["ts"]))
                elif msg_type == wire.SHARD_PROGRAM:
                    chunks = tuple(
                        (idx, vertex, tuple((k, v) for k, v in params))
                        for idx, vertex, params in body["chunks"]
                    )
                    core.receive(body["gk"], body["epoch"], body["seq"],
                                 ProgramItem(body["ts"], body["program_id"], body["name"],
                                             body["gk"], body["round_no"], chunks))
                elif msg_type == wire.PROGRAM_DONE:
                    core.release_program_state(body["program_id"])
                    return
                else:
                    return
                flush(core.pump())
        return cb

    _serve(topo.shard_ports[shard_id], handler, topo.host)


def serve_gatekeeper(gk_id: int, topo: Topology, n_gatekeepers: int, n_shards: int,
                     tau_ms: Optional[float], nop_ms: float) -> None:
    store = RemoteStore(topo.host, topo.store_port)
    cfg = GatekeeperConfig(n_gatekeepers, n_shards, tau_ms, nop_ms, gc_ms=None)
    core = GatekeeperCore(gk_id, store, cfg)
    lock = threading.Lock()
    shard_peers = {s: _Peer(topo.host, p) for s, p in topo.shard_ports.items()}
    gk_peers = {g: _Peer(topo.host, p) for g, p in topo.gk_ports.items() if g != gk_id}
    clients: dict[int, socket.socket] = {}
    client_locks: dict[int, threading.Lock] = {}
    next_client = [0]

    def flush(outbox: list) -> None:
        for msg in outbox:
            t = msg["type"]
            if t == "shard_item":
                item = msg["item"]
                base = {"gk": msg["gk"], "epoch": msg["epoch"], "seq": msg["seq"],
                        "ts": item.ts}
                _, shard = msg["to"]
                if item.kind == "tx":
                    shard_peers[shard].send(wire.SHARD_TX, 0, {
                        **base, "txid": item.txid,
                        "ops": [op.to_list() for op in item.ops],
                    })
                elif item.kind == "nop":
                    shard_peers[shard].send(wire.SHARD_NOP, 0, base)
                else:
                    shard_peers[shard].send(wire.SHARD_PROGRAM, 0, {
                        **base, "program_id": item.program_id, "name": item.name,
                        "round_no": item.round_no,
                        "chunks": [[idx, v, [list(kv) for kv in params]]
                                   for idx, v, params in item.chunks],
                    })
            elif t == "announce":
                _, peer = msg["to"]
                gk_peers[peer].send(wire.ANNOUNCE, 0, {"ts": msg["ts"]})
            elif t == "program_result":
                cid = msg["to"]
                result = dict(msg["result"])
                if "ts" in msg:
                    result["ts"] = msg["ts"].to_list()
                sock = clients.get(cid)
                if sock is not None:
                    with client_locks[cid]:
                        try:
                            wire.send_msg(sock, wire.PROGRAM_RESULT, msg["corr_id"],
                                          {"result": result})
                        except OSError:
                            pass
            elif t == "program_done":
                _, shard = msg["to"]
                shard_peers[shard].send(wire.PROGRAM_DONE, 0, {"program_id": msg["program_id"]})
            # gc_threshold: garbage collection is driven in simulation mode

    def ticker() -> None:
        while True:
            time.sleep(nop_ms / 1000.0)
            with lock:
                out = core.tick(_now_ms())
            flush(out)

    threading.Thread(target=ticker, daemon=True).start()

    def handler():
        cid = next_client[0]
        next_client[0] += 1

        def cb(sock, msg_type, corr, body):
            clients.setdefault(cid, sock)
            client_locks.setdefault(cid, threading.Lock())
            if msg_type == wire.TX_READ:
                with lock:
                    view, key, version = core.handle_read(body["handle"])
                with client_locks[cid]:
                    wire.send_msg(sock, msg_type, corr,
                                  {"view": view, "key": key, "version": version}, role="resp")
            elif msg_type == wire.TX_COMMIT:
                ops = [Op.from_list(raw) for raw in body["ops"]]
                with lock:
                    result, outbox = core.commit_transaction(
                        body["txid"], ops, body["read_versions"], _now_ms())
                flush(outbox)
                if "ts" in result:
                    result = {**result, "ts": result["ts"].to_list()}
                with client_locks[cid]:
                    wire.send_msg(sock, msg_type, corr, {"result": result}, role="resp")
            elif msg_type == wire.SUBMIT_PROGRAM:
                with lock:
                    err, outbox = core.submit_node_program(
                        body["name"], body["start"], body["params"], cid, corr, _now_ms())
                if err is not None:
                    with client_locks[cid]:
                        wire.send_msg(sock, wire.PROGRAM_RESULT, corr, {"result": err})
                else:
                    flush(outbox)
            elif msg_type == wire.ANNOUNCE:
                with lock:
                    core.handle_announce(body["ts"])
            elif msg_type == wire.FRAGMENTS:
                items = [
                    (idx, vertex, params, fragment, hops)
                    for idx, vertex, params, fragment, hops in body["items"]
                ]
                with lock:
                    outbox = core.handle_fragments(
                        {"program_id": body["program_id"], "round_no": body["round_no"],
                         "items": items}, _now_ms())
                flush(outbox)
        return cb

    _serve(topo.gk_ports[gk_id], handler, topo.host)


def serve_manager(port: int, n_gatekeepers: int, n_shards: int,
                  host: str = "127.0.0.1") -> None:
    core = ManagerCore(n_gatekeepers, n_shards)
    lock = threading.Lock()

    def handler():
        def cb(sock, msg_type, corr, body):
            if msg_type == wire.HEARTBEAT:
                with lock:
                    core.handle_heartbeat(body["kind"], body["index"], _now_ms())
        return cb

    _serve(port, handler, host)


# ---------------------------------------------------------------------------
# cluster launcher + bench
# ---------------------------------------------------------------------------


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@dataclass
class RunningCluster:
    topo: Topology
    procs: list
    n_gatekeepers: int
    n_shards: int

    def stop(self) -> None:
        for p in self.procs:
            p.terminate()
        for p in self.procs:
            p.join(timeout=5)


def start_cluster(n_gatekeepers: int, n_shards: int, tau_ms: float = 10.0,
                  nop_ms: float = 5.0, data_dir: Optional[str] = None) -> RunningCluster:
    topo = Topology(
        "127.0.0.1", _free_port(), _free_port(), _free_port(),
        {g: _free_port() for g in range(n_gatekeepers)},
        {s: _free_port() for s in range(n_shards)},
    )
    ctx = multiprocessing.get_context("fork")
    procs = [
        ctx.Process(target=serve_store, args=(topo.store_port, data_dir), daemon=True),
        ctx.Process(target=serve_oracle, args=(topo.oracle_port,), daemon=True),
    ]
    for s in range(n_shards):
        procs.append(ctx.Process(target=serve_shard, args=(s, topo, n_gatekeepers), daemon=True))
    for g in range(n_gatekeepers):
        procs.append(ctx.Process(
            target=serve_gatekeeper, args=(g, topo, n_gatekeepers, n_shards, tau_ms, nop_ms),
            daemon=True,
        ))
    for p in procs:
        p.start()
    return RunningCluster(topo, procs, n_gatekeepers, n_shards)


def load_graph(cluster: RunningCluster, vertices, edges, batch: int = 64) -> None:
    from .client import GraphClient

    gk_port = cluster.topo.gk_ports[0]
    client = GraphClient(cluster.topo.host, gk_port)
    try:
        pending: list[Op] = [Op("create_vertex", v) for v in vertices]
        pending += [Op("create_edge", eh, src, dst) for eh, src, dst in edges]
        n = 0
        while pending:
            chunk, pending = pending[:batch], pending[batch:]
            # vertices load before the edges that reference them, so batches
            # can be committed independently
            result = client.commit(f"load-{n}", chunk, {})
            if result["status"] != "committed":
                raise RuntimeError(f"load failed: {result}")
            n += 1
    finally:
        client.close()


def run_bench(cluster: RunningCluster, make_op, n_clients: int,
              duration_s: float, seed: int = 0) -> float:
    """Closed-loop benchmark; returns completed operations per second.

    `make_op(rng, client_index)` returns a callable that issues one
    operation on a GraphClient.
    """
    import random

    from .client import GraphClient

    counts = [0] * n_clients
    stop = threading.Event()

    def worker(i: int) -> None:
        rng = random.Random(seed * 1000 + i)
        gk_port = cluster.topo.gk_ports[i % cluster.n_gatekeepers]
        client = GraphClient(cluster.topo.host, gk_port)
        try:
            while not stop.is_set():
                op = make_op(rng, i)
                op(client)
                counts[i] += 1
        finally:
            client.close()

    threads = [threading.Thread(target=worker, args=(i,), daemon=True) for i in range(n_clients)]
    start = time.monotonic()
    for t in threads:
        t.start()
    time.sleep(duration_s)
    stop.set()
    for t in threads:
        t.join(timeout=10)
    elapsed = time.monotonic() - start
    return sum(counts) / elapsed
