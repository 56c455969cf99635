"""Blocking socket client for the graph database.

One connection per client, one request in flight at a time.  Commits are
idempotent on the server (keyed by transaction id), so the retry policy on
timeout or connection loss is simply reconnect-and-resend; a retried
commit that already landed returns its original outcome.
"""

from __future__ import annotations

import socket
import uuid
from typing import Optional

from . import wire
from .graphstate import Op


class RequestFailed(Exception):
    pass


class GraphClient:
    def __init__(self, host: str, port: int, timeout_s: float = 5.0, retries: int = 5):
        self.host = host
        self.port = port
        self.timeout_s = timeout_s
        self.retries = retries
        self._sock: Optional[socket.socket] = None
        self._corr = 0

    # -- plumbing ---------------------------------------------------------------

    def _connect(self) -> socket.socket:
        if self._sock is None:
            sock = socket.create_connection((self.host, self.port), timeout=self.timeout_s)
            sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._sock = sock
        return self._sock

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    def _call(self, msg_type: int, fields: dict, wait_for: Optional[int] = None) -> dict:
        """Send one request and block for its correlated reply."""
        self._corr += 1
        corr = self._corr
        last_err: Optional[Exception] = None
        for _ in range(self.retries):
            try:
                sock = self._connect()
                wire.send_msg(sock, msg_type, corr, fields)
                while True:
                    got = wire.recv_msg(sock, role="resp")
                    if got is None:
                        raise ConnectionError("server closed connection")
                    rtype, rcorr, body = got
                    if rcorr != corr:
                        continue  # stale reply from an abandoned attempt
                    if wait_for is not None and rtype != wait_for:
                        continue
                    return body
            except (OSError, ConnectionError) as exc:
                last_err = exc
                self.close()
        raise RequestFailed(f"no reply after {self.retries} attempts: {last_err}")

    # -- operations ----------------------------------------------------------------

    def read(self, handle: str) -> tuple[dict, str, int]:
        body = self._call(wire.TX_READ, {"handle": handle})
        return body["view"], body["key"], body["version"]

    def commit(self, txid: str, ops: list[Op], read_versions: dict[str, int]) -> dict:
        body = self._call(
            wire.TX_COMMIT,
            {"txid": txid, "ops": [op.to_list() for op in ops],
             "read_versions": read_versions},
        )
        return body["result"]

    def submit_program(self, name: str, start: list[str], params: dict) -> dict:
        body = self._call(
            wire.SUBMIT_PROGRAM,
            {"name": name, "start": start, "params": params},
            wait_for=wire.PROGRAM_RESULT,
        )
        return body["result"]

    def begin(self) -> "Transaction":
        return Transaction(self)


class Transaction:
    """Buffered write transaction with read-your-own-writes.

    Reads go to the server and fold in this transaction's buffered ops, so
    the view is what the graph will look like if the commit succeeds.
    """

    def __init__(self, client: GraphClient):
        self.client = client
        self.txid = uuid.uuid4().hex
        self.ops: list[Op] = []
        self.read_versions: dict[str, int] = {}

    # -- writes --------------------------------------------------------------

    def create_vertex(self, handle: str) -> None:
        self.ops.append(Op("create_vertex", handle))

    def delete_vertex(self, handle: str) -> None:
        self.ops.append(Op("delete_vertex", handle))

    def create_edge(self, handle: str, src: str, dst: str) -> None:
        self.ops.append(Op("create_edge", handle, src, dst))

    def delete_edge(self, handle: str, src: str) -> None:
        self.ops.append(Op("delete_edge", handle, src))

    def set_property(self, vertex: str, key: str, value: str, edge: Optional[str] = None) -> None:
        if edge is not None:
            self.ops.append(Op("set_property", edge, src=vertex, key=key, value=value))
        else:
            self.ops.append(Op("set_property", vertex, key=key, value=value))

    def delete_property(self, vertex: str, key: str, edge: Optional[str] = None) -> None:
        if edge is not None:
            self.ops.append(Op("delete_property", edge, src=vertex, key=key))
        else:
            self.ops.append(Op("delete_property", vertex, key=key))

    # -- reads ----------------------------------------------------------------

    def read(self, handle: str) -> dict:
        view, key, version = self.client.read(handle)
        self.read_versions[key] = version
        return self._overlay(handle, view)

    def _overlay(self, handle: str, view: dict) -> dict:
        view = {
            "exists": view.get("exists", False),
            "properties": dict(view.get("properties", {})),
            "edges": {eh: {"dst": e["dst"], "properties": dict(e["properties"])}
                      for eh, e in view.get("edges", {}).items()},
        }
        for op in self.ops:
            if op.kind == "create_vertex" and op.handle == handle:
                view = {"exists": True, "properties": {}, "edges": {}}
            elif op.kind == "delete_vertex" and op.handle == handle:
                view = {"exists": False, "properties": {}, "edges": {}}
            elif op.kind == "create_edge" and op.src == handle:
                view["edges"][op.handle] = {"dst": op.dst, "properties": {}}
            elif op.kind == "delete_edge" and op.src == handle:
                view["edges"].pop(op.handle, None)
            elif op.kind in ("set_property", "delete_property"):
                if op.src == handle and op.handle in view["edges"]:
                    props = view["edges"][op.handle]["properties"]
                elif op.src is None and op.handle == handle:
                    props = view["properties"]
                else:
                    continue
                if op.kind == "set_property":
                    props[op.key] = op.value
                else:
                    props.pop(op.key, None)
        if not view["exists"]:
            return {"exists": False}
        return view

    # -- finish ------------------------------------------------------------------

    def commit(self) -> dict:
        return self.client.commit(self.txid, self.ops, self.read_versions)
