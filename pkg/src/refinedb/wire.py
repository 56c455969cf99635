"""Binary wire protocol for the socket transport.

Frame layout: u32 little-endian payload length, then payload =
u8 message type + u64 correlation id + body.  Strings are u16 length +
UTF-8 bytes; timestamps use the fixed binary layout from the timestamp
module (epoch u64, issuer u16, component count u16, u64 components).
Nested structures (op lists, program chunks, result maps) travel as
u32-length JSON blobs; everything is little-endian.

Requests and responses share a type code and are told apart by direction,
with the correlation id tying them together.
"""

from __future__ import annotations

import json
import socket
import struct
from typing import Optional

from .timestamps import VectorTimestamp

BEGIN_TX = 0x01
TX_READ = 0x02
TX_COMMIT = 0x03
SUBMIT_PROGRAM = 0x04
PROGRAM_RESULT = 0x05
ANNOUNCE = 0x10
SHARD_TX = 0x20
SHARD_NOP = 0x21
SHARD_PROGRAM = 0x22
FRAGMENTS = 0x23
PROGRAM_DONE = 0x24
ORACLE_CREATE = 0x30
ORACLE_ORDER = 0x31
ORACLE_QUERY = 0x32
ORACLE_REPLY = 0x33
ORACLE_GC = 0x34
HEARTBEAT = 0x40
PREPARE = 0x41
PREPARE_ACK = 0x42
VIEW = 0x43
STORE_GET = 0x50
STORE_COMMIT = 0x51
STORE_RESTORE = 0x52
STORE_GET_SHARD = 0x53

_HEAD = struct.Struct("<BQ")

# field kinds: u8 u16 u32 u64 f64 str json ts ts_list
SCHEMAS: dict[tuple[int, str], list[tuple[str, str]]] = {
    (BEGIN_TX, "req"): [("txid", "str")],
    (BEGIN_TX, "resp"): [("ok", "u8")],
    (TX_READ, "req"): [("handle", "str")],
    (TX_READ, "resp"): [("view", "json"), ("key", "str"), ("version", "u64")],
    (TX_COMMIT, "req"): [("txid", "str"), ("ops", "json"), ("read_versions", "json")],
    (TX_COMMIT, "resp"): [("result", "json")],
    (SUBMIT_PROGRAM, "req"): [("name", "str"), ("start", "json"), ("params", "json")],
    (PROGRAM_RESULT, "req"): [("result", "json")],
    (ANNOUNCE, "req"): [("ts", "ts")],
    (SHARD_TX, "req"): [
        ("gk", "u16"), ("epoch", "u64"), ("seq", "u64"), ("ts", "ts"),
        ("txid", "str"), ("ops", "json"),
    ],
    (SHARD_NOP, "req"): [("gk", "u16"), ("epoch", "u64"), ("seq", "u64"), ("ts", "ts")],
    (SHARD_PROGRAM, "req"): [
        ("gk", "u16"), ("epoch", "u64"), ("seq", "u64"), ("ts", "ts"),
        ("program_id", "str"), ("name", "str"), ("round_no", "u32"), ("chunks", "json"),
    ],
    (FRAGMENTS, "req"): [
        ("program_id", "str"), ("round_no", "u32"), ("shard", "u16"), ("items", "json"),
    ],
    (PROGRAM_DONE, "req"): [("program_id", "str")],
    (ORACLE_CREATE, "req"): [("ts", "ts")],
    (ORACLE_CREATE, "resp"): [("ok", "u8")],
    (ORACLE_ORDER, "req"): [("pref", "u8"), ("pairs", "ts_list")],
    (ORACLE_ORDER, "resp"): [("orders", "json")],
    (ORACLE_QUERY, "req"): [("a", "ts"), ("b", "ts")],
    (ORACLE_QUERY, "resp"): [("order", "u8")],
    (ORACLE_GC, "req"): [("gk", "u16"), ("ts", "ts")],
    (ORACLE_GC, "resp"): [("reclaimed", "u32")],
    (HEARTBEAT, "req"): [("kind", "str"), ("index", "u16")],
    (PREPARE, "req"): [("epoch", "u64")],
    (PREPARE_ACK, "req"): [("gk", "u16"), ("epoch", "u64")],
    (VIEW, "req"): [("epoch", "u64"), ("view", "json")],
    (STORE_GET, "req"): [("key", "str")],
    # value is hex-encoded; empty string plus found=0 means absent
    (STORE_GET, "resp"): [("found", "u8"), ("value", "json"), ("version", "u64")],
    (STORE_COMMIT, "req"): [("reads", "json"), ("writes", "json")],
    (STORE_COMMIT, "resp"): [("status", "str")],
    (STORE_RESTORE, "req"): [("shard", "u16")],
    (STORE_RESTORE, "resp"): [("records", "json")],
    (STORE_GET_SHARD, "req"): [("handle", "str")],
    (STORE_GET_SHARD, "resp"): [("found", "u8"), ("shard", "u16")],
}

_INT = {"u8": "<B", "u16": "<H", "u32": "<I", "u64": "<Q", "f64": "<d"}


def _enc_field(kind: str, value, out: bytearray) -> None:
    if kind in _INT:
        out += struct.pack(_INT[kind], value)
    elif kind == "str":
        raw = value.encode()
        out += struct.pack("<H", len(raw)) + raw
    elif kind == "json":
        raw = json.dumps(value, sort_keys=True).encode()
        out += struct.pack("<I", len(raw)) + raw
    elif kind == "ts":
        raw = value.to_bytes()
        out += struct.pack("<H", len(raw)) + raw
    elif kind == "ts_list":
        out += struct.pack("<H", len(value))
        for ts in value:
            _enc_field("ts", ts, out)
    else:
        raise ValueError(kind)


def _dec_field(kind: str, buf: bytes, off: int):
    if kind in _INT:
        fmt = _INT[kind]
        size = struct.calcsize(fmt)
        return struct.unpack_from(fmt, buf, off)[0], off + size
    if kind == "str":
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        return buf[off:off + n].decode(), off + n
    if kind == "json":
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        return json.loads(buf[off:off + n]), off + n
    if kind == "ts":
        (n,) = struct.unpack_from("<H", buf, off)
        off += 2
        ts, _ = VectorTimestamp.from_bytes(buf[off:off + n])
        return ts, off + n
    if kind == "ts_list":
        (count,) = struct.unpack_from("<H", buf, off)
        off += 2
        items = []
        for _ in range(count):
            ts, off = _dec_field("ts", buf, off)
            items.append(ts)
        return items, off
    raise ValueError(kind)


def encode(msg_type: int, corr: int, fields: dict, role: str = "req") -> bytes:
    schema = SCHEMAS[(msg_type, role)]
    body = bytearray(_HEAD.pack(msg_type, corr))
    for name, kind in schema:
        _enc_field(kind, fields[name], body)
    return struct.pack("<I", len(body)) + bytes(body)


def decode(payload: bytes, role: str = "req") -> tuple[int, int, dict]:
    msg_type, corr = _HEAD.unpack_from(payload, 0)
    off = _HEAD.size
    out = {}
    if (msg_type, role) not in SCHEMAS:
        # one-directional message (e.g. PROGRAM_RESULT arriving at a client)
        role = "resp" if role == "req" else "req"
    for name, kind in SCHEMAS[(msg_type, role)]:
        out[name], off = _dec_field(kind, payload, off)
    return msg_type, corr, out


# ---------------------------------------------------------------------------
# socket helpers
# ---------------------------------------------------------------------------


def send_msg(sock: socket.socket, msg_type: int, corr: int, fields: dict, role: str = "req") -> None:
    sock.sendall(encode(msg_type, corr, fields, role))


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    while n:
        part = sock.recv(n)
        if not part:
            return None
        chunks.append(part)
        n -= len(part)
    return b"".join(chunks)


def recv_msg(sock: socket.socket, role: str = "req") -> Optional[tuple[int, int, dict]]:
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (size,) = struct.unpack("<I", head)
    payload = _recv_exact(sock, size)
    if payload is None:
        return None
    return decode(payload, role)
