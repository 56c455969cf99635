"""Durable transactional key-value layer holding the authoritative graph.

Optimistic concurrency: transactions record the version of every key they
read and commit only if none of those versions moved.  Validation plus apply
is one serialized critical section.  Durability is an append-only log of
committed write-sets (length-prefixed, CRC32-guarded) plus an optional
snapshot; recovery replays the log and stops at the first torn record.
"""

from __future__ import annotations

import json
import os
import struct
import threading
import zlib
from dataclasses import dataclass, field
from typing import Optional

from .graphstate import VertexVersions
from .timestamps import VectorTimestamp

LOG_FILE = "store.log"
SNAP_FILE = "store.snap"

_REC_HEADER = struct.Struct("<II")  # body length, crc32(body)


class NotFound(Exception):
    pass


class TxnStateError(Exception):
    """Commit called twice, or operation on a closed transaction."""


@dataclass
class StoreTransaction:
    reads: dict[str, int] = field(default_factory=dict)
    writes: dict[str, Optional[bytes]] = field(default_factory=dict)
    state: str = "open"  # open | committed | aborted


@dataclass
class StoredVertex:
    handle: str
    payload: VertexVersions
    last_update_ts: VectorTimestamp
    shard: int

    def to_bytes(self) -> bytes:
        doc = {
            "p": self.payload.to_dict(),
            "l": self.last_update_ts.to_list(),
            "s": self.shard,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()

    @classmethod
    def from_bytes(cls, handle: str, data: bytes) -> "StoredVertex":
        doc = json.loads(data.decode())
        return cls(
            handle,
            VertexVersions.from_dict(doc["p"]),
            VectorTimestamp.from_list(doc["l"]),
            doc["s"],
        )


def shard_for(handle: str, n_shards: int) -> int:
    """Stable shard placement: hash at creation, never rebalanced."""
    return zlib.crc32(handle.encode()) % n_shards


class BackingStore:
    """Single-store OCC key-value store with write-ahead logging."""

    def __init__(self, data_dir: Optional[str] = None):
        self.data_dir = data_dir
        self._data: dict[str, tuple[Optional[bytes], int]] = {}
        self._commit_seq = 0
        self._lock = threading.Lock()
        if data_dir is not None:
            os.makedirs(data_dir, exist_ok=True)
            self._recover()

    # -- generic transactional API -------------------------------------------

    def txn_begin(self) -> StoreTransaction:
        return StoreTransaction()

    def _version(self, key: str) -> int:
        entry = self._data.get(key)
        return entry[1] if entry else 0

    def txn_read(self, txn: StoreTransaction, key: str) -> tuple[Optional[bytes], int]:
        if txn.state != "open":
            raise TxnStateError(txn.state)
        if key in txn.writes:  # read-your-own-writes inside an open transaction
            version = txn.reads.setdefault(key, self._version(key))
            return txn.writes[key], version
        entry = self._data.get(key)
        value, version = entry if entry else (None, 0)
        txn.reads.setdefault(key, version)
        return value, version

    def txn_write(self, txn: StoreTransaction, key: str, value: Optional[bytes]) -> None:
        if txn.state != "open":
            raise TxnStateError(txn.state)
        txn.writes[key] = value

    def txn_commit(self, txn: StoreTransaction) -> str:
        if txn.state != "open":
            raise TxnStateError("commit called on a non-open transaction")
        with self._lock:
            for key, version in txn.reads.items():
                if self._version(key) != version:
                    txn.state = "aborted"
                    return "conflict"
            self._commit_seq += 1
            for key, value in txn.writes.items():
                if value is None:
                    self._data.pop(key, None)
                else:
                    self._data[key] = (value, self._commit_seq)
            if self.data_dir is not None and txn.writes:
                self._append_log(self._commit_seq, txn.writes)
            txn.state = "committed"
            return "committed"

    # -- convenience non-transactional read ------------------------------------

    def get(self, key: str) -> Optional[bytes]:
        entry = self._data.get(key)
        return entry[0] if entry else None

    # -- vertex / shard-mapping schema ------------------------------------------

    @staticmethod
    def vertex_key(handle: str) -> str:
        return "v:" + handle

    @staticmethod
    def mapping_key(handle: str) -> str:
        return "m:" + handle

    @staticmethod
    def txn_outcome_key(txid: str) -> str:
        return "t:" + txid

    def set_shard(self, handle: str, shard: int) -> None:
        txn = self.txn_begin()
        self.txn_write(txn, self.mapping_key(handle), str(shard).encode())
        self.txn_commit(txn)

    def get_shard(self, handle: str) -> int:
        raw = self.get(self.mapping_key(handle))
        if raw is None:
            raise NotFound(handle)
        return int(raw.decode())

    def restore_shard(self, shard: int) -> list[StoredVertex]:
        out = []
        for key, (value, _version) in sorted(self._data.items()):
            if not key.startswith("m:") or value is None:
                continue
            if int(value.decode()) != shard:
                continue
            handle = key[2:]
            raw = self.get(self.vertex_key(handle))
            if raw is not None:
                out.append(StoredVertex.from_bytes(handle, raw))
        return out

    # -- durability ----------------------------------------------------------------

    def _append_log(self, seq: int, writes: dict[str, Optional[bytes]]) -> None:
        body = bytearray(struct.pack("<QH", seq, len(writes)))
        for key, value in writes.items():
            kb = key.encode()
            body += struct.pack("<H", len(kb)) + kb
            if value is None:
                body += b"\x00"
            else:
                body += b"\x01" + struct.pack("<I", len(value)) + value
        record = _REC_HEADER.pack(len(body), zlib.crc32(bytes(body))) + bytes(body)
        with open(os.path.join(self.data_dir, LOG_FILE), "ab") as fh:
            fh.write(record)

    def snapshot(self) -> None:
        """Write a full snapshot and truncate the log."""
        if self.data_dir is None:
            return
        with self._lock:
            doc = {
                "seq": self._commit_seq,
                "data": {
                    k: [v.hex() if v is not None else None, ver]
                    for k, (v, ver) in self._data.items()
                },
            }
            tmp = os.path.join(self.data_dir, SNAP_FILE + ".tmp")
            with open(tmp, "w") as fh:
                json.dump(doc, fh)
            os.replace(tmp, os.path.join(self.data_dir, SNAP_FILE))
            with open(os.path.join(self.data_dir, LOG_FILE), "wb"):
                pass

    def _recover(self) -> None:
        snap_path = os.path.join(self.data_dir, SNAP_FILE)
        if os.path.exists(snap_path):
            with open(snap_path) as fh:
                doc = json.load(fh)
            self._commit_seq = doc["seq"]
            self._data = {
                k: (bytes.fromhex(v[0]) if v[0] is not None else None, v[1])
                for k, v in doc["data"].items()
            }
        log_path = os.path.join(self.data_dir, LOG_FILE)
        if not os.path.exists(log_path):
            return
        with open(log_path, "rb") as fh:
            raw = fh.read()
        offset = 0
        while offset + _REC_HEADER.size <= len(raw):
            length, crc = _REC_HEADER.unpack_from(raw, offset)
            body = raw[offset + _REC_HEADER.size : offset + _REC_HEADER.size + length]
            if len(body) < length or zlib.crc32(body) != crc:
                break  # torn tail from a crash mid-append
            self._apply_log_record(body)
            offset += _REC_HEADER.size + length

    def _apply_log_record(self, body: bytes) -> None:
        seq, count = struct.unpack_from("<QH", body, 0)
        pos = 10
        writes: dict[str, Optional[bytes]] = {}
        for _ in range(count):
            (klen,) = struct.unpack_from("<H", body, pos)
            pos += 2
            key = body[pos : pos + klen].decode()
            pos += klen
            flag = body[pos]
            pos += 1
            if flag == 0:
                writes[key] = None
            else:
                (vlen,) = struct.unpack_from("<I", body, pos)
                pos += 4
                writes[key] = body[pos : pos + vlen]
                pos += vlen
        if seq <= self._commit_seq:
            return  # already covered by the snapshot
        self._commit_seq = seq
        for key, value in writes.items():
            if value is None:
                self._data.pop(key, None)
            else:
                self._data[key] = (value, seq)
