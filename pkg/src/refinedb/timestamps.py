"""Vector timestamps with epochs: the ordering token for every transaction.

A timestamp carries the issuing gatekeeper's id so that the triple
(epoch, issuer, clocks[issuer]) doubles as a globally unique transaction id.
Epoch comparison strictly dominates component comparison: the cluster
manager's barrier guarantees no in-flight old-epoch work after a bump.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum


class Order(Enum):
    BEFORE = "before"
    AFTER = "after"
    EQUAL = "equal"
    CONCURRENT = "concurrent"

    def flipped(self) -> "Order":
        if self is Order.BEFORE:
            return Order.AFTER
        if self is Order.AFTER:
            return Order.BEFORE
        return self


class ClockLengthMismatch(Exception):
    """Clock arrays of different lengths: a configuration bug, not a data race."""


class StaleAnnounce(Exception):
    """Announce from a different epoch; the receiver must drop it."""


_HEADER = struct.Struct("<QHH")


@dataclass(frozen=True, slots=True)
class VectorTimestamp:
    epoch: int
    issuer: int
    clocks: tuple[int, ...]

    def compare(self, other: "VectorTimestamp") -> Order:
        if self.epoch != other.epoch:
            return Order.BEFORE if self.epoch < other.epoch else Order.AFTER
        if len(self.clocks) != len(other.clocks):
            raise ClockLengthMismatch(
                f"clock length {len(self.clocks)} vs {len(other.clocks)}"
            )
        if self.clocks == other.clocks and self.issuer == other.issuer:
            return Order.EQUAL
        le = all(a <= b for a, b in zip(self.clocks, other.clocks))
        ge = all(a >= b for a, b in zip(self.clocks, other.clocks))
        if le and ge:
            # Identical counters from different issuers: unordered.
            return Order.CONCURRENT
        if le:
            return Order.BEFORE
        if ge:
            return Order.AFTER
        return Order.CONCURRENT

    def merge(self, announced: "VectorTimestamp") -> "VectorTimestamp":
        if self.epoch != announced.epoch:
            raise StaleAnnounce(f"epoch {announced.epoch} != local {self.epoch}")
        if len(self.clocks) != len(announced.clocks):
            raise ClockLengthMismatch(
                f"clock length {len(self.clocks)} vs {len(announced.clocks)}"
            )
        merged = tuple(max(a, b) for a, b in zip(self.clocks, announced.clocks))
        return VectorTimestamp(self.epoch, self.issuer, merged)

    def increment_local(self) -> "VectorTimestamp":
        clocks = list(self.clocks)
        clocks[self.issuer] += 1
        return VectorTimestamp(self.epoch, self.issuer, tuple(clocks))

    def sort_key(self) -> tuple:
        # Arbitrary but deterministic total order; used only to break ties
        # between items whose relative order is unobservable.
        return (self.epoch, self.clocks, self.issuer)

    def to_bytes(self) -> bytes:
        return _HEADER.pack(self.epoch, self.issuer, len(self.clocks)) + struct.pack(
            f"<{len(self.clocks)}Q", *self.clocks
        )

    @classmethod
    def from_bytes(cls, data: bytes, offset: int = 0) -> tuple["VectorTimestamp", int]:
        epoch, issuer, n = _HEADER.unpack_from(data, offset)
        offset += _HEADER.size
        clocks = struct.unpack_from(f"<{n}Q", data, offset)
        return cls(epoch, issuer, tuple(clocks)), offset + 8 * n

    @classmethod
    def zero(cls, n_gatekeepers: int, issuer: int, epoch: int = 0) -> "VectorTimestamp":
        return cls(epoch, issuer, (0,) * n_gatekeepers)

    def to_list(self) -> list:
        return [self.epoch, self.issuer, list(self.clocks)]

    @classmethod
    def from_list(cls, raw: list) -> "VectorTimestamp":
        return cls(raw[0], raw[1], tuple(raw[2]))

    def __str__(self) -> str:
        return f"e{self.epoch}<{','.join(map(str, self.clocks))}>@{self.issuer}"


def compare(a: VectorTimestamp, b: VectorTimestamp) -> Order:
    return a.compare(b)
