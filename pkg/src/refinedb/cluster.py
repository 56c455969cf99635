"""Cluster manager: membership, failure detection, and epoch barriers.

The manager tracks heartbeats from every gatekeeper and shard.  When a
server misses its timeout the manager bumps the epoch and runs a two-phase
barrier: PREPARE quiesces all surviving gatekeepers (they stop admitting
commits and ack), then VIEW installs the new configuration everywhere.
Shards reload their partition from the backing store when they see the
VIEW, which also recovers transactions that committed durably but never
reached them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass
class Member:
    kind: str  # "gatekeeper" | "shard"
    index: int
    last_beat: float = 0.0
    alive: bool = True


@dataclass
class ClusterView:
    epoch: int
    gatekeepers: list[int]
    shards: list[int]


class ManagerCore:
    def __init__(
        self,
        n_gatekeepers: int,
        n_shards: int,
        heartbeat_ms: float = 100.0,
        timeout_ms: float = 500.0,
    ):
        self.heartbeat_ms = heartbeat_ms
        self.timeout_ms = timeout_ms
        self.epoch = 0
        self.members: dict[tuple[str, int], Member] = {}
        for i in range(n_gatekeepers):
            self.members[("gatekeeper", i)] = Member("gatekeeper", i)
        for i in range(n_shards):
            self.members[("shard", i)] = Member("shard", i)
        self.barrier_pending: Optional[set[int]] = None  # gk acks outstanding
        self.barrier_epoch: Optional[int] = None

    # -- membership --------------------------------------------------------------

    def handle_heartbeat(self, kind: str, index: int, now: float) -> None:
        member = self.members.get((kind, index))
        if member is not None and member.alive:
            member.last_beat = now

    def view(self) -> ClusterView:
        return ClusterView(
            self.epoch,
            sorted(m.index for m in self.members.values() if m.kind == "gatekeeper" and m.alive),
            sorted(m.index for m in self.members.values() if m.kind == "shard" and m.alive),
        )

    def mark_replaced(self, kind: str, index: int) -> None:
        """A replacement process took over the failed server's slot."""
        member = self.members[(kind, index)]
        member.alive = True
        member.last_beat = 0.0

    # -- failure detection ---------------------------------------------------------

    def check(self, now: float) -> list[dict]:
        """Detect timed-out members; start a barrier if any died."""
        if self.barrier_pending is not None:
            return []  # one view change at a time
        died = []
        for member in self.members.values():
            if member.alive and now - member.last_beat > self.timeout_ms:
                member.alive = False
                died.append((member.kind, member.index))
        if not died:
            return []
        return self.begin_barrier(died)

    def begin_barrier(self, died: list[tuple[str, int]]) -> list[dict]:
        self.epoch += 1
        self.barrier_epoch = self.epoch
        survivors = [
            m.index for m in self.members.values() if m.kind == "gatekeeper" and m.alive
        ]
        self.barrier_pending = set(survivors)
        out = [
            {"type": "prepare", "to": ("gatekeeper", g), "epoch": self.epoch}
            for g in survivors
        ]
        if not survivors:  # every gatekeeper died at once; install directly
            out.extend(self._install_view())
        return out

    def handle_prepare_ack(self, gk: int, epoch: int) -> list[dict]:
        if self.barrier_pending is None or epoch != self.barrier_epoch:
            return []
        self.barrier_pending.discard(gk)
        if self.barrier_pending:
            return []
        return self._install_view()

    def _install_view(self) -> list[dict]:
        self.barrier_pending = None
        self.barrier_epoch = None
        view = self.view()
        out = []
        for member in self.members.values():
            if member.alive:
                out.append(
                    {
                        "type": "view",
                        "to": (member.kind, member.index),
                        "epoch": self.epoch,
                        "view": view,
                    }
                )
        return out
