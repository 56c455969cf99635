"""Deterministic discrete-event simulation runtime.

A single seeded RNG drives every random choice (message latency, workload
sampling), and the event heap breaks ties by insertion order, so a run is
a pure function of its seed and scenario.  Actors are plain callables
keyed by address tuples like ("gatekeeper", 0); a handler may return a
list of outgoing message dicts (each carrying a "to" address) which the
runtime routes with fresh latency.
"""

from __future__ import annotations

import heapq
import random
from typing import Callable, Optional

Address = tuple[str, int]


class Simulator:
    def __init__(self, seed: int, latency_ms: tuple[float, float] = (0.05, 0.5)):
        self.rng = random.Random(seed)
        self.now = 0.0
        self.latency_ms = latency_ms
        self._heap: list[tuple[float, int, Callable[[], None]]] = []
        self._seq = 0
        self.handlers: dict[Address, Callable[[dict], Optional[list]]] = {}
        self.crashed: set[Address] = set()
        self.delivered = 0
        self.stopped = False  # actors may set this to end the run early

    # -- actors -------------------------------------------------------------

    def register(self, addr: Address, handler: Callable[[dict], Optional[list]]) -> None:
        self.handlers[addr] = handler
        self.crashed.discard(addr)

    def crash(self, addr: Address) -> None:
        """In-flight and future messages to this address are dropped."""
        self.crashed.add(addr)

    # -- scheduling -----------------------------------------------------------

    def at(self, time: float, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (max(time, self.now), self._seq, fn))

    def after(self, delay: float, fn: Callable[[], None]) -> None:
        self.at(self.now + delay, fn)

    def send(self, addr: Address, msg: dict, delay: Optional[float] = None) -> None:
        if delay is None:
            delay = self.rng.uniform(*self.latency_ms)
        self.after(delay, lambda: self._deliver(addr, msg))

    def route(self, messages: Optional[list]) -> None:
        for msg in messages or []:
            self.send(msg["to"], msg)

    def _deliver(self, addr: Address, msg: dict) -> None:
        if addr in self.crashed:
            return
        handler = self.handlers.get(addr)
        if handler is None:
            return
        self.delivered += 1
        self.route(handler(msg))

    # -- main loop ----------------------------------------------------------------

    def run(self, until: Optional[float] = None, max_events: int = 50_000_000) -> None:
        steps = 0
        while self._heap and not self.stopped:
            time, _, fn = self._heap[0]
            if until is not None and time > until:
                break
            heapq.heappop(self._heap)
            self.now = time
            fn()
            steps += 1
            if steps >= max_events:
                raise RuntimeError("simulation exceeded event budget")
        if until is not None:
            self.now = max(self.now, until)

    def every(self, period: float, fn: Callable[[], None], stop_after: Optional[float] = None) -> None:
        """Run fn() on a fixed period until the horizon (if given)."""

        def tick():
            if stop_after is not None and self.now > stop_after:
                return
            fn()
            self.after(period, tick)

        self.after(period, tick)
