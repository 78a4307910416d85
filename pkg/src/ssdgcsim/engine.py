"""Virtual clock and event queue.

Time is an integer count of virtual microseconds. Events that fire at the
same instant are delivered in the order they were scheduled.
"""

from __future__ import annotations

import enum
import heapq
from dataclasses import dataclass, field
from typing import Any, Callable


class SimulationError(RuntimeError):
    """A simulation invariant was violated (exit code 2 from the CLI)."""


class EventKind(enum.IntEnum):
    REQUEST_ARRIVAL = 0
    DEVICE_COMPLETION = 1
    GC_PHASE = 2
    FLUSHER_PUMP = 3
    WORKLOAD_TICK = 4


@dataclass(order=True)
class Event:
    fire_at: int
    seq: int = field(default=-1)
    kind: EventKind = field(default=EventKind.WORKLOAD_TICK, compare=False)
    payload: Any = field(default=None, compare=False)


Handler = Callable[[EventKind, Any], None]


class Engine:
    """Min-heap of ``(fire_at, seq)`` ordered events plus a virtual clock.

    Handlers are registered per :class:`EventKind`. The heap stores plain
    tuples for speed; :meth:`schedule` accepts an :class:`Event` for callers
    that prefer the record form.
    """

    def __init__(self) -> None:
        self.now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, int, Any]] = []
        self._handlers: dict[int, Handler] = {}
        self.events_processed = 0

    def register(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[int(kind)] = handler

    def schedule(self, event: Event) -> Event:
        event.seq = self.at(event.fire_at, event.kind, event.payload)
        return event

    def at(self, fire_at: int, kind: EventKind, payload: Any = None) -> int:
        """Schedule ``payload`` at absolute time ``fire_at``; returns its seq."""
        if fire_at < self.now:
            raise SimulationError(
                f"event {kind.name} scheduled at t={fire_at} while clock is t={self.now}"
            )
        seq = self._seq
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, seq, int(kind), payload))
        return seq

    def after(self, delay: int, kind: EventKind, payload: Any = None) -> int:
        return self.at(self.now + delay, kind, payload)

    def __len__(self) -> int:
        return len(self._heap)

    def pop(self) -> Event:
        fire_at, seq, kind, payload = heapq.heappop(self._heap)
        return Event(fire_at, seq, EventKind(kind), payload)

    def run(self, until: int | None = None, after_each: Callable[[], None] | None = None) -> int:
        """Deliver events in ``(fire_at, seq)`` order.

        Stops when the heap is empty or the next event lies beyond ``until``.
        ``after_each`` runs once after every delivered event (used to settle
        same-tick dispatch work). Returns the number of events delivered.
        """
        heap = self._heap
        handlers = self._handlers
        pop = heapq.heappop
        n = 0
        while heap:
            if until is not None and heap[0][0] > until:
                break
            fire_at, _seq, kind, payload = pop(heap)
            self.now = fire_at
            handler = handlers.get(kind)
            if handler is None:
                raise SimulationError(f"no handler registered for {EventKind(kind).name}")
            handler(kind, payload)
            if after_each is not None:
                after_each()
            n += 1
        self.events_processed += n
        return n
