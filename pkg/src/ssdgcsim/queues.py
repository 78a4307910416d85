"""Per-SSD I/O queues: a short high-priority queue for requests an application
is waiting on and a long low-priority queue for background flushes.

Flush requests are checked for staleness only when they reach the head of
the low queue; nothing ever scans the queue.
"""

from __future__ import annotations

from collections import deque
from typing import TYPE_CHECKING, Any, Callable, Optional

if TYPE_CHECKING:
    from ssdgcsim.cache import CachePage, PageCache

# IoRequest origins
APP_READ = "read"            # cache fill for a read or a read-update-write
WRITEBACK = "writeback"      # dirty victim written back before slot reuse
DIRECT = "direct"            # uncached application I/O

EVICTED = "evicted"
CLEANED = "cleaned"
LOW_SCORE = "low_score"
DISCARD_REASONS = (EVICTED, CLEANED, LOW_SCORE)


class IoRequest:
    """High-priority device request; the application is blocked on it."""

    __slots__ = ("ssd", "page", "local_page", "is_write", "origin", "submit_time",
                 "token", "tag", "data_tag")
    low = False

    def __init__(self, ssd: int, page: int, local_page: int, is_write: bool, origin: str,
                 submit_time: int, token: Any = None, tag: int = 0) -> None:
        self.ssd = ssd
        self.page = page
        self.local_page = local_page
        self.is_write = is_write
        self.origin = origin
        self.submit_time = submit_time
        self.token = token
        self.tag = tag
        self.data_tag = 0

    def __repr__(self) -> str:
        kind = "W" if self.is_write else "R"
        return f"IoRequest({self.origin}:{kind} page={self.page} ssd={self.ssd})"


class FlushRequest:
    """Low-priority write of one dirty cache page."""

    __slots__ = ("ssd", "page", "local_page", "page_obj", "set_id", "version", "score",
                 "tag", "data_tag", "submit_time")
    low = True
    is_write = True
    origin = "flush"

    def __init__(self, ssd: int, page: int, local_page: int, page_obj: "CachePage", set_id: int,
                 version: int, score: int) -> None:
        self.ssd = ssd
        self.page = page
        self.local_page = local_page
        self.page_obj = page_obj
        self.set_id = set_id
        self.version = version
        self.score = score
        self.tag = 0
        self.data_tag = 0
        self.submit_time = 0

    def __repr__(self) -> str:
        return f"FlushRequest(page={self.page} ssd={self.ssd} v={self.version})"


def discard_stale(req: FlushRequest, cache: "PageCache", threshold: int) -> Optional[str]:
    """Return a drop reason for a flush at the queue head, or None to keep it.

    Dropped when the page left the cache, when it is clean or was dirtied
    again after the request was made, or when its current rank in its set
    has fallen below ``threshold``.
    """
    page = req.page_obj
    if cache.pages.get(req.page) is not page:
        return EVICTED
    if not page.dirty or page.dirty_version != req.version:
        return CLEANED
    if threshold > 0 and cache.set_rank(page) < threshold:
        return LOW_SCORE
    return None


class DualQueue:
    def __init__(self, ssd: int, high_capacity: int = 64, low_capacity: int = 4096,
                 max_outstanding: int = 32, reserved_high_slots: int = 7) -> None:
        if not 0 <= reserved_high_slots < max_outstanding:
            raise ValueError("reserved_high_slots must leave at least one low slot")
        if high_capacity <= 0 or low_capacity <= 0:
            raise ValueError("queue capacities must be positive")
        self.ssd = ssd
        self.high_capacity = high_capacity
        self.low_capacity = low_capacity
        self.max_outstanding = max_outstanding
        self.reserved_high_slots = reserved_high_slots
        self.high: deque[IoRequest] = deque()
        self.low: deque[FlushRequest] = deque()
        # requests refused by a full high queue, admitted FIFO as it drains
        self.parked: deque[IoRequest] = deque()
        self.in_flight_high = 0
        self.in_flight_low = 0

    @property
    def low_slot_cap(self) -> int:
        return self.max_outstanding - self.reserved_high_slots

    @property
    def in_flight(self) -> int:
        return self.in_flight_high + self.in_flight_low

    def enqueue_high(self, req: IoRequest) -> bool:
        if len(self.high) >= self.high_capacity:
            return False
        self.high.append(req)
        return True

    def submit_high(self, req: IoRequest) -> bool:
        """Enqueue, or park the request behind a full queue. True if queued."""
        if self.parked or not self.enqueue_high(req):
            self.parked.append(req)
            return False
        return True

    def enqueue_low(self, req: FlushRequest) -> bool:
        if len(self.low) >= self.low_capacity:
            return False
        self.low.append(req)
        return True

    def low_full(self) -> bool:
        return len(self.low) >= self.low_capacity

    def dispatch(self, keep: Callable[[FlushRequest], Optional[str]] | None = None):
        """Pick requests to issue now.

        Returns ``(issued, dropped)`` where ``dropped`` lists
        ``(flush_request, reason)`` pairs removed as stale.
        """
        issued: list = []
        dropped: list = []
        high = self.high
        cap = self.max_outstanding
        while high and self.in_flight < cap:
            issued.append(high.popleft())
            self.in_flight_high += 1
            if self.parked:
                high.append(self.parked.popleft())
        if high:
            return issued, dropped
        low = self.low
        low_cap = self.low_slot_cap
        while low and self.in_flight_low < low_cap and self.in_flight < cap:
            req = low.popleft()
            reason = keep(req) if keep is not None else None
            if reason is not None:
                dropped.append((req, reason))
                continue
            issued.append(req)
            self.in_flight_low += 1
        return issued, dropped

    def complete(self, req) -> None:
        if req.low:
            self.in_flight_low -= 1
        else:
            self.in_flight_high -= 1

    def check(self) -> None:
        assert 0 <= self.in_flight_high and 0 <= self.in_flight_low
        assert self.in_flight <= self.max_outstanding, "slot cap exceeded"
        assert self.in_flight_low <= self.low_slot_cap, "low-priority slot cap exceeded"
        assert len(self.high) <= self.high_capacity
        assert len(self.low) <= self.low_capacity
