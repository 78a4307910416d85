"""Dirty page flusher.

A page set enters a FIFO once more than ``threshold`` of its pages are
dirty. The FIFO is served round-robin, ``batch`` pages per visit, and the
pages chosen are those the set's clock would reach first: the lowest
``hits * set_size + distance`` gets the highest flush score.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional

if TYPE_CHECKING:
    from ssdgcsim.cache import CachePage, PageCache, PageSet
    from ssdgcsim.queues import FlushRequest


@dataclass(frozen=True)
class ScoreEntry:
    slot: int
    distance_score: int
    flush_score: int


def _flushable(p: "CachePage") -> bool:
    return p.dirty and not p.flush_pending


def compute_flush_scores(pset: "PageSet", include: Optional[Callable[["CachePage"], bool]] = None) -> list[ScoreEntry]:
    """Score the set's pages, most urgent first.

    By default only dirty pages without a flush in progress are scored.
    Ranks run ``k-1`` (smallest distance score) down to 0; equal distance
    scores go to the lower slot index first.
    """
    include = include or _flushable
    slots = pset.slots
    n = len(slots)
    hand = pset.hand
    rows = []
    for i, p in enumerate(slots):
        if p is None or not p.ready or not include(p):
            continue
        rows.append((p.hits * n + (i - hand) % n, i))
    rows.sort()
    k = len(rows)
    return [ScoreEntry(i, ds, k - 1 - pos) for pos, (ds, i) in enumerate(rows)]


@dataclass
class FlushStats:
    issued: int = 0
    completed: int = 0
    discarded: dict = field(default_factory=lambda: {"evicted": 0, "cleaned": 0, "low_score": 0})
    cap_hits: int = 0
    issued_per_set: dict = field(default_factory=dict)


class Flusher:
    """Pumps flush requests for over-threshold sets into low-priority queues.

    ``make_request(page, flush_score)`` builds a :class:`FlushRequest` and
    ``enqueue(req)`` hands it to the owning SSD's low queue, returning False
    if that queue is full. ``queue_full(page)`` lets the pump skip pages
    whose queue cannot take more work.
    """

    def __init__(self, cache: "PageCache", make_request: Callable[["CachePage", int], "FlushRequest"],
                 enqueue: Callable[["FlushRequest"], bool], queue_full: Callable[["CachePage"], bool],
                 *, threshold: int = 6, batch: int = 2, global_cap: int = 2048,
                 discard_threshold: int = 6, enabled: bool = True) -> None:
        if batch not in (1, 2):
            raise ValueError("flush batch must be 1 or 2")
        if threshold < 0 or global_cap <= 0:
            raise ValueError("bad flusher limits")
        self.cache = cache
        self.make_request = make_request
        self.enqueue = enqueue
        self.queue_full = queue_full
        self.threshold = threshold
        self.batch = batch
        self.global_cap = global_cap
        self.discard_threshold = discard_threshold
        self.enabled = enabled
        self.pending_sets: deque["PageSet"] = deque()
        self.outstanding = 0
        self.max_outstanding_seen = 0
        self.stats = FlushStats()

    def _over(self, pset: "PageSet") -> bool:
        return pset.dirty_count > self.threshold

    def on_page_dirtied(self, pset: "PageSet") -> None:
        if not self.enabled:
            return
        if pset.dirty_count > self.threshold and not pset.in_flush_fifo:
            pset.in_flush_fifo = True
            self.pending_sets.append(pset)
            self.pump()

    def select_flush_candidates(self, pset: "PageSet", batch: Optional[int] = None, *,
                                min_rank: int = 0,
                                admit: Optional[Callable[["CachePage"], bool]] = None):
        """Mark and return up to ``batch`` ``(page, flush_score)`` pairs.

        ``min_rank`` drops pages whose rank among *all* pages of the set is
        below it (they would be discarded at the queue head anyway);
        ``admit`` filters by destination. Returns ``(chosen, blocked)`` where
        ``blocked`` is True if some page was passed over only by ``admit``.
        """
        batch = self.batch if batch is None else batch
        entries = compute_flush_scores(pset)
        if not entries:
            return [], False
        full_rank = None
        if min_rank > 0:
            full_rank = {e.slot: e.flush_score for e in compute_flush_scores(pset, include=lambda p: True)}
        chosen = []
        blocked = False
        for e in entries:
            if len(chosen) == batch:
                break
            if full_rank is not None and full_rank[e.slot] < min_rank:
                continue
            page = pset.slots[e.slot]
            if admit is not None and not admit(page):
                blocked = True
                continue
            page.flush_pending = True
            pset.pending_count += 1
            chosen.append((page, e.flush_score))
        return chosen, blocked

    def pump(self) -> int:
        """Serve the FIFO round-robin until the cap, full queues or no work."""
        if not self.enabled:
            return 0
        fifo = self.pending_sets
        made = 0
        idle_visits = 0
        admit = self._admit
        while fifo and idle_visits < len(fifo):
            room = self.global_cap - self.outstanding
            if room <= 0:
                self.stats.cap_hits += 1
                break
            pset = fifo.popleft()
            if not self._over(pset):
                pset.in_flush_fifo = False
                continue
            chosen, blocked = self.select_flush_candidates(
                pset, min(self.batch, room), min_rank=self.discard_threshold, admit=admit)
            issued = 0
            for page, score in chosen:
                req = self.make_request(page, score)
                if not self.enqueue(req):
                    # queue filled up within this batch; release the page
                    page.flush_pending = False
                    pset.pending_count -= 1
                    blocked = True
                    continue
                issued += 1
                self.outstanding += 1
                self.stats.issued += 1
                per = self.stats.issued_per_set
                per[pset.index] = per.get(pset.index, 0) + 1
                made += 1
            if self.outstanding > self.max_outstanding_seen:
                self.max_outstanding_seen = self.outstanding
            if issued:
                idle_visits = 0
                if self._over(pset):
                    fifo.append(pset)
                else:
                    pset.in_flush_fifo = False
            elif blocked:
                fifo.append(pset)
                idle_visits += 1
            else:
                pset.in_flush_fifo = False
        return made

    def _admit(self, page: "CachePage") -> bool:
        return not self.queue_full(page)

    def on_flush_event(self, req: "FlushRequest", reason: Optional[str] = None) -> None:
        """A flush completed (``reason`` None) or was dropped at the queue head."""
        self.outstanding -= 1
        page = req.page_obj
        cache = self.cache
        resident = cache.pages.get(req.page) is page
        if page.flush_pending:
            page.flush_pending = False
            if resident:
                cache.sets[page.set_id].pending_count -= 1
        if reason is None:
            self.stats.completed += 1
            cache.mark_clean(req.page, req.version)
        else:
            self.stats.discarded[reason] += 1
        if resident:
            pset = cache.sets[page.set_id]
            if not pset.in_flush_fifo and self._over(pset):
                pset.in_flush_fifo = True
                self.pending_sets.append(pset)
        self.pump()

    def check(self) -> None:
        assert 0 <= self.outstanding <= self.global_cap, "flush cap exceeded"
        ids = [s.index for s in self.pending_sets]
        assert len(ids) == len(set(ids)), "set queued twice"
        assert all(s.in_flush_fifo for s in self.pending_sets)
