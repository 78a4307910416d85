"""Set-associative write-back page cache with clean-first GClock eviction.

Pages hash to small fixed-size sets. Each set runs its own clock hand. A
victim is chosen among clean pages when the set has any, otherwise among
all pages, in which case the dirty victim must be written back (at high
priority) before its slot is reused.

Device I/O goes through a small backend object supplied by the owner:

    backend.read(page_id, callback)            # callback(data_tag)
    backend.writeback(page_id, tag, callback)  # callback()

Completion callbacks may run synchronously (cache hits) or later, from the
event loop.
"""

from __future__ import annotations

from collections import deque
from typing import Callable, Optional

from ssdgcsim.flusher import compute_flush_scores

_HASH_MULT = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

HIT = "hit"
MISS = "miss"
WAIT = "wait"


class CachePage:
    __slots__ = ("page", "set_id", "slot", "dirty", "hits", "dirty_version", "flush_pending",
                 "tag", "ready", "waiters")

    def __init__(self, page: int, set_id: int, slot: int, hits: int = 1) -> None:
        self.page = page
        self.set_id = set_id
        self.slot = slot
        self.dirty = False
        self.hits = hits
        self.dirty_version = 0
        self.flush_pending = False
        self.tag = 0
        # False while the page is being filled from flash or waiting for its
        # victim's writeback; such a slot is neither a hit nor evictable.
        self.ready = False
        self.waiters: list[Callable[[], None]] = []

    def __repr__(self) -> str:
        state = "D" if self.dirty else "C"
        return f"CachePage({self.page} {state} hits={self.hits} v={self.dirty_version})"


class PageSet:
    __slots__ = ("index", "slots", "hand", "dirty_count", "pending_count", "in_flush_fifo",
                 "waiters", "dirty_writes")

    def __init__(self, index: int, set_size: int) -> None:
        self.index = index
        self.slots: list[Optional[CachePage]] = [None] * set_size
        self.hand = 0
        self.dirty_count = 0
        self.pending_count = 0
        self.in_flush_fifo = False
        self.waiters: deque[Callable[[], None]] = deque()
        self.dirty_writes = 0

    @property
    def set_size(self) -> int:
        return len(self.slots)

    def distance(self, slot: int) -> int:
        """Slots the hand must advance before it examines ``slot``."""
        return (slot - self.hand) % len(self.slots)

    def recount_dirty(self) -> int:
        return sum(1 for p in self.slots if p is not None and p.ready and p.dirty)


def gclock_select(slots, hand: int, eligible: Callable[[CachePage], bool]) -> tuple[int, int]:
    """Sweep from ``hand``, decrementing the non-zero counter of every ready page.

    The first eligible page found with a zero counter is the victim, so the
    victim is the eligible page with the smallest ``hits * n + distance``:
    the same quantity the flusher ranks by. Ineligible pages still age as
    the hand passes (as in clean-first LRU, where every page shares one
    recency order); mid-fill slots are skipped untouched. Returns
    ``(victim_slot, new_hand)`` with the hand one past the victim. At least
    one eligible page must exist.
    """
    n = len(slots)
    i = hand
    while True:
        p = slots[i]
        if p is not None and p.ready:
            if p.hits == 0:
                if eligible(p):
                    return i, (i + 1) % n
            else:
                p.hits -= 1
        i = (i + 1) % n


def _is_clean(p: CachePage) -> bool:
    return p.ready and not p.dirty


def _is_ready(p: CachePage) -> bool:
    return p.ready


class PageCache:
    def __init__(self, num_pages: int, set_size: int = 12, gclock_cap: int = 8,
                 initial_hits: int = 1, backend=None,
                 on_dirtied: Optional[Callable[[PageSet], None]] = None,
                 track_writes: bool = False) -> None:
        if set_size <= 0 or num_pages < set_size:
            raise ValueError("cache must hold at least one full set")
        if not 0 <= initial_hits <= gclock_cap:
            raise ValueError("initial_hits must lie in [0, gclock_cap]")
        self.set_size = set_size
        self.num_sets = num_pages // set_size
        self.capacity = self.num_sets * set_size
        self.gclock_cap = gclock_cap
        self.initial_hits = initial_hits
        self.sets = [PageSet(i, set_size) for i in range(self.num_sets)]
        self.pages: dict[int, CachePage] = {}
        self.backend = backend
        self.on_dirtied = on_dirtied
        self._next_tag = 2          # tag 1 is the preconditioned flash image
        self.hits = 0
        self.misses = 0
        self.dirty_evictions = 0
        self.clean_evictions = 0
        self.clean_first_violations = 0
        # page -> tag of the last acknowledged write (shadow store oracle)
        self.acked: dict[int, int] | None = {} if track_writes else None

    # ----------------------------------------------------------- structure

    def lookup_set(self, page_id: int) -> PageSet:
        if self.num_sets == 1:
            return self.sets[0]
        h = ((page_id + 1) * _HASH_MULT) & _MASK64
        return self.sets[(h >> 32) % self.num_sets]

    def set_rank(self, page: CachePage) -> int:
        """Flush rank of ``page`` among all ready pages of its set."""
        pset = self.sets[page.set_id]
        for e in compute_flush_scores(pset, include=_is_ready):
            if e.slot == page.slot:
                return e.flush_score
        raise KeyError(page.page)

    def dirty_pages(self) -> int:
        return sum(s.dirty_count for s in self.sets)

    def new_tag(self) -> int:
        t = self._next_tag
        self._next_tag += 1
        return t

    # ------------------------------------------------------------ eviction

    def evict(self, pset: PageSet) -> Optional[tuple[int, CachePage]]:
        """Choose and unlink a victim from a full set.

        Clean pages are preferred outright; the sweep over dirty pages only
        runs when the set holds no clean page. Returns ``(slot, victim)`` or
        None if every slot is mid-fill.
        """
        slots = pset.slots
        has_clean = has_ready = False
        for p in slots:
            if p is not None and p.ready:
                has_ready = True
                if not p.dirty:
                    has_clean = True
                    break
        if not has_ready:
            return None
        eligible = _is_clean if has_clean else _is_ready
        slot, pset.hand = gclock_select(slots, pset.hand, eligible)
        victim = slots[slot]
        assert victim is not None
        if victim.dirty:
            if has_clean:
                self.clean_first_violations += 1
            pset.dirty_count -= 1
            self.dirty_evictions += 1
        else:
            self.clean_evictions += 1
        if victim.flush_pending:
            victim.flush_pending = False
            pset.pending_count -= 1
        del self.pages[victim.page]
        slots[slot] = None
        return slot, victim

    # --------------------------------------------------------------- access

    def read(self, page_id: int, done: Callable[[], None]) -> str:
        return self._access(page_id, False, False, done)

    def write(self, page_id: int, partial: bool, done: Callable[[], None]) -> str:
        return self._access(page_id, True, partial, done)

    def _touch(self, page: CachePage) -> None:
        if page.hits < self.gclock_cap:
            page.hits += 1

    def _dirty(self, page: CachePage) -> None:
        tag = self.new_tag()
        page.tag = tag
        page.dirty_version = tag
        pset = self.sets[page.set_id]
        pset.dirty_writes += 1
        if not page.dirty:
            page.dirty = True
            pset.dirty_count += 1
        if self.acked is not None:
            self.acked[page.page] = tag
        if self.on_dirtied is not None:
            self.on_dirtied(pset)

    def _access(self, page_id: int, is_write: bool, partial: bool, done: Callable[[], None]) -> str:
        page = self.pages.get(page_id)
        if page is not None:
            if not page.ready:
                page.waiters.append(lambda: self._access(page_id, is_write, partial, done))
                return WAIT
            self.hits += 1
            self._touch(page)
            if is_write:
                self._dirty(page)
            done()
            return HIT

        pset = self.lookup_set(page_id)
        slots = pset.slots
        victim = None
        try:
            slot = slots.index(None)
        except ValueError:
            picked = self.evict(pset)
            if picked is None:
                pset.waiters.append(lambda: self._access(page_id, is_write, partial, done))
                return WAIT
            slot, victim = picked
        self.misses += 1
        page = CachePage(page_id, pset.index, slot, self.initial_hits)
        slots[slot] = page
        self.pages[page_id] = page
        need_read = not is_write or partial

        def filled(data_tag: int) -> None:
            page.tag = data_tag
            self._install(page, is_write, done)

        def after_writeback() -> None:
            if need_read:
                self.backend.read(page_id, filled)
            else:
                self._install(page, True, done)

        if victim is not None and victim.dirty:
            self.backend.writeback(victim.page, victim.tag, after_writeback)
        else:
            after_writeback()
        return MISS

    def _install(self, page: CachePage, is_write: bool, done: Callable[[], None]) -> None:
        page.ready = True
        if is_write:
            self._dirty(page)
        done()
        waiters, page.waiters = page.waiters, []
        for w in waiters:
            w()
        pset = self.sets[page.set_id]
        if pset.waiters:
            pending, pset.waiters = pset.waiters, deque()
            for w in pending:
                w()

    # ---------------------------------------------------------------- flush

    def mark_clean(self, page_id: int, dirty_version_at_issue: int) -> bool:
        """Clean the page if nobody dirtied it since the flush was issued."""
        page = self.pages.get(page_id)
        if page is None or not page.ready or not page.dirty:
            return False
        if page.dirty_version != dirty_version_at_issue:
            return False
        page.dirty = False
        self.sets[page.set_id].dirty_count -= 1
        return True

    def check(self) -> None:
        for s in self.sets:
            assert s.dirty_count == s.recount_dirty(), f"set {s.index} dirty_count drift"
            assert s.pending_count == sum(1 for p in s.slots if p is not None and p.flush_pending)
            assert 0 <= s.hand < s.set_size
            for i, p in enumerate(s.slots):
                if p is not None:
                    assert p.slot == i and self.pages[p.page] is p
                    assert 0 <= p.hits <= self.gclock_cap
