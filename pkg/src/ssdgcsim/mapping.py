"""RAID-0 style striping of the array's logical page space over SSDs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple


class PageRequest(NamedTuple):
    ssd: int
    page: int          # array-global page id
    local_page: int    # page id on the owning SSD
    start: int         # byte offset within the page
    length: int
    partial: bool      # needs read-update-write


PAGE_SIZE_DEFAULT = 4096


@dataclass(frozen=True)
class ArrayLayout:
    num_ssds: int
    capacity_pages: int
    page_size: int = PAGE_SIZE_DEFAULT
    stripe_unit: int = PAGE_SIZE_DEFAULT

    def __post_init__(self) -> None:
        if self.num_ssds <= 0:
            raise ValueError("num_ssds must be positive")
        if self.stripe_unit <= 0 or self.stripe_unit % self.page_size:
            raise ValueError("stripe_unit must be a positive multiple of page_size")
        if self.capacity_pages <= 0:
            raise ValueError("capacity_pages must be positive")

    @property
    def pages_per_unit(self) -> int:
        return self.stripe_unit // self.page_size

    def ssd_of(self, page: int) -> int:
        return (page // self.pages_per_unit) % self.num_ssds

    def local_page(self, page: int) -> int:
        ppu = self.pages_per_unit
        unit, within = divmod(page, ppu)
        return (unit // self.num_ssds) * ppu + within

    def global_page(self, ssd: int, local: int) -> int:
        ppu = self.pages_per_unit
        row, within = divmod(local, ppu)
        return (row * self.num_ssds + ssd) * ppu + within

    def local_capacity(self, ssd: int) -> int:
        """Number of array pages that land on ``ssd``."""
        ppu = self.pages_per_unit
        full_units, rem = divmod(self.capacity_pages, ppu)
        rows, extra_units = divmod(full_units, self.num_ssds)
        n = rows * ppu
        if ssd < extra_units:
            n += ppu
        elif ssd == extra_units:
            n += rem
        return n

    def split(self, offset: int, size: int) -> list[PageRequest]:
        """Cover ``[offset, offset + size)`` with whole-page sub-requests."""
        if size <= 0:
            raise ValueError("request size must be positive")
        if offset < 0 or offset + size > self.capacity_pages * self.page_size:
            raise ValueError(f"byte range [{offset}, {offset + size}) outside array capacity")
        ps = self.page_size
        out = []
        pos = offset
        end = offset + size
        while pos < end:
            page, start = divmod(pos, ps)
            length = min(ps - start, end - pos)
            out.append(PageRequest(self.ssd_of(page), page, self.local_page(page), start, length, length < ps))
            pos += length
        return out
