"""Data model for a log-structured store: segments, page map, update clock.

The store is a flat array of equal-sized segments. Pages live in exactly one
segment (or in the engine's staging buffer); overwrites never happen in
place. All per-segment bookkeeping is kept in flat numpy arrays so the hot
write path and victim scoring can run vectorized or under numba.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np


class ConfigError(ValueError):
    """Infeasible or inconsistent store/run configuration."""


class SimulationFault(RuntimeError):
    """Internal state violated a model precondition (simulation bug)."""


class LiveDataLossFault(SimulationFault):
    """Attempt to free a segment that still holds live pages."""


class CleaningLivelock(SimulationFault):
    """No victim can reclaim space and the free list is exhausted."""


class SegState(IntEnum):
    FREE = 0
    OPEN_USER = 1
    OPEN_GC = 2
    SEALED = 3


# page_seg sentinel values
PAGE_UNMAPPED = -2
PAGE_IN_BUFFER = -1


def dedupe_keep_last(arr: np.ndarray) -> np.ndarray:
    """Drop duplicate values, keeping each value's last occurrence in order."""
    if len(arr) <= 1:
        return arr
    rev = arr[::-1]
    _, first_in_rev = np.unique(rev, return_index=True)
    return rev[np.sort(first_in_rev)][::-1]


@dataclass
class StoreConfig:
    """Geometry and cleaning parameters of the simulated store."""

    capacity: int = 2 << 30
    page_size: int = 4096
    segment_size: int = 2 * 2**20
    fill_factor: float = 0.8
    gc_trigger_free: int = 32
    gc_batch: int = 64
    sort_buffer_segments: int = 16

    def __post_init__(self):
        if self.page_size <= 0 or self.segment_size <= 0 or self.capacity <= 0:
            raise ConfigError("sizes must be positive")
        if self.segment_size % self.page_size != 0:
            raise ConfigError("segment_size must be divisible by page_size")
        if self.capacity % self.segment_size != 0:
            raise ConfigError("capacity must be divisible by segment_size")
        if not 0.0 < self.fill_factor < 1.0:
            raise ConfigError(f"fill_factor must be in (0, 1), got {self.fill_factor}")
        if self.gc_trigger_free < 1 or self.gc_trigger_free >= self.num_segments:
            raise ConfigError("gc_trigger_free must be in [1, num_segments)")
        if not 1 <= self.gc_batch <= self.num_segments - self.gc_trigger_free:
            raise ConfigError("gc_batch must be in [1, num_segments - gc_trigger_free]")
        if self.sort_buffer_segments < 1:
            raise ConfigError("sort_buffer_segments must be >= 1")
        if self.logical_pages < 1:
            raise ConfigError("store too small: zero logical pages")
        # the initial load must leave at least the trigger worth of free segments
        load_segments = -(-self.logical_pages // self.pages_per_segment)
        if self.num_segments - load_segments <= self.gc_trigger_free:
            raise ConfigError(
                "fill_factor leaves too few free segments for cleaning "
                f"({self.num_segments - load_segments} free after load, "
                f"trigger {self.gc_trigger_free})"
            )

    @property
    def pages_per_segment(self) -> int:
        return self.segment_size // self.page_size

    @property
    def num_segments(self) -> int:
        return self.capacity // self.segment_size

    @property
    def logical_pages(self) -> int:
        return int(self.fill_factor * self.capacity / self.page_size)


@dataclass
class Clock:
    """Global update counter: one tick per user page write, never for GC moves."""

    u_now: int = 0

    def tick(self) -> int:
        self.u_now += 1
        return self.u_now


@dataclass
class SegmentMeta:
    """Snapshot of one segment's cleaning-relevant state."""

    id: int
    state: SegState
    free_bytes: int          # A
    live_pages: int          # C
    up2: float               # penultimate-update estimate, clock units
    up1: int                 # last-update estimate, clock units
    sealed_at: int

    def emptiness(self, segment_size: int) -> float:
        return self.free_bytes / segment_size


@dataclass
class PageLocation:
    page_id: int
    segment_id: int
    size: int
    carried_up2: float


@dataclass
class WampReport:
    """Write-amplification counters for one run."""

    user_writes: int
    gc_writes: int
    wamp_cumulative: float
    wamp_window: float
    cleanings: int
    avg_E_at_clean: float

    @property
    def implied_cost_seg(self) -> float:
        """Empirical per-segment write cost, 2 * (1 + wamp)."""
        return 2.0 * (1.0 + self.wamp_window)


def seal_segment(meta: SegmentMeta, pages: Sequence[PageLocation], clock: Clock,
                 segment_size: int) -> SegmentMeta:
    """Seal a batch of pages into a segment and derive its summary fields.

    The segment's update-history estimate becomes the mean of the carried
    values of all pages written to it; its last-update time is the seal time.
    """
    if meta.state not in (SegState.OPEN_USER, SegState.OPEN_GC):
        raise SimulationFault(f"segment {meta.id} is not open (state {meta.state})")
    total = sum(p.size for p in pages)
    if total > segment_size:
        raise SimulationFault(
            f"segment overflow: {total} bytes into {segment_size}-byte segment")
    n = len(pages)
    up2 = sum(p.carried_up2 for p in pages) / n if n else 0.0
    return SegmentMeta(
        id=meta.id,
        state=SegState.SEALED,
        free_bytes=segment_size - total,
        live_pages=n,
        up2=up2,
        up1=clock.u_now,
        sealed_at=clock.u_now,
    )


class Store:
    """Mutable store state: segment pool, page map, free list, clock.

    State is struct-of-arrays; `segment(sid)` materializes a SegmentMeta view.
    A Store instance is confined to a single simulation run.
    """

    def __init__(self, config: StoreConfig, track_rate: bool = False):
        self.config = config
        cfg = config
        nseg = cfg.num_segments
        S = cfg.pages_per_segment
        P = cfg.logical_pages
        self.clock = Clock()
        self.seg_state = np.full(nseg, SegState.FREE, dtype=np.int8)
        self.seg_free = np.full(nseg, cfg.segment_size, dtype=np.int64)   # A
        self.seg_live = np.zeros(nseg, dtype=np.int64)                    # C
        self.seg_up2 = np.zeros(nseg, dtype=np.float64)
        self.seg_up1 = np.zeros(nseg, dtype=np.int64)
        self.seg_sealed_at = np.zeros(nseg, dtype=np.int64)
        self.seg_slots = np.zeros((nseg, S), dtype=np.int64)
        self.seg_fill = np.zeros(nseg, dtype=np.int64)
        self.seg_up2sum = np.zeros(nseg, dtype=np.float64)
        self.seg_rate = np.zeros(nseg, dtype=np.float64)  # sum of oracle p over live pages
        self.page_seg = np.full(P, PAGE_UNMAPPED, dtype=np.int64)
        self.page_carried = np.zeros(P, dtype=np.float64)
        self.free_list: list[int] = list(range(nseg))
        self.track_rate = track_rate
        self.oracle_p: np.ndarray | None = None

    # -- basic accessors -------------------------------------------------

    @property
    def u_now(self) -> int:
        return self.clock.u_now

    @property
    def free_count(self) -> int:
        return len(self.free_list)

    def segment(self, sid: int) -> SegmentMeta:
        return SegmentMeta(
            id=sid,
            state=SegState(self.seg_state[sid]),
            free_bytes=int(self.seg_free[sid]),
            live_pages=int(self.seg_live[sid]),
            up2=float(self.seg_up2[sid]),
            up1=int(self.seg_up1[sid]),
            sealed_at=int(self.seg_sealed_at[sid]),
        )

    def sealed_ids(self) -> np.ndarray:
        return np.flatnonzero(self.seg_state == SegState.SEALED)

    def location(self, page_id: int) -> PageLocation | None:
        sid = int(self.page_seg[page_id])
        if sid < 0:
            return None
        return PageLocation(page_id, sid, self.config.page_size,
                            float(self.page_carried[page_id]))

    def live_pages_of(self, sid: int) -> np.ndarray:
        """Current pages of a segment, in write order (lazy liveness check).

        A page rewritten into the same segment while it was open leaves a
        stale earlier slot; only the latest slot per page is live.
        """
        slots = self.seg_slots[sid, : self.seg_fill[sid]]
        return dedupe_keep_last(slots[self.page_seg[slots] == sid])

    # -- segment lifecycle -----------------------------------------------

    def alloc_segment(self, state: SegState) -> int:
        if not self.free_list:
            raise CleaningLivelock("free list exhausted")
        sid = self.free_list.pop(0)
        self.seg_state[sid] = state
        self.seg_free[sid] = self.config.segment_size
        self.seg_live[sid] = 0
        self.seg_fill[sid] = 0
        self.seg_up2sum[sid] = 0.0
        self.seg_rate[sid] = 0.0
        return sid

    def append_page(self, sid: int, page_id: int, carried: float | None = None):
        """Append a page version into an open segment."""
        S = self.config.pages_per_segment
        f = int(self.seg_fill[sid])
        if f >= S:
            raise SimulationFault(f"segment {sid} overflow")
        if carried is None:
            carried = float(self.page_carried[page_id])
        else:
            self.page_carried[page_id] = carried
        self.seg_slots[sid, f] = page_id
        self.seg_fill[sid] = f + 1
        self.seg_free[sid] -= self.config.page_size
        self.seg_live[sid] += 1
        self.seg_up2sum[sid] += carried
        self.page_seg[page_id] = sid
        if self.track_rate:
            self.seg_rate[sid] += self.oracle_p[page_id]

    def seal(self, sid: int):
        """Finalize an open segment: derive up2 from the written pages."""
        n = int(self.seg_fill[sid])
        self.seg_state[sid] = SegState.SEALED
        self.seg_up2[sid] = self.seg_up2sum[sid] / n if n else 0.0
        self.seg_up1[sid] = self.clock.u_now
        self.seg_sealed_at[sid] = self.clock.u_now

    def note_overwrite(self, page_id: int) -> SegmentMeta:
        """Invalidate a page's current copy; update its old segment's counters.

        The old segment gains the page's bytes back, loses one live page, and
        its update-history estimate advances by the midpoint rule.
        """
        sid = int(self.page_seg[page_id])
        if sid < 0:
            raise SimulationFault(f"page {page_id} has no mapped location")
        self.seg_free[sid] += self.config.page_size
        self.seg_live[sid] -= 1
        u = self.clock.u_now
        up2 = self.seg_up2[sid]
        self.seg_up2[sid] = up2 + 0.5 * (u - up2)
        self.seg_up1[sid] = u
        if self.track_rate:
            self.seg_rate[sid] -= self.oracle_p[page_id]
        self.page_seg[page_id] = PAGE_UNMAPPED
        return self.segment(sid)

    def free_segment(self, sid: int):
        if self.seg_live[sid] != 0:
            raise LiveDataLossFault(
                f"segment {sid} still holds {int(self.seg_live[sid])} live pages")
        self.seg_state[sid] = SegState.FREE
        self.seg_free[sid] = self.config.segment_size
        self.seg_fill[sid] = 0
        self.seg_up2sum[sid] = 0.0
        self.seg_rate[sid] = 0.0
        self.free_list.append(sid)

    def free_segments_bulk(self, sids: Iterable[int]):
        for sid in sids:
            self.free_segment(int(sid))

    # -- initial load ------------------------------------------------------

    def load_sequential(self):
        """Write all logical pages once, in page order, before the workload.

        Carried update-history values start at zero (no history yet); the
        clock does not advance.
        """
        P = self.config.logical_pages
        S = self.config.pages_per_segment
        pages = np.arange(P, dtype=np.int64)
        for start in range(0, P, S):
            grp = pages[start : start + S]
            sid = self.alloc_segment(SegState.OPEN_USER)
            n = len(grp)
            self.seg_slots[sid, :n] = grp
            self.seg_fill[sid] = n
            self.seg_live[sid] = n
            self.seg_free[sid] = self.config.segment_size - n * self.config.page_size
            self.page_seg[grp] = sid
            if self.track_rate:
                self.seg_rate[sid] = float(self.oracle_p[grp].sum())
            self.seal(sid)

    # -- invariants (used by tests) ----------------------------------------

    def total_live(self) -> int:
        return int(self.seg_live.sum())

    def total_free_bytes(self) -> int:
        return int(self.seg_free.sum())

    def check_invariants(self):
        """Cross-check counters against the page map; raises on drift."""
        cfg = self.config
        mapped = self.page_seg >= 0
        counts = np.bincount(self.page_seg[mapped], minlength=cfg.num_segments)
        if not np.array_equal(counts, self.seg_live):
            raise SimulationFault("live-page counters disagree with page map")
        sealed = self.seg_state == SegState.SEALED
        expect_free = cfg.segment_size - self.seg_live * cfg.page_size
        if not np.array_equal(self.seg_free[sealed], expect_free[sealed]):
            # sealed segments may only have free bytes from dead or unwritten slots
            raise SimulationFault("byte accounting broken on sealed segments")
        if (self.seg_up2 > self.clock.u_now + 1e-9).any():
            raise SimulationFault("update history ahead of the clock")
