"""Simulation engine: user write path, sort buffer, cleaning cycles, metrics.

One Simulator drives one run: sequential initial load, then a seeded write
stream. User writes and relocated survivors fill disjoint open segments;
for the sorting policies both streams are ordered by update history so that
segments receive pages of similar update frequency. Cleaning triggers when
the free list drops below the configured threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import (CleaningLivelock, ConfigError, SegState, SimulationFault,
                    Store, StoreConfig, WampReport, dedupe_keep_last)
from .policies import MultiLogSet, PolicyKind, select_victim_ids
from .workloads import Workload, WorkloadSpec, make_workload

DRAW_CHUNK = 1 << 20


@dataclass
class RunSpec:
    """Everything needed to reproduce one simulation run."""

    config: StoreConfig
    policy: PolicyKind
    workload: WorkloadSpec
    total_user_writes: int | None = None   # default: write_multiplier * logical pages
    write_multiplier: float = 100.0
    measure_window: float = 0.5            # trailing fraction used for windowed metrics
    seed: int = 0
    gc_pack_serpentine: bool = True        # alternate survivor pack direction per cycle
    use_kernels: bool = True
    collect_cycle_trace: bool = False      # keep (cycle, victim, emptiness) records

    def __post_init__(self):
        if not 0.0 < self.measure_window <= 1.0:
            raise ConfigError("measure_window must be in (0, 1]")
        if self.total_user_writes is not None and self.total_user_writes < 0:
            raise ConfigError("total_user_writes must be >= 0")
        if self.write_multiplier <= 0:
            raise ConfigError("write_multiplier must be positive")

    def resolved_total(self, workload: Workload) -> int:
        remaining = workload.remaining()
        if self.total_user_writes is not None:
            total = self.total_user_writes
        elif remaining is not None:
            total = remaining
        else:
            total = int(self.write_multiplier * self.config.logical_pages)
        if remaining is not None:
            total = min(total, remaining)
        return total


class SortBuffer:
    """Staging area for pending user writes, drained by whole flushes."""

    def __init__(self, capacity_pages: int):
        self.capacity = capacity_pages
        self.entries = np.zeros(capacity_pages, dtype=np.int64)
        self.count = 0
        # coldest history value seen in the current batch (first-write fallback)
        self.batch_min = np.array([np.inf])

    @property
    def full(self) -> bool:
        return self.count >= self.capacity

    def reset(self):
        self.count = 0
        self.batch_min[0] = np.inf


class Simulator:
    """Single-run simulator; confined to one thread."""

    def __init__(self, spec: RunSpec):
        self.spec = spec
        self.policy = spec.policy
        cfg = spec.config
        self.cfg = cfg
        self.store = Store(cfg, track_rate=spec.policy.uses_oracle)
        self.workload = make_workload(spec.workload, cfg.logical_pages, spec.seed)
        if spec.policy.uses_oracle:
            self.store.oracle_p = self.workload.oracle()
        else:
            self.store.oracle_p = np.zeros(1)  # placeholder for kernel signature
        self.total = spec.resolved_total(self.workload)
        window_len = int(round(spec.measure_window * self.total))
        self.cut = self.total - window_len
        self.user_writes = 0
        self.gc_writes = 0
        self._gc_writes_at_cut = 0
        self.cleanings = 0
        self._win_E_sum = 0.0
        self._win_E_count = 0
        self._gc_dir = 1
        self._in_gc = False
        self.cycle_trace: list[tuple[int, int, float]] | None = (
            [] if spec.collect_cycle_trace else None)
        if spec.use_kernels and _kernels.HAVE_NUMBA:
            self._consume_buffered = _kernels.consume_buffered
            self._consume_direct = _kernels.consume_direct
        else:
            self._consume_buffered = _kernels.consume_buffered_py
            self._consume_direct = _kernels.consume_direct_py
        self.buffer = SortBuffer(cfg.sort_buffer_segments * cfg.pages_per_segment)
        self.open_user: int | None = None
        self.open_gc: int | None = None
        self._direct_batch_min = np.array([np.inf])
        self.multilog: MultiLogSet | None = None
        if self.policy.is_multilog:
            self.multilog = MultiLogSet(cfg.pages_per_segment)
            self._pressure_log = 0
            self._load_multilog()
        else:
            self.store.load_sequential()

    # -- public API --------------------------------------------------------

    def run(self) -> WampReport:
        if self.policy.is_multilog:
            self._run_multilog()
        elif self.policy.separate_user_writes:
            self._run_buffered()
        else:
            self._run_direct()
        return self.report()

    def user_write(self, page_id: int):
        """Apply one user write outside a generated stream.

        Ticks the clock, invalidates the page's current copy, advances its
        update-history estimate, and stages the new version per the policy's
        write path (including any flush or cleaning that falls due).
        """
        if not 0 <= page_id < self.cfg.logical_pages:
            raise SimulationFault(f"page id {page_id} outside the logical store")
        st = self.store
        if self.policy.is_multilog:
            self._multilog_write(page_id)
            self.user_writes += 1
            if self.user_writes == self.cut:
                self._gc_writes_at_cut = self.gc_writes
            return
        draws = np.array([page_id], dtype=np.int64)
        before = st.clock.u_now
        if self.policy.separate_user_writes:
            buf = self.buffer
            _, u, buf.count = _kernels.consume_buffered_py(
                draws, 0, st.clock.u_now, st.page_seg, st.page_carried,
                st.seg_free, st.seg_live, st.seg_up2, st.seg_up1, st.seg_rate,
                st.oracle_p, st.track_rate, buf.entries, buf.count, buf.capacity,
                buf.batch_min, self.cfg.page_size)
            st.clock.u_now = int(u)
            self._account_user_writes(before, int(u))
            if buf.full:
                self.flush_buffer()
        else:
            if self.open_user is None:
                self.open_user = self._alloc_with_gc(SegState.OPEN_USER)
                self._direct_batch_min[0] = np.inf
            _, u, filled = _kernels.consume_direct_py(
                draws, 0, st.clock.u_now, st.page_seg, st.page_carried,
                st.seg_free, st.seg_live, st.seg_up2, st.seg_up1, st.seg_rate,
                st.oracle_p, st.track_rate, st.seg_slots, st.seg_fill,
                st.seg_up2sum, self.open_user, self._direct_batch_min,
                self.cfg.page_size, self.cfg.pages_per_segment)
            st.clock.u_now = int(u)
            self._account_user_writes(before, int(u))
            if filled:
                st.seal(self.open_user)
                self.open_user = self._alloc_with_gc(SegState.OPEN_USER)
                self._direct_batch_min[0] = np.inf

    def report(self) -> WampReport:
        uw, gw = self.user_writes, self.gc_writes
        wamp_cum = gw / uw if uw > 0 else math.nan
        win_user = uw - self.cut
        wamp_win = ((gw - self._gc_writes_at_cut) / win_user
                    if win_user > 0 else math.nan)
        avg_e = (self._win_E_sum / self._win_E_count
                 if self._win_E_count > 0 else math.nan)
        return WampReport(
            user_writes=uw,
            gc_writes=gw,
            wamp_cumulative=wamp_cum,
            wamp_window=wamp_win,
            cleanings=self.cleanings,
            avg_E_at_clean=avg_e,
        )

    # -- write paths ---------------------------------------------------------

    def _run_buffered(self):
        st = self.store
        buf = self.buffer
        draws = None
        i = 0
        while self.user_writes < self.total:
            if draws is None or i >= len(draws):
                draws = self.workload.next_batch(
                    min(DRAW_CHUNK, self.total - self.user_writes))
                i = 0
                if len(draws) == 0:
                    break
            before = st.clock.u_now
            i, u, buf.count = self._consume_buffered(
                draws, i, st.clock.u_now, st.page_seg, st.page_carried,
                st.seg_free, st.seg_live, st.seg_up2, st.seg_up1, st.seg_rate,
                st.oracle_p, st.track_rate, buf.entries, buf.count, buf.capacity,
                buf.batch_min, self.cfg.page_size)
            i, u, buf.count = int(i), int(u), int(buf.count)
            st.clock.u_now = u
            self._account_user_writes(before, u)
            if buf.full:
                self.flush_buffer()
        if buf.count > 0:
            self.flush_buffer()  # end-of-run drain

    def _run_direct(self):
        st = self.store
        if self.open_user is None:
            self.open_user = self._alloc_with_gc(SegState.OPEN_USER)
        batch_min = self._direct_batch_min
        draws = None
        i = 0
        while self.user_writes < self.total:
            if draws is None or i >= len(draws):
                draws = self.workload.next_batch(
                    min(DRAW_CHUNK, self.total - self.user_writes))
                i = 0
                if len(draws) == 0:
                    break
            before = st.clock.u_now
            i, u, filled = self._consume_direct(
                draws, i, st.clock.u_now, st.page_seg, st.page_carried,
                st.seg_free, st.seg_live, st.seg_up2, st.seg_up1, st.seg_rate,
                st.oracle_p, st.track_rate, st.seg_slots, st.seg_fill,
                st.seg_up2sum, self.open_user, batch_min, self.cfg.page_size,
                self.cfg.pages_per_segment)
            i, u = int(i), int(u)
            st.clock.u_now = u
            self._account_user_writes(before, u)
            if filled:
                st.seal(self.open_user)
                self.open_user = self._alloc_with_gc(SegState.OPEN_USER)
                batch_min[0] = np.inf

    def _account_user_writes(self, before_u: int, after_u: int):
        self.user_writes += after_u - before_u
        if before_u < self.cut <= after_u:
            # cleaning never runs inside a kernel call, so the GC counter at
            # the crossing equals its current value
            self._gc_writes_at_cut = self.gc_writes

    def flush_buffer(self, sort: bool | None = None):
        """Drain the buffer into sealed segments.

        sorted mode: ascending update-history order, ties by page id;
        unsorted: arrival order. The flag defaults to the policy's
        user-stream separation setting.
        """
        st = self.store
        buf = self.buffer
        n = buf.count
        if n == 0:
            return
        entries = buf.entries[:n].copy()
        if sort is None:
            sort = self.policy.separate_user_writes
        if sort:
            order = np.lexsort((entries, st.page_carried[entries]))
            entries = entries[order]
        S = self.cfg.pages_per_segment
        for g in range(0, n, S):
            grp = entries[g : g + S]
            sid = self._alloc_with_gc(SegState.OPEN_USER)
            self._pack_group(sid, grp)
            st.seal(sid)
        buf.reset()

    def _pack_group(self, sid: int, grp: np.ndarray):
        st = self.store
        k = len(grp)
        st.seg_slots[sid, :k] = grp
        st.seg_fill[sid] = k
        st.seg_live[sid] = k
        st.seg_free[sid] = self.cfg.segment_size - k * self.cfg.page_size
        st.seg_up2sum[sid] = float(st.page_carried[grp].sum())
        if st.track_rate:
            st.seg_rate[sid] = float(st.oracle_p[grp].sum())
        st.page_seg[grp] = sid

    # -- allocation and cleaning ----------------------------------------------

    def _ensure_headroom(self):
        st = self.store
        attempts = 0
        while st.free_count < max(self.cfg.gc_trigger_free, 1):
            # transiently net-zero cycles are fine; a truly wedged store
            # keeps spinning and trips the bound
            if attempts > 8 * self.cfg.num_segments:
                raise CleaningLivelock(
                    "cleaning makes no progress and the free list is short")
            self.gc_cycle()
            attempts += 1

    def _alloc_with_gc(self, state: SegState) -> int:
        self._ensure_headroom()
        return self.store.alloc_segment(state)

    def _alloc_in_gc(self, state: SegState) -> int:
        # cleaning already freed its victims; physical availability only
        return self.store.alloc_segment(state)

    def gc_cycle(self) -> int:
        """One cleaning cycle: select victims, relocate survivors, free them.

        Returns the number of relocated pages.
        """
        if self.policy.is_multilog:
            return self._gc_cycle_multilog()
        st = self.store
        if self._in_gc:
            raise SimulationFault("reentrant cleaning cycle")
        self._in_gc = True
        try:
            victims = select_victim_ids(st, self.policy, self.cfg.gc_batch)
            if len(victims) == 0:
                raise CleaningLivelock("no sealed segments to clean")
            self._record_victims(victims)
            survivors = self._gather_live(victims)
            st.seg_live[victims] = 0
            st.free_segments_bulk(victims)
            survivors = self._order_survivors(survivors)
            relocated = self._relocate(survivors)
            self.cleanings += 1
            return relocated
        finally:
            self._in_gc = False

    def _record_victims(self, victims: np.ndarray):
        E = self.store.seg_free[victims] / self.cfg.segment_size
        if self.user_writes >= self.cut:
            self._win_E_sum += float(E.sum())
            self._win_E_count += len(victims)
        if self.cycle_trace is not None:
            for sid, e in zip(victims, E):
                self.cycle_trace.append((self.cleanings, int(sid), float(e)))

    def _gather_live(self, victims: np.ndarray) -> np.ndarray:
        st = self.store
        S = self.cfg.pages_per_segment
        cand = st.seg_slots[victims].reshape(-1)
        owner = np.repeat(victims, S)
        in_fill = (np.arange(S)[None, :] < st.seg_fill[victims][:, None]).reshape(-1)
        live = cand[(st.page_seg[cand] == owner) & in_fill]
        # a page rewritten into the same open segment leaves a stale slot
        live = dedupe_keep_last(live)
        expect = int(st.seg_live[victims].sum())
        if len(live) != expect:
            raise SimulationFault(
                f"liveness drift: gathered {len(live)}, counters say {expect}")
        return live

    def _order_survivors(self, survivors: np.ndarray) -> np.ndarray:
        if not self.policy.separate_gc_writes or len(survivors) == 0:
            return survivors
        st = self.store
        if self.policy.name == "mdc_opt":
            key = st.oracle_p[survivors]
        else:
            key = st.page_carried[survivors]
        out = survivors[np.lexsort((survivors, key))]
        if self.spec.gc_pack_serpentine:
            # the partially filled relocation segment carries across cycles;
            # alternating the direction keeps its continuation at a similar
            # update frequency instead of splicing the two extremes together
            if self._gc_dir < 0:
                out = out[::-1]
            self._gc_dir = -self._gc_dir
        return out

    def _relocate(self, survivors: np.ndarray) -> int:
        st = self.store
        S = self.cfg.pages_per_segment
        pos = 0
        total = len(survivors)
        while pos < total:
            if self.open_gc is None:
                self.open_gc = self._alloc_in_gc(SegState.OPEN_GC)
            sid = self.open_gc
            room = S - int(st.seg_fill[sid])
            take = survivors[pos : pos + room]
            f0 = int(st.seg_fill[sid])
            k = len(take)
            st.seg_slots[sid, f0 : f0 + k] = take
            st.seg_fill[sid] = f0 + k
            st.seg_live[sid] += k
            st.seg_free[sid] -= k * self.cfg.page_size
            st.seg_up2sum[sid] += float(st.page_carried[take].sum())
            if st.track_rate:
                st.seg_rate[sid] += float(st.oracle_p[take].sum())
            st.page_seg[take] = sid
            pos += k
            self.gc_writes += k
            if st.seg_fill[sid] == S:
                st.seal(sid)
                self.open_gc = None
        return total

    # -- multi-log path ---------------------------------------------------------

    def _page_frequency(self, pid: int, carried: float) -> float:
        if self.policy.uses_oracle:
            return float(self.store.oracle_p[pid])
        return 2.0 / max(self.store.clock.u_now - carried, 1.0)

    def _load_multilog(self):
        st = self.store
        for pid in range(self.cfg.logical_pages):
            st.page_carried[pid] = 0.0
            self._multilog_place(pid)

    def _multilog_place(self, pid: int):
        """Append a page version to the log matching its frequency."""
        st = self.store
        mls = self.multilog
        freq = self._page_frequency(pid, float(st.page_carried[pid]))
        log = mls.route(freq)
        if log.open_sid is None:
            self._pressure_log = log.id
            self._ensure_headroom()
            # cleaning may have merged the log away or opened a segment for
            # it while relocating; resolve the live log again before binding
            log = mls.route(freq)
            if log.open_sid is None:
                log.open_sid = st.alloc_segment(SegState.OPEN_USER)
                mls.seg_to_log[log.open_sid] = log.id
        sid = log.open_sid
        st.append_page(sid, pid)
        log.live_pages += 1
        if st.seg_fill[sid] == self.cfg.pages_per_segment:
            st.seal(sid)
            log.sealed.append(sid)
            log.open_sid = None

    def _multilog_write(self, pid: int):
        st = self.store
        u = st.clock.tick()
        old = int(st.page_seg[pid])
        if old >= 0:
            self.multilog.note_invalidate(old)
            st.note_overwrite(pid)
            c = st.page_carried[pid]
            st.page_carried[pid] = c + 0.5 * (u - c)
        else:
            st.page_carried[pid] = 0.0
        self._multilog_place(pid)

    def _run_multilog(self):
        draws = None
        i = 0
        while self.user_writes < self.total:
            if draws is None or i >= len(draws):
                draws = self.workload.next_batch(
                    min(DRAW_CHUNK, self.total - self.user_writes))
                i = 0
                if len(draws) == 0:
                    break
            self._multilog_write(int(draws[i]))
            i += 1
            self.user_writes += 1
            if self.user_writes == self.cut:
                self._gc_writes_at_cut = self.gc_writes

    def _gc_cycle_multilog(self) -> int:
        st = self.store
        mls = self.multilog
        self._in_gc = True
        try:
            victim, log = mls.select_victim(self._pressure_log, st)
            self._record_victims(np.array([victim]))
            live = st.live_pages_of(victim)
            log.sealed.remove(victim)
            log.live_pages -= len(live)
            mls.seg_to_log.pop(victim, None)
            st.seg_live[victim] = 0
            st.seg_free[victim] = self.cfg.segment_size
            st.free_segment(victim)
            for pid in live:
                self._multilog_relocate(int(pid))
            self.gc_writes += len(live)
            self.cleanings += 1
            mls.merge_underfull(st)
            return len(live)
        finally:
            self._in_gc = False

    def _multilog_relocate(self, pid: int):
        st = self.store
        mls = self.multilog
        log = mls.route(self._page_frequency(pid, float(st.page_carried[pid])))
        if log.open_sid is None:
            if st.free_count > 0:
                log.open_sid = self._alloc_in_gc(SegState.OPEN_GC)
                mls.seg_to_log[log.open_sid] = log.id
            else:
                # free-list pressure: spill into any open segment with room
                # rather than demanding one new segment per target log
                log = self._spill_target()
        sid = log.open_sid
        st.append_page(sid, pid)
        log.live_pages += 1
        if st.seg_fill[sid] == self.cfg.pages_per_segment:
            st.seal(sid)
            log.sealed.append(sid)
            log.open_sid = None

    def _spill_target(self):
        st = self.store
        S = self.cfg.pages_per_segment
        for log in sorted(self.multilog.logs.values(), key=lambda lg: lg.id):
            if log.open_sid is not None and st.seg_fill[log.open_sid] < S:
                return log
        raise CleaningLivelock("multi-log relocation has nowhere to write")


def run(spec: RunSpec) -> WampReport:
    """Build a simulator for the spec, run it to completion, return metrics."""
    return Simulator(spec).run()
