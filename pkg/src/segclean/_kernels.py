"""Hot write-path loops, jitted with numba when available.

The kernels only touch flat numpy arrays and scalars; segment allocation,
flushing, and cleaning stay in the engine. Each kernel returns as soon as
the engine has to act (buffer full / open segment full / draws consumed),
so per-call overhead is amortized over at most one segment of writes.

The plain-Python twins (``*_py``) are bit-identical by construction (same
function body) and back the engine when numba is unavailable or disabled.
"""

from __future__ import annotations

import numpy as np

PAGE_UNMAPPED = -2
PAGE_IN_BUFFER = -1


def _consume_buffered(draws, start, u_now, page_seg, page_carried,
                      seg_free, seg_live, seg_up2, seg_up1, seg_rate,
                      oracle_p, track_rate, buf, buf_len, buf_cap,
                      batch_min, page_size):
    """Apply user writes into the sort buffer until it fills.

    A write to a page already buffered replaces it in place (no new entry);
    the clock still ticks. Returns (next draw index, clock, buffer length).
    """
    i = start
    n = draws.shape[0]
    while i < n and buf_len < buf_cap:
        pid = draws[i]
        i += 1
        u_now += 1
        old = page_seg[pid]
        if old >= 0:
            seg_free[old] += page_size
            seg_live[old] -= 1
            up2 = seg_up2[old]
            seg_up2[old] = up2 + 0.5 * (u_now - up2)
            seg_up1[old] = u_now
            if track_rate:
                seg_rate[old] -= oracle_p[pid]
            c = page_carried[pid]
            c = c + 0.5 * (u_now - c)
            page_carried[pid] = c
        elif old == PAGE_IN_BUFFER:
            c = page_carried[pid]
            page_carried[pid] = c + 0.5 * (u_now - c)
            continue
        else:
            c = batch_min[0] if batch_min[0] < np.inf else 0.0
            page_carried[pid] = c
        page_seg[pid] = PAGE_IN_BUFFER
        buf[buf_len] = pid
        buf_len += 1
        if c < batch_min[0]:
            batch_min[0] = c
    return i, u_now, buf_len


def _consume_direct(draws, start, u_now, page_seg, page_carried,
                    seg_free, seg_live, seg_up2, seg_up1, seg_rate,
                    oracle_p, track_rate, seg_slots, seg_fill, seg_up2sum,
                    open_sid, batch_min, page_size, pages_per_segment):
    """Apply user writes straight into the open user segment.

    Returns (next draw index, clock, True if the open segment filled).
    """
    i = start
    n = draws.shape[0]
    fill = seg_fill[open_sid]
    while i < n:
        pid = draws[i]
        i += 1
        u_now += 1
        old = page_seg[pid]
        if old >= 0:
            seg_free[old] += page_size
            seg_live[old] -= 1
            up2 = seg_up2[old]
            seg_up2[old] = up2 + 0.5 * (u_now - up2)
            seg_up1[old] = u_now
            if track_rate:
                seg_rate[old] -= oracle_p[pid]
            c = page_carried[pid]
            c = c + 0.5 * (u_now - c)
            page_carried[pid] = c
        else:
            c = batch_min[0] if batch_min[0] < np.inf else 0.0
            page_carried[pid] = c
        if c < batch_min[0]:
            batch_min[0] = c
        seg_slots[open_sid, fill] = pid
        fill += 1
        seg_free[open_sid] -= page_size
        seg_live[open_sid] += 1
        seg_up2sum[open_sid] += c
        if track_rate:
            seg_rate[open_sid] += oracle_p[pid]
        page_seg[pid] = open_sid
        if fill == pages_per_segment:
            seg_fill[open_sid] = fill
            return i, u_now, True
    seg_fill[open_sid] = fill
    return i, u_now, False


consume_buffered_py = _consume_buffered
consume_direct_py = _consume_direct

try:
    from numba import njit

    consume_buffered = njit(cache=True)(_consume_buffered)
    consume_direct = njit(cache=True)(_consume_direct)
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    consume_buffered = _consume_buffered
    consume_direct = _consume_direct
    HAVE_NUMBA = False
