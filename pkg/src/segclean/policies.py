"""Cleaning priorities and victim selection.

Every policy maps a sealed segment to a score where *lower means clean
sooner*; ties break by ascending segment id so victim sequences are
reproducible. The score functions exist twice: per-segment on SegmentMeta
(the reference form) and vectorized over the store arrays (what the engine
uses); tests pin them to each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import SegState, SegmentMeta, SimulationFault, Store

POLICY_NAMES = (
    "age",
    "greedy",
    "cost_benefit",
    "multi_log",
    "multi_log_opt",
    "mdc",
    "mdc_opt",
)

CB_VARIANTS = ("lfs_classic", "paper_text")


@dataclass(frozen=True)
class PolicyKind:
    """A cleaning policy plus its stream-separation flags.

    separate_user_writes: stage user writes in the sort buffer and pack them
    by update-history order. separate_gc_writes: order relocated survivors
    the same way. Disabling GC separation only makes sense if user
    separation is also off, so (True, False) is rejected.
    """

    name: str
    cost_benefit_variant: str = "lfs_classic"
    separate_user_writes: bool = False
    separate_gc_writes: bool = False

    def __post_init__(self):
        if self.name not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.name!r}")
        if self.cost_benefit_variant not in CB_VARIANTS:
            raise ValueError(f"unknown cost_benefit variant {self.cost_benefit_variant!r}")
        if self.separate_user_writes and not self.separate_gc_writes:
            raise ValueError("separate_user_writes requires separate_gc_writes")
        if self.name not in ("mdc", "mdc_opt") and self.separate_gc_writes:
            raise ValueError("separation flags are only meaningful for mdc/mdc_opt")

    @property
    def uses_oracle(self) -> bool:
        return self.name in ("mdc_opt", "multi_log_opt")

    @property
    def is_multilog(self) -> bool:
        return self.name in ("multi_log", "multi_log_opt")

    @property
    def victims_per_cycle_forced(self) -> int | None:
        # multi-log variants clean one segment at a time
        return 1 if self.is_multilog else None


_ALIASES = {
    "mdc": ("mdc", True, True),
    "mdc_opt": ("mdc_opt", True, True),
    "mdc_no_sep_user": ("mdc", False, True),
    "mdc_no_sep_user_gc": ("mdc", False, False),
}


def parse_policy(text: str, cost_benefit_variant: str = "lfs_classic") -> PolicyKind:
    """Parse a policy name as used in configs and CSV output."""
    key = text.strip().lower().replace("-", "_")
    if key in _ALIASES:
        name, su, sg = _ALIASES[key]
        return PolicyKind(name, cost_benefit_variant, su, sg)
    if key in POLICY_NAMES:
        return PolicyKind(key, cost_benefit_variant)
    raise ValueError(f"unknown policy {text!r}")


def policy_label(policy: PolicyKind) -> str:
    if policy.name == "mdc" and not policy.separate_user_writes:
        return "mdc_no_sep_user" if policy.separate_gc_writes else "mdc_no_sep_user_gc"
    return policy.name


# -- update-history maintenance -------------------------------------------


def update_u_p2(old_up2: float, u_now: int | float) -> float:
    """Advance a penultimate-update estimate after a re-write.

    The previous last-update time is assumed midway between the old estimate
    and now, and becomes the new penultimate time.
    """
    if old_up2 > u_now:
        raise SimulationFault(f"update history {old_up2} ahead of clock {u_now}")
    return old_up2 + 0.5 * (u_now - old_up2)


def first_write_u_p2(batch: Sequence[float]) -> float:
    """History estimate for a page with no history: coldest value in the
    current flush batch, or 0 if the batch has no known history."""
    known = [v for v in batch if v == v]  # drop NaNs
    if not known:
        return 0.0
    return min(known)


# -- per-segment priority scores -------------------------------------------


def priority_mdc(meta: SegmentMeta, u_now: int, segment_size: int) -> float:
    """Estimated cost-decline score: ((B-A)/A)^2 / (C * (u_now - up2)).

    Fully live segments (A=0) never win while alternatives exist; fully
    empty ones (C=0) win immediately. The update interval is floored at one
    tick to keep the division defined for just-updated segments.
    """
    A = meta.free_bytes
    B = segment_size
    if A == 0:
        return math.inf
    if meta.live_pages == 0:
        return 0.0
    du = max(u_now - meta.up2, 1.0)
    return ((B - A) / A) ** 2 / (meta.live_pages * du)


def priority_mdc_opt(meta: SegmentMeta, live_rate: float, segment_size: int) -> float:
    """Exact-frequency cost-decline score: (1/E^2) * live_rate * delta_E."""
    A = meta.free_bytes
    B = segment_size
    if A == 0:
        return math.inf
    if meta.live_pages == 0:
        return 0.0
    E = A / B
    delta_e = ((B - A) / meta.live_pages) / B
    return (1.0 / (E * E)) * live_rate * delta_e


def priority_greedy(meta: SegmentMeta, segment_size: int) -> float:
    """Emptiest-first: score 1/E = B/A."""
    if meta.free_bytes == 0:
        return math.inf
    return segment_size / meta.free_bytes


def priority_age(meta: SegmentMeta) -> float:
    """Oldest-first: the seal time is the score."""
    return float(meta.sealed_at)


def priority_cost_benefit(meta: SegmentMeta, u_now: int, segment_size: int,
                          variant: str = "lfs_classic") -> float:
    """Negated cost-benefit value so that the largest benefit sorts first.

    lfs_classic: benefit = E*age/(2-E) (equivalently (1-u)*age/(1+u) with
    utilization u = 1-E). paper_text: benefit = (1-E)*age/E, which diverges
    at E=0 and prefers full segments; kept selectable, not the default.
    """
    E = meta.free_bytes / segment_size
    age = float(u_now - meta.up1)
    if variant == "lfs_classic":
        benefit = E * age / (2.0 - E)
    elif variant == "paper_text":
        benefit = math.inf if E == 0.0 and age > 0 else (0.0 if age == 0 else (1.0 - E) * age / E)
    else:
        raise ValueError(f"unknown cost_benefit variant {variant!r}")
    return -benefit


def priority_score(policy: PolicyKind, meta: SegmentMeta, u_now: int,
                   segment_size: int, live_rate: float = 0.0) -> float:
    name = policy.name
    if name == "age" or policy.is_multilog:
        # without log-set state, multi-log degenerates to its single-log
        # behavior: oldest first
        return priority_age(meta)
    if name == "greedy":
        return priority_greedy(meta, segment_size)
    if name == "cost_benefit":
        return priority_cost_benefit(meta, u_now, segment_size,
                                     policy.cost_benefit_variant)
    if name == "mdc":
        return priority_mdc(meta, u_now, segment_size)
    if name == "mdc_opt":
        return priority_mdc_opt(meta, live_rate, segment_size)
    raise ValueError(f"{name} has no global priority score")


# -- vectorized scoring over the store --------------------------------------


def score_segments(store: Store, policy: PolicyKind, sealed: np.ndarray) -> np.ndarray:
    """Scores for the given sealed segment ids, one pass over flat arrays."""
    B = float(store.config.segment_size)
    name = policy.name
    if name == "age" or policy.is_multilog:
        return store.seg_sealed_at[sealed].astype(np.float64)
    A = store.seg_free[sealed].astype(np.float64)
    C = store.seg_live[sealed].astype(np.float64)
    if name == "greedy":
        with np.errstate(divide="ignore"):
            return np.where(A > 0.0, B / np.where(A > 0.0, A, 1.0), np.inf)
    if name == "cost_benefit":
        E = A / B
        age = (store.u_now - store.seg_up1[sealed]).astype(np.float64)
        if policy.cost_benefit_variant == "lfs_classic":
            benefit = E * age / (2.0 - E)
        else:
            with np.errstate(divide="ignore"):
                benefit = np.where(
                    E > 0.0, (1.0 - E) * age / np.where(E > 0.0, E, 1.0),
                    np.where(age > 0.0, np.inf, 0.0))
        return -benefit
    if name == "mdc":
        du = np.maximum(store.u_now - store.seg_up2[sealed], 1.0)
        Asafe = np.where(A > 0.0, A, 1.0)
        Csafe = np.maximum(C, 1.0)
        s = ((B - A) / Asafe) ** 2 / (Csafe * du)
        s = np.where(A > 0.0, s, np.inf)
        return np.where(C == 0.0, 0.0, s)
    if name == "mdc_opt":
        E = np.where(A > 0.0, A, 1.0) / B
        Csafe = np.maximum(C, 1.0)
        delta_e = ((B - A) / Csafe) / B
        s = (1.0 / (E * E)) * store.seg_rate[sealed] * delta_e
        s = np.where(A > 0.0, s, np.inf)
        return np.where(C == 0.0, 0.0, s)
    raise ValueError(f"{name} has no global priority score")


def select_victims(policy: PolicyKind, metas: Sequence[SegmentMeta], k: int,
                   u_now: int, segment_size: int,
                   live_rates: Sequence[float] | None = None) -> list[int]:
    """The k segments to clean first, in cleaning order (ids on ties)."""
    if policy.victims_per_cycle_forced is not None:
        k = policy.victims_per_cycle_forced
    scored = []
    for i, m in enumerate(metas):
        if m.state != SegState.SEALED:
            continue
        rate = live_rates[i] if live_rates is not None else 0.0
        scored.append((priority_score(policy, m, u_now, segment_size, rate), m.id))
    scored.sort()
    return [sid for _, sid in scored[:k]]


def select_victim_ids(store: Store, policy: PolicyKind, k: int) -> np.ndarray:
    """Engine-path victim selection over the store's sealed segments."""
    if policy.victims_per_cycle_forced is not None:
        k = policy.victims_per_cycle_forced
    sealed = store.sealed_ids()
    scores = score_segments(store, policy, sealed)
    order = np.lexsort((sealed, scores))
    return sealed[order[:k]]


# -- multi-log routing -------------------------------------------------------


def frequency_band(freq: float) -> int:
    """Geometric factor-of-2 band index containing a positive frequency."""
    if freq <= 0.0:
        raise ValueError("frequency must be positive")
    return math.floor(math.log2(freq))


@dataclass
class LogState:
    id: int
    band_lo: int            # inclusive
    band_hi: int            # exclusive
    open_sid: int | None = None
    sealed: list[int] = field(default_factory=list)   # in seal order
    live_pages: int = 0


class MultiLogSet:
    """Frequency-banded logs for the multi-log baseline.

    Pages route to the log whose band range holds their (estimated or exact)
    update frequency; logs are created on demand and adjacent logs merge
    while both hold less than one segment of live pages.
    """

    def __init__(self, pages_per_segment: int):
        self.S = pages_per_segment
        self.logs: dict[int, LogState] = {}
        self._band_map: dict[int, int] = {}
        self.seg_to_log: dict[int, int] = {}
        self._next_id = 0

    def route(self, freq: float) -> LogState:
        band = frequency_band(freq)
        log_id = self._band_map.get(band)
        if log_id is None:
            log_id = self._next_id
            self._next_id += 1
            self.logs[log_id] = LogState(log_id, band, band + 1)
            self._band_map[band] = log_id
        return self.logs[log_id]

    def ordered_logs(self) -> list[LogState]:
        return sorted(self.logs.values(), key=lambda lg: lg.band_lo)

    def neighbors(self, log_id: int) -> list[LogState]:
        """The log itself plus its nearest existing logs on either side."""
        ordered = self.ordered_logs()
        idx = next(i for i, lg in enumerate(ordered) if lg.id == log_id)
        out = [ordered[idx]]
        if idx > 0:
            out.append(ordered[idx - 1])
        if idx + 1 < len(ordered):
            out.append(ordered[idx + 1])
        return out

    def select_victim(self, pressure_log: int, store: Store) -> tuple[int, LogState]:
        """Pick (segment, log): the oldest segment of whichever candidate log
        has the emptiest oldest segment.

        Widens to every log when the pressure neighborhood has nothing
        sealed, or when its best candidate would reclaim no space at all
        (cleaning a fully live segment never makes progress)."""
        if pressure_log in self.logs:
            candidate_sets = (self.neighbors(pressure_log), self.ordered_logs())
        else:  # pressure log was merged away
            candidate_sets = (self.ordered_logs(),)
        best = None
        for candidates in candidate_sets:
            for lg in candidates:
                if not lg.sealed:
                    continue
                oldest = lg.sealed[0]
                E = store.seg_free[oldest] / store.config.segment_size
                key = (-E, lg.id, int(store.seg_sealed_at[oldest]))
                if best is None or key < best[0]:
                    best = (key, oldest, lg)
            if best is not None and -best[0][0] > 0.0:
                return best[1], best[2]
        if best is not None:
            return best[1], best[2]
        raise SimulationFault("multi-log: no sealed segment anywhere")

    def merge_underfull(self, store: Store) -> int:
        """Merge adjacent logs while both hold under one segment of pages.

        The absorbed log's partial open segment is sealed into the survivor.
        """
        merged = 0
        changed = True
        while changed:
            changed = False
            ordered = self.ordered_logs()
            for a, b in zip(ordered, ordered[1:]):
                if a.band_hi != b.band_lo:
                    continue
                if a.live_pages >= self.S or b.live_pages >= self.S:
                    continue
                self._merge(a, b, store)
                merged += 1
                changed = True
                break
        return merged

    def _merge(self, a: LogState, b: LogState, store: Store):
        if b.open_sid is not None:
            if store.seg_fill[b.open_sid] > 0:
                store.seal(b.open_sid)
                b.sealed.append(b.open_sid)
            else:
                store.free_segment(b.open_sid)
                self.seg_to_log.pop(b.open_sid, None)
            b.open_sid = None
        a.band_hi = b.band_hi
        a.live_pages += b.live_pages
        a.sealed = sorted(a.sealed + b.sealed,
                          key=lambda sid: (int(store.seg_sealed_at[sid]), sid))
        for band in range(b.band_lo, b.band_hi):
            if self._band_map.get(band) == b.id:
                self._band_map[band] = a.id
        for sid in b.sealed:
            self.seg_to_log[sid] = a.id
        del self.logs[b.id]

    def note_invalidate(self, sid: int):
        log_id = self.seg_to_log.get(sid)
        if log_id is not None:
            self.logs[log_id].live_pages -= 1
