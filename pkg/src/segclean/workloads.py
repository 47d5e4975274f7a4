"""Page-write stream generators: uniform, hot-cold, Zipfian, trace replay.

Synthetic generators are seeded and draw in batches; each one can hand out
the exact per-page write probabilities it samples from (the oracle used by
the *-opt policies). Page ids are decoupled from frequency rank by a seeded
permutation so address locality never leaks into the stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ConfigError

WORKLOAD_KINDS = ("uniform", "hotcold", "zipfian", "trace")


class TraceError(ValueError):
    """Malformed or out-of-range trace input."""


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    m: float | None = None            # hotcold: fraction of updates to the hot set
    theta: float | None = None        # zipfian exponent
    trace_path: str | None = None
    seed: int | None = None           # overrides the run seed when set

    def __post_init__(self):
        if self.kind not in WORKLOAD_KINDS:
            raise ConfigError(f"unknown workload kind {self.kind!r}")
        needed = {"hotcold": "m", "zipfian": "theta", "trace": "trace_path"}
        for kind, fld in needed.items():
            val = getattr(self, fld)
            if self.kind == kind and val is None:
                raise ConfigError(f"workload {kind!r} requires {fld}")
            if self.kind != kind and val is not None:
                raise ConfigError(f"{fld} is only valid for workload {kind!r}")
        if self.m is not None and not 0.5 <= self.m < 1.0:
            raise ConfigError(f"m must be in [0.5, 1), got {self.m}")
        if self.theta is not None and self.theta <= 0.0:
            raise ConfigError(f"theta must be positive, got {self.theta}")

    @property
    def skew_label(self) -> str:
        """Value for the theta_or_m CSV column."""
        if self.kind == "hotcold":
            return repr(self.m)
        if self.kind == "zipfian":
            return repr(self.theta)
        return ""


class Workload:
    """Base generator: batched draws over page ids [0, P)."""

    kind = "base"

    def __init__(self, num_pages: int, seed: int):
        self.num_pages = num_pages
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def next_batch(self, n: int) -> np.ndarray:
        raise NotImplementedError

    def next_write(self) -> int:
        return int(self.next_batch(1)[0])

    def oracle(self) -> np.ndarray:
        """True per-update write probability per page id; sums to 1."""
        raise NotImplementedError

    def remaining(self) -> int | None:
        """Number of writes left, or None for unbounded generators."""
        return None


class UniformWorkload(Workload):
    kind = "uniform"

    def next_batch(self, n):
        return self.rng.integers(0, self.num_pages, n, dtype=np.int64)

    def oracle(self):
        return np.full(self.num_pages, 1.0 / self.num_pages)


class HotColdWorkload(Workload):
    """m of the updates go to a scrambled (1-m) fraction of the pages."""

    kind = "hotcold"

    def __init__(self, num_pages: int, m: float, seed: int):
        super().__init__(num_pages, seed)
        self.m = m
        perm = self.rng.permutation(num_pages)
        hot_count = max(1, int(round((1.0 - m) * num_pages)))
        self.hot = perm[:hot_count].astype(np.int64)
        self.cold = perm[hot_count:].astype(np.int64)

    def next_batch(self, n):
        pick_hot = self.rng.random(n) < self.m
        hi = self.rng.integers(0, len(self.hot), n)
        ci = self.rng.integers(0, len(self.cold), n)
        return np.where(pick_hot, self.hot[hi], self.cold[ci])

    def oracle(self):
        p = np.empty(self.num_pages)
        p[self.hot] = self.m / len(self.hot)
        p[self.cold] = (1.0 - self.m) / len(self.cold)
        return p


class ZipfianWorkload(Workload):
    """Rank-frequency 1/rank^theta, ranks scrambled onto page ids."""

    kind = "zipfian"

    def __init__(self, num_pages: int, theta: float, seed: int):
        super().__init__(num_pages, seed)
        self.theta = theta
        weights = 1.0 / np.power(np.arange(1, num_pages + 1, dtype=np.float64), theta)
        self._p_by_rank = weights / weights.sum()
        self._cdf = np.cumsum(self._p_by_rank)
        self._cdf[-1] = 1.0
        self.rank_to_page = self.rng.permutation(num_pages).astype(np.int64)

    def next_batch(self, n):
        u = self.rng.random(n)
        ranks = np.searchsorted(self._cdf, u, side="right")
        np.minimum(ranks, self.num_pages - 1, out=ranks)
        return self.rank_to_page[ranks]

    def oracle(self):
        p = np.empty(self.num_pages)
        p[self.rank_to_page] = self._p_by_rank
        return p

    def top_share(self, fraction: float) -> float:
        """Share of updates hitting the hottest `fraction` of pages."""
        k = max(1, int(round(fraction * self.num_pages)))
        return float(self._p_by_rank[:k].sum())


class TraceWorkload(Workload):
    """Replays page ids from a text trace, one decimal id per line."""

    kind = "trace"

    def __init__(self, num_pages: int, path: str | Path, seed: int = 0):
        super().__init__(num_pages, seed)
        self.path = Path(path)
        self.ids = read_trace(self.path, num_pages)
        self._pos = 0

    def next_batch(self, n):
        out = self.ids[self._pos : self._pos + n]
        self._pos += len(out)
        return out

    def remaining(self):
        return len(self.ids) - self._pos

    def oracle(self):
        raise ConfigError("exact-frequency policies are unavailable for traces")


def read_trace(path: str | Path, num_pages: int) -> np.ndarray:
    """Parse a newline-delimited decimal-id trace; '#' lines are comments.

    Raises TraceError with the offending line number on parse or range
    problems.
    """
    path = Path(path)
    ids = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            try:
                page = int(line, 10)
            except ValueError:
                raise TraceError(f"{path}:{lineno}: not a page id: {line!r}") from None
            if page < 0 or page >= num_pages:
                raise TraceError(
                    f"{path}:{lineno}: page id {page} outside [0, {num_pages})")
            ids.append(page)
    return np.asarray(ids, dtype=np.int64)


def make_workload(spec: WorkloadSpec, num_pages: int, run_seed: int) -> Workload:
    seed = spec.seed if spec.seed is not None else run_seed
    if spec.kind == "uniform":
        return UniformWorkload(num_pages, seed)
    if spec.kind == "hotcold":
        return HotColdWorkload(num_pages, spec.m, seed)
    if spec.kind == "zipfian":
        return ZipfianWorkload(num_pages, spec.theta, seed)
    return TraceWorkload(num_pages, spec.trace_path, seed)
