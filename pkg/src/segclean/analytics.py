"""Closed-form cleaning-cost analysis.

Centerpiece is the steady-state emptiness fixpoint for round-robin cleaning
of a full store: a segment sealed now is cleaned after every other segment
has been cleaned once, so its emptiness at cleaning time solves

    E = 1 - ((P-1)/P)^(P*E/F)        (finite page count P)
    E = 1 - exp(-E/F)                (P -> infinity)

From E follow the per-segment write cost 2/E, the slack ratio R = E/(1-F),
and the write amplification (1-E)/E. The two-set slack-division optimizer
splits the spare capacity between a hot and a cold page set to minimize the
update-weighted total cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .model import ConfigError

# fill factors tabulated by the reference analysis
TABLE1_FILL_FACTORS = (
    0.975, 0.95, 0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60,
    0.55, 0.50, 0.45, 0.40, 0.35, 0.30, 0.25, 0.20,
)


@dataclass(frozen=True)
class AnalyticPoint:
    """One row of the emptiness table: fill factor and derived quantities."""

    fill_factor: float
    emptiness: float

    @property
    def cost(self) -> float:
        return 2.0 / self.emptiness

    @property
    def slack_ratio(self) -> float:
        return self.emptiness / (1.0 - self.fill_factor)

    @property
    def wamp(self) -> float:
        return (1.0 - self.emptiness) / self.emptiness


def solve_emptiness(fill_factor: float, num_pages: int | None = None,
                    tol: float = 1e-10) -> float:
    """Nonzero fixpoint of the emptiness recurrence, by damped iteration.

    The map has a second fixpoint at 0; starting from E=1 with averaging
    (E <- (E + f(E))/2) converges to the meaningful one.
    """
    if not 0.0 < fill_factor < 1.0:
        raise ConfigError(f"fill factor must be in (0, 1), got {fill_factor}")
    if num_pages is not None and num_pages < 2:
        raise ConfigError("num_pages must be >= 2")
    if num_pages is None:
        f: Callable[[float], float] = lambda e: 1.0 - math.exp(-e / fill_factor)
    else:
        base = (num_pages - 1) / num_pages
        f = lambda e: 1.0 - base ** (num_pages * e / fill_factor)
    E = 1.0
    for _ in range(100000):
        nxt = 0.5 * (E + f(E))
        if abs(nxt - E) < 0.5 * tol:
            return nxt
        E = nxt
    raise RuntimeError("emptiness fixpoint did not converge")


def table1(fill_factors: Sequence[float] = TABLE1_FILL_FACTORS,
           num_pages: int | None = None) -> list[AnalyticPoint]:
    return [AnalyticPoint(F, solve_emptiness(F, num_pages)) for F in fill_factors]


# -- two-set slack division ---------------------------------------------------


@dataclass(frozen=True)
class SkewSpec:
    """Two page sets with uniform updates inside each set.

    Set 1 is the hot set: dist gives each set's share of the data, update
    gives its share of the updates, and g its share of the slack space. For
    an m:(1-m) workload the hot set holds (1-m) of the data and receives m
    of the updates.
    """

    fill_factor: float
    dist: tuple[float, float]
    update: tuple[float, float]
    g: tuple[float, float]

    def __post_init__(self):
        if not 0.0 < self.fill_factor < 1.0:
            raise ConfigError("fill_factor must be in (0, 1)")
        for name, pair in (("dist", self.dist), ("update", self.update), ("g", self.g)):
            if abs(sum(pair) - 1.0) > 1e-9:
                raise ConfigError(f"{name} shares must sum to 1")
            if not all(0.0 <= x <= 1.0 for x in pair):
                raise ConfigError(f"{name} shares must lie in [0, 1]")

    @classmethod
    def from_hotcold(cls, fill_factor: float, m: float, g_hot: float = 0.5) -> "SkewSpec":
        return cls(fill_factor, dist=(1.0 - m, m), update=(m, 1.0 - m),
                   g=(g_hot, 1.0 - g_hot))

    def set_fill_factor(self, i: int) -> float:
        """Fill factor of set i once its slack share is carved out."""
        F = self.fill_factor
        data = F * self.dist[i]
        slack = (1.0 - F) * self.g[i]
        return data / (data + slack)


@dataclass(frozen=True)
class SplitCost:
    total: float
    per_set: tuple[tuple[float, float, float], ...]  # (fill, emptiness, cost) per set


def split_cost(spec: SkewSpec) -> SplitCost:
    """Update-weighted total cost of managing the two sets separately.

    Each set's emptiness is evaluated exactly through the fixpoint rather
    than the constant-slack-ratio shortcut. A set with zero slack can never
    be cleaned profitably: infinite cost.
    """
    per_set = []
    total = 0.0
    for i in range(2):
        if spec.g[i] == 0.0:
            per_set.append((1.0, 0.0, math.inf))
            total = math.inf
            continue
        Fi = spec.set_fill_factor(i)
        Ei = solve_emptiness(Fi)
        ci = 2.0 / Ei
        per_set.append((Fi, Ei, ci))
        total += spec.update[i] * ci
    return SplitCost(total, tuple(per_set))


def _golden_section(f: Callable[[float], float], lo: float, hi: float,
                    tol: float) -> float:
    inv = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv * (b - a)
    d = a + inv * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class SplitOptimum:
    g_hot: float
    min_cost: float
    closed_form_g_hot: float   # slack-ratio-based prediction, at the optimum


def optimize_split(fill_factor: float, dist: tuple[float, float],
                   update: tuple[float, float], tol: float = 1e-4) -> SplitOptimum:
    """Minimize split_cost over the hot set's slack share in (0.01, 0.99).

    Also evaluates the closed-form prediction g1/g2 = sqrt(R2/R1) with the
    slack ratios taken at the numeric optimum, as a cross-check of the two
    methods.
    """

    def cost_at(g_hot: float) -> float:
        return split_cost(SkewSpec(fill_factor, dist, update, (g_hot, 1.0 - g_hot))).total

    g_star = _golden_section(cost_at, 0.01, 0.99, tol)
    best = split_cost(SkewSpec(fill_factor, dist, update, (g_star, 1.0 - g_star)))
    (F1, E1, _), (F2, E2, _) = best.per_set
    r1 = E1 / (1.0 - F1)
    r2 = E2 / (1.0 - F2)
    ratio = math.sqrt(r2 / r1)
    return SplitOptimum(g_star, best.total, ratio / (1.0 + ratio))


# -- ordered pairing ---------------------------------------------------------


def max_pairing_sum(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Largest achievable sum of pairwise products of two positive sets.

    Attained by pairing both sequences in the same sorted order; any other
    permutation can be improved by exchanging an inverted pair.
    """
    if len(xs) != len(ys):
        raise ValueError("sequences must have equal length")
    if any(x <= 0 for x in xs) or any(y <= 0 for y in ys):
        raise ValueError("entries must be positive")
    return float(np.dot(np.sort(np.asarray(xs, dtype=float)),
                        np.sort(np.asarray(ys, dtype=float))))
