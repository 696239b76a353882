"""Overlapping rank-group construction for per-range local regressors.

Two layouts.  The five-group layout sizes spans as a geometric progression
with ratio sqrt((1+sqrt(5))/2): even-indexed groups tile the domain with unit
gaps, odd-indexed groups bridge their neighbours starting at the midpoint of
the previous group, and the last group absorbs the remainder up to the domain
end.  The equal-parts layout splits the domain into contiguous groups of
near-equal size with no overlap.  Every group also carries an extended range,
widened by ``alpha`` on both sides and clipped to the domain, inside which
its local model is trained and applied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from rankwin.errors import ConfigError, DomainError
from rankwin.windows import RankRange, round_half_up

__all__ = [
    "GOLDEN_RATIO",
    "SPAN_RATIO",
    "RankGroup",
    "partition_golden",
    "partition_equal",
    "groups_containing",
]

GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
# consecutive span ratio r satisfies r**4 - r**2 - 1 = 0
SPAN_RATIO = math.sqrt(GOLDEN_RATIO)


@dataclass(frozen=True)
class RankGroup:
    """One partition cell: core interval plus the extended training range."""

    index: int
    theta_min: int
    theta_max: int
    extended_min: int
    extended_max: int

    def __post_init__(self) -> None:
        if self.theta_min >= self.theta_max:
            raise ConfigError(f"group {self.index} degenerate: [{self.theta_min}, {self.theta_max}]")
        if not self.extended_min <= self.theta_min or not self.theta_max <= self.extended_max:
            raise ConfigError(f"group {self.index} extended range must contain the core interval")

    def __contains__(self, rank: float) -> bool:
        return self.theta_min <= rank <= self.theta_max

    def in_extended(self, rank: float) -> bool:
        return self.extended_min <= rank <= self.extended_max

    @property
    def extended_range(self) -> RankRange:
        return RankRange(self.extended_min, self.extended_max)


def _extended(lo: int, hi: int, alpha: int, domain: RankRange) -> tuple[int, int]:
    return max(domain.lo, lo - alpha), min(domain.hi, hi + alpha)


def _check_cover(groups: list[RankGroup], domain: RankRange, max_membership: int) -> None:
    for rank in domain:
        hits = sum(1 for g in groups if rank in g)
        if hits == 0:
            raise ConfigError(f"partition leaves rank {rank} uncovered")
        if hits > max_membership:
            raise ConfigError(f"rank {rank} belongs to {hits} groups, limit {max_membership}")


def partition_golden(domain: RankRange, alpha: int = 6) -> list[RankGroup]:
    """Five overlapping groups over ``domain`` with golden-ratio span growth.

    Requires a domain at least 11 ranks wide.  Every rank is covered by one
    or two groups; spans grow by roughly sqrt(golden ratio) per group.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    width = domain.hi - domain.lo
    if width < 10:
        raise ConfigError(f"five-group partition needs a domain width >= 10, got {width}")
    # even groups tile [lo, hi] leaving two unit gaps; their real-valued spans
    # follow the ratio sequence, then get rounded to integers
    inner = width - 2
    s0_real = inner / (1.0 + GOLDEN_RATIO + GOLDEN_RATIO * GOLDEN_RATIO)
    s0 = round_half_up(s0_real)
    s2 = round_half_up(s0_real * GOLDEN_RATIO)
    g0 = (domain.lo, domain.lo + s0)
    g2 = (g0[1] + 1, g0[1] + 1 + s2)
    g4 = (g2[1] + 1, domain.hi)
    # odd groups start at the midpoint of the previous even group; their spans
    # scale the REALIZED integer even spans so rounding errors do not compound
    g1_lo = math.floor((g0[0] + g0[1]) / 2)
    g1 = (g1_lo, g1_lo + round_half_up(s0 * SPAN_RATIO))
    g3 = (g1[1] + 1, g1[1] + 1 + round_half_up(s2 * SPAN_RATIO))
    bounds = [g0, g1, g2, g3, g4]
    for lo, hi in bounds:
        if lo < domain.lo or hi > domain.hi or lo >= hi:
            raise ConfigError(f"degenerate five-group partition for domain [{domain.lo}, {domain.hi}]")
    groups = [
        RankGroup(i, lo, hi, *_extended(lo, hi, alpha, domain))
        for i, (lo, hi) in enumerate(bounds)
    ]
    _check_cover(groups, domain, max_membership=2)
    return groups


def partition_equal(domain: RankRange, count: int, alpha: int = 6) -> list[RankGroup]:
    """``count`` contiguous non-overlapping groups of near-equal size.

    Sizes differ by at most one rank; earlier groups take the remainder.
    """
    if alpha < 0:
        raise ConfigError(f"alpha must be >= 0, got {alpha}")
    if count < 2:
        raise ConfigError(f"equal partition needs >= 2 groups, got {count}")
    total = len(domain)
    if total < 2 * count:
        raise ConfigError(f"domain of {total} ranks cannot host {count} groups of >= 2 ranks")
    base, rem = divmod(total, count)
    groups = []
    lo = domain.lo
    for i in range(count):
        size = base + (1 if i < rem else 0)
        hi = lo + size - 1
        groups.append(RankGroup(i, lo, hi, *_extended(lo, hi, alpha, domain)))
        lo = hi + 1
    _check_cover(groups, domain, max_membership=1)
    return groups


def groups_containing(rank: int, groups: list[RankGroup]) -> list[int]:
    """Indices of groups whose core interval contains ``rank`` (one or two)."""
    hits = [g.index for g in groups if rank in g]
    if not hits:
        raise DomainError(f"rank {rank} outside every group")
    return hits
