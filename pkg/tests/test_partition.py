"""Rank-group partitions.

The five-group expected values were frozen by hand from the span recurrence
(ratio sqrt((1+sqrt(5))/2) ~ 1.272): for [3, 85] the even spans are 15 and
25, the odd spans 19 and 32, and the last group runs to the domain end.
"""

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rankwin.errors import ConfigError, DomainError
from rankwin.partition import (SPAN_RATIO, groups_containing, partition_equal,
                               partition_golden)
from rankwin.windows import RankRange


def test_golden_partition_frozen_example():
    groups = partition_golden(RankRange(3, 85), alpha=6)
    cores = [(g.theta_min, g.theta_max) for g in groups]
    assert cores == [(3, 18), (10, 29), (19, 44), (30, 62), (45, 85)]


def test_golden_partition_extended_ranges_clip_to_domain():
    groups = partition_golden(RankRange(3, 85), alpha=6)
    assert (groups[0].extended_min, groups[0].extended_max) == (3, 24)
    assert (groups[4].extended_min, groups[4].extended_max) == (39, 85)
    assert (groups[2].extended_min, groups[2].extended_max) == (13, 50)


def test_golden_partition_translation_equivariant():
    spans = [(g.theta_max - g.theta_min) for g in partition_golden(RankRange(3, 85))]
    shifted = [(g.theta_max - g.theta_min) for g in partition_golden(RankRange(1, 83))]
    assert spans == shifted == [15, 19, 25, 32, 40]


def test_golden_partition_span_ratios_near_ratio():
    groups = partition_golden(RankRange(1, 80))
    spans = [g.theta_max - g.theta_min for g in groups[:4]]
    for a, b in zip(spans, spans[1:]):
        assert b / a == pytest.approx(SPAN_RATIO, rel=0.12)


def test_golden_partition_rejects_narrow_domain():
    with pytest.raises(ConfigError):
        partition_golden(RankRange(1, 10))
    partition_golden(RankRange(1, 11))


def test_equal_partition_frozen_example():
    groups = partition_equal(RankRange(0, 7), 3)
    cores = [(g.theta_min, g.theta_max) for g in groups]
    assert cores == [(0, 2), (3, 5), (6, 7)]


def test_equal_partition_rejects_bad_sizing():
    with pytest.raises(ConfigError):
        partition_equal(RankRange(1, 5), 5)
    with pytest.raises(ConfigError):
        partition_equal(RankRange(1, 80), 1)


def test_groups_containing():
    groups = partition_golden(RankRange(3, 85))
    assert groups_containing(3, groups) == [0]
    assert groups_containing(12, groups) == [0, 1]
    assert groups_containing(40, groups) == [2, 3]  # middles always overlap
    assert groups_containing(85, groups) == [4]
    with pytest.raises(DomainError):
        groups_containing(2, groups)


@given(lo=st.integers(-50, 400), width=st.integers(11, 300), alpha=st.integers(0, 10))
def test_golden_partition_invariants(lo, width, alpha):
    domain = RankRange(lo, lo + width)
    groups = partition_golden(domain, alpha)
    assert len(groups) == 5
    assert groups[0].theta_min == domain.lo
    assert groups[4].theta_max == domain.hi
    for rank in domain:
        hits = [g for g in groups if rank in g]
        assert 1 <= len(hits) <= 2
    for g in groups:
        assert domain.lo <= g.extended_min <= g.theta_min
        assert g.theta_max <= g.extended_max <= domain.hi
        assert g.extended_min >= max(domain.lo, g.theta_min - alpha)
    # consecutive groups overlap; spans never shrink
    spans = [g.theta_max - g.theta_min for g in groups]
    assert all(b >= a for a, b in zip(spans, spans[1:]))
    for a, b in zip(groups, groups[1:]):
        assert b.theta_min <= a.theta_max + 1


@given(lo=st.integers(-50, 100), width=st.integers(3, 200),
       count=st.integers(2, 8), alpha=st.integers(0, 10))
def test_equal_partition_invariants(lo, width, count, alpha):
    domain = RankRange(lo, lo + width)
    if len(domain) < 2 * count:
        with pytest.raises(ConfigError):
            partition_equal(domain, count, alpha)
        return
    groups = partition_equal(domain, count, alpha)
    assert len(groups) == count
    covered = []
    for g in groups:
        covered.extend(range(g.theta_min, g.theta_max + 1))
    assert covered == list(domain)
    sizes = [g.theta_max - g.theta_min + 1 for g in groups]
    assert max(sizes) - min(sizes) <= 1
