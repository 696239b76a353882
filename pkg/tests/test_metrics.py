"""Error summaries over truth/prediction records."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rankwin.errors import ConfigError, DataError, DomainError
from rankwin.metrics import (EvalRecord, accuracy, cumulative_score,
                             epsilon_error, format_report, mae)


def records_from(pairs, sigma=None):
    return [EvalRecord(f"r{i}", t, p, sigma) for i, (t, p) in enumerate(pairs)]


def test_mae_is_mean_absolute_error():
    recs = records_from([(10, 12), (20, 17), (5, 5)])
    assert mae(recs) == pytest.approx((2 + 3 + 0) / 3, abs=1e-15)


def test_cumulative_score_counts_within_tolerance():
    recs = records_from([(10, 12), (20, 14), (5, 5), (8, 13)])
    assert cumulative_score(recs, 5) == 75.0
    assert cumulative_score(recs, 0) == 25.0
    assert cumulative_score(recs, 6) == 100.0
    with pytest.raises(ConfigError):
        cumulative_score(recs, -1)


def test_epsilon_error_unit_point():
    # |error| equal to sigma scores exactly 1 - exp(-1/2)
    recs = records_from([(10, 12)], sigma=2.0)
    assert epsilon_error(recs) == pytest.approx(1.0 - math.exp(-0.5), abs=1e-15)
    perfect = records_from([(10, 10)], sigma=2.0)
    assert epsilon_error(perfect) == 0.0


def test_epsilon_error_requires_valid_sigmas():
    with pytest.raises(DataError, match="every record"):
        epsilon_error(records_from([(1, 2)]))
    with pytest.raises(DataError, match="finite"):
        epsilon_error(records_from([(1, 2)], sigma=0.0))


def test_accuracy_equals_zero_tolerance_score():
    rng = np.random.default_rng(0)
    recs = [EvalRecord(f"r{i}", int(t), int(p))
            for i, (t, p) in enumerate(rng.integers(1, 10, size=(1000, 2)))]
    assert accuracy(recs) == cumulative_score(recs, 0)


@given(st.lists(st.tuples(st.integers(1, 99), st.integers(1, 99)),
                min_size=1, max_size=30))
def test_metric_ranges(pairs):
    recs = records_from(pairs, sigma=1.0)
    assert mae(recs) >= 0.0
    assert 0.0 <= accuracy(recs) <= cumulative_score(recs, 3) <= 100.0
    assert 0.0 <= epsilon_error(recs) <= 1.0


def test_empty_records_raise():
    with pytest.raises(DomainError):
        mae([])
    with pytest.raises(DomainError):
        accuracy([])


def test_format_report_fixes_float_precision():
    out = format_report({"mae": 1.23456789, "split": "test", "n": 10})
    assert out == "mae 1.234568\nsplit test\nn 10\n"
