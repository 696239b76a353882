"""Evaluation records and the standard ordinal-error summaries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from rankwin.errors import ConfigError, DataError, DomainError

__all__ = [
    "EvalRecord",
    "mae",
    "cumulative_score",
    "epsilon_error",
    "accuracy",
    "format_report",
]


@dataclass(frozen=True)
class EvalRecord:
    """Truth/prediction pair for one instance; sigma is optional."""

    instance_id: str
    truth: int
    prediction: int
    sigma: float | None = None


def _errors(records: Sequence[EvalRecord]) -> np.ndarray:
    if not records:
        raise DomainError("no evaluation records")
    return np.array([r.prediction - r.truth for r in records], dtype=np.float64)


def mae(records: Sequence[EvalRecord]) -> float:
    """Mean absolute error in rank units."""
    return float(np.mean(np.abs(_errors(records))))


def cumulative_score(records: Sequence[EvalRecord], tolerance: int = 5) -> float:
    """Percentage of records with |error| <= tolerance."""
    if tolerance < 0:
        raise ConfigError(f"tolerance must be >= 0, got {tolerance}")
    return float(100.0 * np.mean(np.abs(_errors(records)) <= tolerance))


def epsilon_error(records: Sequence[EvalRecord]) -> float:
    """Mean of 1 - exp(-err^2 / (2 sigma^2)); needs per-record sigma > 0.

    Soft accuracy that forgives errors small relative to the label's own
    uncertainty: an |error| of exactly sigma scores 1 - exp(-1/2).
    """
    err = _errors(records)
    sigmas = [r.sigma for r in records]
    if any(s is None for s in sigmas):
        raise DataError("epsilon error needs a sigma on every record")
    sig = np.array(sigmas, dtype=np.float64)
    if not np.all(np.isfinite(sig)) or np.any(sig <= 0):
        raise DataError("sigmas must be finite and > 0")
    return float(np.mean(1.0 - np.exp(-(err * err) / (2.0 * sig * sig))))


def accuracy(records: Sequence[EvalRecord]) -> float:
    """Percentage of exact hits; identical to cumulative_score(records, 0)."""
    return float(100.0 * np.mean(_errors(records) == 0.0))


def format_report(values: Mapping[str, object]) -> str:
    """Flat key-value block, one metric per line, floats at 6 digits."""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            lines.append(f"{key} {value:.6f}")
        else:
            lines.append(f"{key} {value}")
    return "\n".join(lines) + "\n"
