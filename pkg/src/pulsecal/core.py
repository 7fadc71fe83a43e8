"""Shared value types: score series and intervals."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METHODS = ("parametric", "split-conformal", "aci", "mondrian", "bootstrap")


@dataclass(frozen=True)
class ScoreSeries:
    """Hourly quality scores for one agent.

    ``timestamps`` are hours since epoch and must be strictly increasing;
    ``scores`` lie in [0, 1].
    """

    agent_id: str
    timestamps: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        sc = np.asarray(self.scores, dtype=float)
        if ts.ndim != 1 or ts.shape != sc.shape:
            raise ValueError("timestamps and scores must be 1-d arrays of equal length")
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if np.any(sc < 0.0) or np.any(sc > 1.0) or np.any(~np.isfinite(sc)):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "scores", sc)

    @classmethod
    def from_scores(cls, agent_id: str, scores, start: float = 0.0) -> "ScoreSeries":
        scores = np.asarray(scores, dtype=float)
        return cls(agent_id, start + np.arange(scores.size, dtype=float), scores)

    def __len__(self) -> int:
        return self.scores.size

    def slice(self, start: int, stop: int | None = None) -> "ScoreSeries":
        return ScoreSeries(self.agent_id, self.timestamps[start:stop], self.scores[start:stop])


@dataclass(frozen=True)
class Interval:
    """A prediction interval with its provenance.

    ``unbounded`` marks a conformal interval whose quantile index ran past the
    calibration set, so the interval spans the whole admissible range.
    ``degenerate`` marks a zero-width parametric interval (zero innovation
    scale). Both are valid outputs.
    """

    center: float
    lower: float
    upper: float
    level: float
    method: str
    unbounded: bool = False
    degenerate: bool = field(default=False, compare=False)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown interval method {self.method!r}")
        if not (self.lower <= self.center <= self.upper):
            raise ValueError(
                f"interval must satisfy lower <= center <= upper, got "
                f"{self.lower} <= {self.center} <= {self.upper}"
            )

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def clamped_interval(center, half_width, level, method, bounds=(0.0, 1.0), unbounded=False,
                     degenerate=False) -> Interval:
    lo, hi = bounds
    c = min(max(float(center), lo), hi)
    if unbounded:
        return Interval(c, lo, hi, level, method, unbounded=True)
    lower = max(c - half_width, lo)
    upper = min(c + half_width, hi)
    return Interval(c, lower, upper, level, method, degenerate=degenerate)
