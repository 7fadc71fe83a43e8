"""Composite scores, cross-source divergence and model-uncertainty analyses.

Rankings everywhere in this module sort by descending score and break ties
by ascending agent id, so every ranking is deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from pulsecal.core import Interval

FACTORS = ("benchmark", "adoption", "sentiment", "ecosystem")
NEUTRAL_PRIOR = 0.5
WEIGHT_TOLERANCE = 1e-9


@dataclass(frozen=True)
class FactorVector:
    """Four factor scores for one agent. ``None`` marks a missing factor."""

    benchmark: float | None
    adoption: float | None
    sentiment: float | None
    ecosystem: float | None

    def __post_init__(self):
        for name in FACTORS:
            v = getattr(self, name)
            if v is not None and not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def missing(self) -> tuple[bool, ...]:
        return tuple(getattr(self, name) is None for name in FACTORS)

    def values(self) -> np.ndarray:
        """Factor values with missing entries replaced by the neutral prior."""
        return np.array(
            [NEUTRAL_PRIOR if getattr(self, n) is None else getattr(self, n) for n in FACTORS]
        )


@dataclass(frozen=True)
class Weights:
    w_benchmark: float = 0.35
    w_adoption: float = 0.25
    w_sentiment: float = 0.20
    w_ecosystem: float = 0.20

    def __post_init__(self):
        w = self.as_array()
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError(f"weights must be nonnegative, got {tuple(w)}")
        if abs(w.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.w_benchmark, self.w_adoption, self.w_sentiment, self.w_ecosystem])

    @classmethod
    def from_array(cls, w) -> "Weights":
        return cls(*(float(x) for x in w))


DEFAULT_WEIGHTS = Weights()


@dataclass(frozen=True)
class PlatformScoreSet:
    agent_id: str
    scores: Mapping[str, float] = field(default_factory=dict)


def composite_score(factors: FactorVector, weights: Weights = DEFAULT_WEIGHTS) -> float:
    """Weighted sum of the four factors (missing factors count as 0.5)."""
    value = float(factors.values() @ weights.as_array())
    # guard against 1 + 1ulp from summation
    return min(max(value, 0.0), 1.0)


def score_matrix(agents: Sequence[FactorVector]) -> np.ndarray:
    return np.array([a.values() for a in agents], dtype=float).reshape(len(agents), 4)


def cross_source_divergence(scores: PlatformScoreSet | Mapping[str, float] | Sequence[float]) -> float:
    """Population standard deviation of one agent's per-platform scores."""
    if isinstance(scores, PlatformScoreSet):
        values = list(scores.scores.values())
    elif isinstance(scores, Mapping):
        values = list(scores.values())
    else:
        values = list(scores)
    if len(values) < 2:
        raise ValueError("cross-source divergence needs at least 2 platforms")
    arr = np.asarray(values, dtype=float)
    # np.std of equal values can round to ~1e-17; the spread is exactly zero
    if np.all(arr == arr[0]):
        return 0.0
    # scale before squaring so tiny spreads do not underflow to zero
    dev = arr - arr.mean()
    scale = float(np.max(np.abs(dev)))
    return scale * float(np.sqrt(np.mean((dev / scale) ** 2)))


def rank_order(scores, ids: Sequence | None = None) -> list:
    """Item ids ordered best-first: descending score, ties by ascending id."""
    scores = np.asarray(scores, dtype=float)
    if ids is None:
        ids = list(range(scores.size))
    return [ids[i] for i in _order_indices(scores, ids)]


def _order_indices(scores: np.ndarray, ids: Sequence) -> list[int]:
    return sorted(range(len(ids)), key=lambda i: (-scores[i], ids[i]))


def _positions(scores: np.ndarray, ids: Sequence) -> np.ndarray:
    """0-based rank position of every item (0 = best)."""
    order = _order_indices(scores, ids)
    pos = np.empty(len(order), dtype=int)
    pos[order] = np.arange(len(order))
    return pos


def kendall_tau(ranking_a: Sequence, ranking_b: Sequence) -> float:
    """Kendall tau between two rankings given as ordered item lists (no ties)."""
    if len(ranking_a) != len(ranking_b) or set(ranking_a) != set(ranking_b):
        raise ValueError("rankings must order the same set of items")
    if len(set(ranking_a)) != len(ranking_a):
        raise ValueError("rankings must not repeat items")
    n = len(ranking_a)
    if n < 2:
        raise ValueError("kendall tau needs at least 2 items")
    where_b = {item: i for i, item in enumerate(ranking_b)}
    pos_b = np.array([where_b[item] for item in ranking_a])
    return _tau_from_positions(pos_b)


def _tau_from_positions(pos_b: np.ndarray) -> float:
    # pos_b[i] = position in ranking b of the item ranked i-th in ranking a
    n = pos_b.size
    iu = np.triu_indices(n, k=1)
    s = np.sign(pos_b[iu[1]] - pos_b[iu[0]])
    return float(s.sum()) / (n * (n - 1) / 2)


def single_factor_perturbation(
    agents: Sequence[FactorVector],
    weights: Weights = DEFAULT_WEIGHTS,
    delta: float = 0.10,
    ids: Sequence | None = None,
) -> np.ndarray:
    """Count, per agent, how many of the 8 single-factor weight nudges move its rank.

    Each nudge adds or subtracts ``delta`` to one weight, clips at zero and
    renormalises to sum 1.
    """
    matrix = score_matrix(agents)
    ids = list(range(len(agents))) if ids is None else list(ids)
    base = _positions(matrix @ weights.as_array(), ids)
    counts = np.zeros(len(agents), dtype=int)
    for w in perturbed_weights(weights, delta):
        counts += _positions(matrix @ w, ids) != base
    return counts


def perturbed_weights(weights: Weights, delta: float) -> list[np.ndarray]:
    out = []
    base = weights.as_array()
    for j in range(4):
        for sign in (1.0, -1.0):
            w = base.copy()
            w[j] = max(w[j] + sign * delta, 0.0)
            out.append(w / w.sum())
    return out


@dataclass(frozen=True)
class TauSummary:
    concentration: float
    draws: int
    median: float
    p05: float
    p95: float


def dirichlet_weight_sensitivity(
    matrix,
    base_weights: Weights = DEFAULT_WEIGHTS,
    concentration: float = 10.0,
    draws: int = 1000,
    seed: int = 0,
    ids: Sequence | None = None,
) -> TauSummary:
    """Kendall tau between base ranking and rankings under Dirichlet-sampled weights.

    Weights are drawn from Dir(concentration * base_weights), so
    concentration 10 around the default weights is Dir(3.5, 2.5, 2.0, 2.0).
    """
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[1] != 4:
        raise ValueError("score matrix must be agents x 4 factors")
    if matrix.shape[0] < 2:
        raise ValueError("tau is undefined for fewer than 2 agents")
    if concentration <= 0 or draws < 1:
        raise ValueError("concentration must be > 0 and draws >= 1")
    ids = list(range(matrix.shape[0])) if ids is None else list(ids)
    base = base_weights.as_array()
    # zero base weights would give a degenerate Dirichlet parameter
    alpha = np.maximum(concentration * base, 1e-12)
    rng = np.random.default_rng(seed)
    sampled = rng.dirichlet(alpha, size=draws)
    base_order = _order_indices(matrix @ base, ids)
    taus = np.empty(draws)
    for d in range(draws):
        pos = _positions(matrix @ sampled[d], ids)
        taus[d] = _tau_from_positions(pos[base_order])
    return TauSummary(
        concentration=float(concentration),
        draws=draws,
        median=float(np.median(taus)),
        p05=float(np.percentile(taus, 5)),
        p95=float(np.percentile(taus, 95)),
    )


def bootstrap_score_ci(observations, resamples: int = 1000, level: float = 0.95,
                       seed: int = 0) -> Interval:
    """Percentile bootstrap interval for the mean of ``observations``."""
    obs = np.asarray(observations, dtype=float)
    if obs.size == 0:
        raise ValueError("bootstrap needs at least one observation")
    if resamples < 100:
        raise ValueError("use at least 100 resamples")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, obs.size, size=(resamples, obs.size))
    means = obs[idx].mean(axis=1)
    tail = (1.0 - level) / 2.0
    lower, upper = np.quantile(means, [tail, 1.0 - tail])
    center = float(obs.mean())
    # a constant sample gives means that differ from center only by rounding
    lower, upper = min(float(lower), center), max(float(upper), center)
    return Interval(center, lower, upper, level, "bootstrap")
