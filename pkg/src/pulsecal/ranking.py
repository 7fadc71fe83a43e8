"""Conformal abstention for pairwise rankings and Benjamini-Hochberg control.

For a pair ``(a, b)`` the score difference ``a - b`` is treated as its own
series: it is forecast with the mean-reversion model and calibrated on its
own residuals. A pair is ranked only when the conformal interval for the
difference excludes zero (zero on an endpoint abstains).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from itertools import combinations
from typing import Hashable, Mapping, Sequence

import numpy as np

from pulsecal.conformal import (CalibrationSet, DEFAULT_TRAIN_FRACTION, calibration_residuals,
                                conformal_interval, split_point)
from pulsecal.core import Interval, ScoreSeries
from pulsecal.forecast import DEFAULT_REVERSION, ForecastModel, mean_reversion_forecast

A_ABOVE, B_ABOVE, ABSTAIN = "ranked-a-above", "ranked-b-above", "abstain"
DELTA_BOUNDS = (-1.0, 1.0)


@dataclass(frozen=True, order=True)
class PairKey:
    a: Hashable
    b: Hashable

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("a pair needs two distinct agents")
        if not self.a < self.b:
            raise ValueError("pair keys are stored in canonical (a < b) order")

    @classmethod
    def of(cls, x, y) -> "PairKey":
        return cls(x, y) if x < y else cls(y, x)


@dataclass(frozen=True)
class RankDecision:
    pair: PairKey
    delta: float
    interval: Interval
    p_value: float
    decision: str
    fdr_adjusted: bool = False

    @property
    def ranked(self) -> bool:
        return self.decision != ABSTAIN

    def winner(self):
        if self.decision == A_ABOVE:
            return self.pair.a
        if self.decision == B_ABOVE:
            return self.pair.b
        return None


@dataclass(frozen=True)
class DifferenceSetup:
    difference: np.ndarray
    model: ForecastModel
    calibration: CalibrationSet
    estimate: float


def _aligned_difference(history_a: ScoreSeries, history_b: ScoreSeries) -> np.ndarray:
    common, ia, ib = np.intersect1d(history_a.timestamps, history_b.timestamps,
                                    assume_unique=True, return_indices=True)
    if common.size < 2:
        raise ValueError("pair histories share fewer than 2 timestamps")
    return history_a.scores[ia] - history_b.scores[ib]


def difference_setup(history_a: ScoreSeries, history_b: ScoreSeries, horizon: int = 1,
                     train_fraction: float = DEFAULT_TRAIN_FRACTION,
                     reversion: float = DEFAULT_REVERSION) -> DifferenceSetup:
    diff = _aligned_difference(history_a, history_b)
    n_train = split_point(diff.size, train_fraction)
    train = diff[:n_train]
    scale = float(np.std(np.diff(train), ddof=1)) if train.size >= 3 else 0.0
    mean = float(np.clip(train.mean(), *DELTA_BOUNDS))
    model = ForecastModel(reversion, mean, scale, DELTA_BOUNDS)
    res = calibration_residuals(diff, model, horizon, n_train)
    cal = CalibrationSet(res, train_fraction)
    estimate = mean_reversion_forecast(diff[-1], model, horizon)
    return DifferenceSetup(diff, model, cal, estimate)


def delta_calibration(history_a: ScoreSeries, history_b: ScoreSeries, horizon: int = 1,
                      train_fraction: float = DEFAULT_TRAIN_FRACTION,
                      reversion: float = DEFAULT_REVERSION) -> CalibrationSet:
    """Residuals of the forecast difference series over its calibration segment."""
    return difference_setup(history_a, history_b, horizon, train_fraction, reversion).calibration


def conformal_p_value(delta: float, cal: CalibrationSet) -> float:
    """``(1 + #{residuals >= |delta|}) / (n_cal + 1)``."""
    n = cal.n_cal
    if n == 0:
        raise ValueError("empty calibration set")
    count = n - int(np.searchsorted(cal.residuals, abs(delta), side="left"))
    return (1 + count) / (n + 1)


def abstain_decision(delta: float, cal: CalibrationSet, alpha: float,
                     pair: PairKey | None = None) -> RankDecision:
    iv = conformal_interval(delta, cal, alpha, DELTA_BOUNDS)
    if iv.lower <= 0.0 <= iv.upper:
        decision = ABSTAIN
    else:
        decision = A_ABOVE if delta > 0 else B_ABOVE
    pair = pair if pair is not None else PairKey("a", "b")
    return RankDecision(pair, float(delta), iv, conformal_p_value(delta, cal), decision)


def benjamini_hochberg(p_values: Sequence[float], q: float = 0.20) -> np.ndarray:
    """Boolean rejection mask of the step-up BH procedure at FDR ``q``."""
    if not 0 < q < 1:
        raise ValueError("target FDR q must lie in (0, 1)")
    p = np.asarray(p_values, dtype=float)
    m = p.size
    if m == 0:
        return np.zeros(0, dtype=bool)
    ranked = np.sort(p)
    passing = np.nonzero(ranked <= q * np.arange(1, m + 1) / m)[0]
    if passing.size == 0:
        return np.zeros(m, dtype=bool)
    cutoff = ranked[passing[-1]]
    return p <= cutoff


def apply_fdr(decisions: Sequence[RankDecision], q: float = 0.20) -> list[RankDecision]:
    """Re-decide every pair: ranked only if BH at ``q`` rejects its null."""
    mask = benjamini_hochberg([d.p_value for d in decisions], q)
    out = []
    for d, reject in zip(decisions, mask):
        if reject and d.delta != 0:
            decision = A_ABOVE if d.delta > 0 else B_ABOVE
        else:
            decision = ABSTAIN
        out.append(replace(d, decision=decision, fdr_adjusted=True))
    return out


def pairwise_decisions(histories: Mapping[Hashable, ScoreSeries], alpha: float = 0.20,
                       horizon: int = 1, train_fraction: float = DEFAULT_TRAIN_FRACTION,
                       reversion: float = DEFAULT_REVERSION) -> list[RankDecision]:
    """Per-pair decisions (before FDR) for every unordered pair of agents."""
    out = []
    for a, b in combinations(sorted(histories), 2):
        setup = difference_setup(histories[a], histories[b], horizon, train_fraction, reversion)
        out.append(abstain_decision(setup.estimate, setup.calibration, alpha, PairKey(a, b)))
    return out


@dataclass
class Leaderboard:
    entries: list[dict]
    decisions: list[RankDecision]
    mode: str
    abstention_rate: float
    band_rates: dict[str, float | None]

    def summary(self) -> dict:
        ranked = sum(d.ranked for d in self.decisions)
        return {
            "mode": self.mode,
            "pairs": len(self.decisions),
            "ranked": ranked,
            "abstained": len(self.decisions) - ranked,
            "abstention_rate": self.abstention_rate,
            "band_abstention_rates": dict(self.band_rates),
        }


def build_leaderboard(agents: Sequence[Hashable], scores: Sequence[float],
                      decisions: Sequence[RankDecision], mode: str = "per-pair-alpha",
                      intervals: Mapping[Hashable, Interval] | None = None,
                      bands: Sequence[tuple[int, int]] = ((1, 10), (20, 30))) -> Leaderboard:
    """Order agents by point score and summarise abstention.

    A band ``(lo, hi)`` covers 1-based ranks ``lo..hi`` and its rate counts
    pairs with both agents inside the band.
    """
    if mode not in ("per-pair-alpha", "fdr"):
        raise ValueError(f"unknown leaderboard mode {mode!r}")
    if len(agents) != len(scores):
        raise ValueError("agents and scores differ in length")
    by_pair = {d.pair: d for d in decisions}
    needed = [PairKey.of(a, b) for a, b in combinations(agents, 2)]
    missing = [p for p in needed if p not in by_pair]
    if missing:
        raise ValueError(f"missing decisions for {len(missing)} pairs, e.g. {missing[0]}")
    order = sorted(range(len(agents)), key=lambda i: (-scores[i], agents[i]))
    rank_of = {agents[i]: r + 1 for r, i in enumerate(order)}
    entries = []
    for r, i in enumerate(order, start=1):
        a = agents[i]
        iv = intervals.get(a) if intervals else None
        entries.append({
            "agent_id": a,
            "score": float(scores[i]),
            "rank": r,
            "interval_lower": None if iv is None else iv.lower,
            "interval_upper": None if iv is None else iv.upper,
        })
    chosen = sorted((by_pair[p] for p in needed),
                    key=lambda d: tuple(sorted((rank_of[d.pair.a], rank_of[d.pair.b]))))
    overall = _abstain_rate(chosen)
    band_rates = {}
    for lo, hi in bands:
        inside = [d for d in chosen if lo <= rank_of[d.pair.a] <= hi and lo <= rank_of[d.pair.b] <= hi]
        band_rates[f"{lo}-{hi}"] = _abstain_rate(inside)
    return Leaderboard(entries, chosen, mode, overall, band_rates)


def _abstain_rate(decisions: Sequence[RankDecision]) -> float | None:
    if not decisions:
        return None
    return sum(not d.ranked for d in decisions) / len(decisions)


def false_ranking_rate(decisions: Sequence[RankDecision], truth: Mapping[Hashable, float]
                       ) -> tuple[int, int, float]:
    """``(ranked, wrong, wrong / ranked)`` against true scores; rate is 0 if nothing ranked."""
    ranked = wrong = 0
    for d in decisions:
        if not d.ranked:
            continue
        ranked += 1
        true_diff = truth[d.pair.a] - truth[d.pair.b]
        if (d.decision == A_ABOVE and true_diff <= 0) or (d.decision == B_ABOVE and true_diff >= 0):
            wrong += 1
    return ranked, wrong, (wrong / ranked if ranked else 0.0)
