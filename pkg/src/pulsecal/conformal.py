"""Split conformal, adaptive conformal (ACI), Mondrian calibration, coverage
evaluation and a bootstrap baseline.

Nonconformity scores are absolute forecast residuals. For a calibration set
of ``n`` residuals and miscoverage ``alpha`` the interval half-width is the
``k``-th smallest residual with ``k = ceil((1 - alpha) * (n + 1))``; when
``k > n`` the interval covers the whole admissible range.
"""

from __future__ import annotations

import bisect
import math
import warnings
from fractions import Fraction
from collections import deque
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from pulsecal.core import Interval, ScoreSeries, clamped_interval
from pulsecal.forecast import DEFAULT_REVERSION, estimate_model, horizon_pairs, mean_reversion_forecast

DEFAULT_TRAIN_FRACTION = 0.7
DEFAULT_GAMMA = 0.01
DEFAULT_THRESHOLD = 0.04
STABLE, VOLATILE = "stable", "volatile"

# below this distance from an integer the quantile index is computed exactly
_INDEX_EPS = 1e-6


@dataclass(frozen=True)
class CalibrationSet:
    residuals: np.ndarray
    train_fraction: float | None = None

    def __post_init__(self):
        r = np.sort(np.asarray(self.residuals, dtype=float).ravel())
        if np.any(r < 0) or np.any(~np.isfinite(r)):
            raise ValueError("nonconformity residuals must be finite and nonnegative")
        r.setflags(write=False)
        object.__setattr__(self, "residuals", r)

    @property
    def n_cal(self) -> int:
        return self.residuals.size

    def __len__(self) -> int:
        return self.n_cal


def split_history(series: ScoreSeries, train_fraction: float = DEFAULT_TRAIN_FRACTION
                  ) -> tuple[ScoreSeries, ScoreSeries]:
    """Chronological split: the first ``floor(n * train_fraction)`` points train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train fraction must lie in (0, 1)")
    n_train = split_point(len(series), train_fraction)
    return series.slice(0, n_train), series.slice(n_train)


def split_point(n: int, train_fraction: float) -> int:
    n_train = math.floor(n * Fraction(repr(float(train_fraction))))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"cannot split {n} points at fraction {train_fraction}: a segment is empty")
    return n_train


def nonconformity_scores(actuals, forecasts, train_fraction: float | None = None) -> CalibrationSet:
    a = np.asarray(actuals, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float).ravel()
    if a.size != f.size:
        raise ValueError("actuals and forecasts differ in length")
    if a.size == 0:
        raise ValueError("need at least one actual/forecast pair")
    return CalibrationSet(np.abs(a - f), train_fraction)


def calibration_residuals(scores, model, horizon: int, n_train: int) -> np.ndarray:
    """Absolute residuals of every forecast whose target lies after ``n_train``.

    Origins may sit in the training segment; only targets must be in the
    calibration segment.
    """
    x = np.asarray(scores, dtype=float)
    if n_train >= x.size:
        raise ValueError("calibration segment is empty")
    start = max(n_train - horizon, 0)
    _, f, y = horizon_pairs(x, model, horizon, start)
    if f.size == 0:
        raise ValueError("calibration segment is shorter than the horizon")
    return np.abs(y - f)


def quantile_index(n: int, alpha: float) -> int:
    """1-based order-statistic index ``ceil((1 - alpha)(n + 1))``.

    ``alpha`` is read as the shortest decimal that round-trips the float, so
    0.3 means 3/10 and 1 - 0.3 carries no binary noise. Products far from an
    integer take the float path; near-integers are settled exactly.
    """
    x = (1.0 - alpha) * (n + 1)
    if abs(x - round(x)) > _INDEX_EPS:
        return max(math.ceil(x), 1)
    exact = (1 - Fraction(repr(float(alpha)))) * (n + 1)
    return max(math.ceil(exact), 1)


def conformal_quantile(cal: CalibrationSet, alpha: float) -> tuple[float, bool]:
    """Return ``(q, unbounded)``; ``q`` is ``inf`` when ``unbounded``."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    n = cal.n_cal
    if n == 0:
        raise ValueError("empty calibration set")
    k = quantile_index(n, alpha)
    if k > n:
        return math.inf, True
    return float(cal.residuals[k - 1]), False


def conformal_interval(forecast: float, cal: CalibrationSet, alpha: float,
                       bounds: tuple[float, float] = (0.0, 1.0),
                       method: str = "split-conformal") -> Interval:
    q, unbounded = conformal_quantile(cal, alpha)
    return clamped_interval(forecast, q, 1.0 - alpha, method, bounds, unbounded=unbounded)


def conformal_bounds(forecasts, q: float, bounds: tuple[float, float] = (0.0, 1.0)):
    """Vectorised ``forecast +/- q`` clamped to ``bounds``; ``q = inf`` spans them."""
    f = np.clip(np.asarray(forecasts, dtype=float), *bounds)
    return np.maximum(f - q, bounds[0]), np.minimum(f + q, bounds[1])


# -- adaptive conformal ------------------------------------------------------

@dataclass(frozen=True)
class AciState:
    """Working miscoverage of an ACI stream.

    ``alpha_t`` is deliberately left unclamped: at or below 0 the next
    interval spans the full range, at or above 1 it has zero width.
    """

    alpha_t: float
    target: float = 0.2
    gamma: float = DEFAULT_GAMMA
    errors: int = 0
    steps: int = 0

    def __post_init__(self):
        if not 0 < self.target < 1:
            raise ValueError("target alpha must lie in (0, 1)")
        if self.gamma <= 0:
            raise ValueError("step size gamma must be positive")

    @classmethod
    def start(cls, target: float = 0.2, gamma: float = DEFAULT_GAMMA) -> "AciState":
        return cls(alpha_t=target, target=target, gamma=gamma)


def aci_step(state: AciState, covered: bool) -> AciState:
    err = 0 if covered else 1
    return AciState(state.alpha_t + state.gamma * (state.target - err), state.target,
                    state.gamma, state.errors + err, state.steps + 1)


def aci_half_width(cal: CalibrationSet, alpha_t: float) -> float:
    if alpha_t <= 0:
        return math.inf
    if alpha_t >= 1:
        return 0.0
    q, _ = conformal_quantile(cal, alpha_t)
    return q


def aci_interval(forecast: float, cal: CalibrationSet, state: AciState,
                 bounds: tuple[float, float] = (0.0, 1.0)) -> Interval:
    q = aci_half_width(cal, state.alpha_t)
    return clamped_interval(forecast, q, 1.0 - state.target, "aci", bounds,
                            unbounded=math.isinf(q))


@dataclass
class AciRun:
    """Per-origin trace of an ACI pass; ``alpha`` is the level each interval used."""

    alpha: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    covered: np.ndarray
    initial: AciState
    final: AciState

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def telescoping_gap(self) -> float:
        """``|(alpha_T - alpha_1) - gamma * (T * alpha - sum err)|``; zero up to rounding."""
        s = self.final
        expected = s.gamma * (s.steps * s.target - s.errors)
        return abs((s.alpha_t - self.initial.alpha_t) - expected)


def run_aci(forecasts, actuals, cal: CalibrationSet, state: AciState, horizon: int = 1,
            rolling: bool = True, bounds: tuple[float, float] = (0.0, 1.0)) -> AciRun:
    """Run ACI over forecasts issued at consecutive origins.

    The outcome of the forecast issued at origin ``i`` is revealed ``horizon``
    steps later, so the update it triggers is applied before origin
    ``i + horizon`` is served. With ``rolling`` the revealed residual also
    replaces the oldest one in the calibration window, which lets the working
    level settle back once a new regime fills the window.
    """
    f = np.asarray(forecasts, dtype=float)
    y = np.asarray(actuals, dtype=float)
    if f.shape != y.shape:
        raise ValueError("forecasts and actuals differ in length")
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    n = f.size
    window = list(cal.residuals)
    order = deque(window) if rolling else None
    initial = state
    alpha = np.empty(n)
    lower = np.empty(n)
    upper = np.empty(n)
    covered = np.empty(n, dtype=bool)

    def reveal(j: int, st: AciState) -> AciState:
        if rolling:
            r = abs(y[j] - f[j])
            old = order.popleft()
            del window[bisect.bisect_left(window, old)]
            bisect.insort(window, r)
            order.append(r)
        return aci_step(st, bool(covered[j]))

    for i in range(n):
        if i >= horizon:
            state = reveal(i - horizon, state)
        alpha[i] = state.alpha_t
        q = _window_half_width(window, state.alpha_t)
        c = min(max(f[i], bounds[0]), bounds[1])
        lower[i] = max(c - q, bounds[0])
        upper[i] = min(c + q, bounds[1])
        covered[i] = lower[i] <= y[i] <= upper[i]
    for j in range(max(n - horizon, 0), n):
        state = reveal(j, state)
    return AciRun(alpha, lower, upper, covered, initial, state)


def _window_half_width(window: Sequence[float], alpha_t: float) -> float:
    if alpha_t <= 0:
        return math.inf
    if alpha_t >= 1:
        return 0.0
    k = quantile_index(len(window), alpha_t)
    return math.inf if k > len(window) else window[k - 1]


# -- Mondrian ----------------------------------------------------------------

@dataclass(frozen=True)
class StratumMap:
    """Per-stratum calibration sets keyed by a cross-source divergence threshold."""

    threshold: float
    calibrations: Mapping[str, CalibrationSet]
    assignment: Mapping[Hashable, str]
    fallback: frozenset = frozenset()

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("stratum threshold must be positive")

    def stratum_of(self, agent) -> str:
        return self.assignment[agent]

    def calibration_for(self, agent) -> CalibrationSet:
        return self.calibrations[self.assignment[agent]]

    def quantile(self, agent, alpha: float) -> tuple[float, bool]:
        return conformal_quantile(self.calibration_for(agent), alpha)

    def interval(self, agent, forecast: float, alpha: float,
                 bounds: tuple[float, float] = (0.0, 1.0)) -> Interval:
        return conformal_interval(forecast, self.calibration_for(agent), alpha, bounds, "mondrian")


def stratum_label(sigma_cross: float, threshold: float = DEFAULT_THRESHOLD) -> str:
    return STABLE if sigma_cross < threshold else VOLATILE


def mondrian_calibrate(residuals: Mapping[Hashable, Iterable[float]],
                       sigma_cross: Mapping[Hashable, float],
                       threshold: float = DEFAULT_THRESHOLD) -> StratumMap:
    """Pool residuals within the stable (< threshold) and volatile strata.

    A stratum with no agents borrows the pooled calibration set of all agents
    and is listed in ``StratumMap.fallback``.
    """
    if threshold <= 0:
        raise ValueError("stratum threshold must be positive")
    if set(residuals) != set(sigma_cross):
        raise ValueError("residuals and divergences must cover the same agents")
    assignment = {}
    pooled: dict[str, list[np.ndarray]] = {STABLE: [], VOLATILE: []}
    everything = []
    for agent, res in residuals.items():
        res = np.asarray(list(res) if not isinstance(res, np.ndarray) else res, dtype=float)
        if res.size == 0:
            raise ValueError(f"agent {agent!r} has no residuals")
        label = stratum_label(sigma_cross[agent], threshold)
        assignment[agent] = label
        pooled[label].append(res)
        everything.append(res)
    if not everything:
        raise ValueError("no agents to calibrate")
    all_cal = CalibrationSet(np.concatenate(everything))
    calibrations = {}
    fallback = set()
    for label, parts in pooled.items():
        if parts:
            calibrations[label] = CalibrationSet(np.concatenate(parts))
        else:
            calibrations[label] = all_cal
            fallback.add(label)
    if fallback:
        warnings.warn(f"empty stratum {sorted(fallback)} falls back to pooled calibration")
    return StratumMap(threshold, calibrations, assignment, frozenset(fallback))


# -- coverage ----------------------------------------------------------------

@dataclass(frozen=True)
class CoverageRow:
    group: Hashable
    n: int
    coverage: float
    mean_width: float
    method: str = ""
    alpha: float | None = None


def coverage_table(lower, upper, actuals, groups=None, method: str = "",
                   alpha: float | None = None) -> list[CoverageRow]:
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    y = np.asarray(actuals, dtype=float)
    if not lo.shape == hi.shape == y.shape:
        raise ValueError("intervals and actuals are not aligned")
    inside = (lo <= y) & (y <= hi)
    width = hi - lo
    if groups is None:
        groups = np.zeros(y.size, dtype=int)
        keys = [0]
    else:
        groups = np.asarray(groups)
        if groups.shape != y.shape:
            raise ValueError("groups are not aligned with actuals")
        keys = sorted(set(groups.tolist()), key=lambda g: (str(type(g)), g))
    rows = []
    for g in keys:
        m = groups == g
        n = int(m.sum())
        if n:
            rows.append(CoverageRow(g, n, float(inside[m].mean()), float(width[m].mean()),
                                    method, alpha))
    return rows


def coverage_report(intervals: Sequence[Interval], actuals, groups=None,
                    alpha: float | None = None) -> list[CoverageRow]:
    """Empirical coverage and mean width per group (one pooled row if no groups)."""
    if len(intervals) != len(actuals):
        raise ValueError("intervals and actuals are not aligned")
    methods = {iv.method for iv in intervals}
    method = methods.pop() if len(methods) == 1 else "mixed"
    return coverage_table([iv.lower for iv in intervals], [iv.upper for iv in intervals],
                          actuals, groups, method, alpha)


# -- bootstrap baseline ------------------------------------------------------

def bootstrap_offsets(residuals, resamples: int, level: float,
                      rng: np.random.Generator) -> tuple[float, float]:
    """Bagged percentile offsets of signed residuals.

    Each resample draws the residuals with replacement and takes its
    ``(1 -/+ level) / 2`` percentiles; the offsets average those over resamples.
    """
    lo, hi = bootstrap_offset_table(residuals, resamples, [level], rng)[0]
    return float(lo), float(hi)


def bootstrap_offset_table(residuals, resamples: int, levels: Sequence[float],
                           rng: np.random.Generator) -> np.ndarray:
    """``(len(levels), 2)`` offsets, all levels read off the same resamples."""
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        raise ValueError("bootstrap needs at least one residual")
    if resamples < 100:
        raise ValueError("use at least 100 resamples")
    levels = np.asarray(levels, dtype=float)
    if np.any((levels <= 0) | (levels >= 1)):
        raise ValueError("level must lie in (0, 1)")
    tails = (1.0 - levels) / 2.0
    idx = rng.integers(0, r.size, size=(resamples, r.size))
    qs = _row_quantiles(np.sort(r[idx], axis=1), np.concatenate([tails, 1.0 - tails])).mean(axis=0)
    k = levels.size
    return np.column_stack([qs[:k], qs[k:]])


def _row_quantiles(rows: np.ndarray, probs: np.ndarray) -> np.ndarray:
    # linear-interpolation quantiles of already sorted rows; one sort serves every level
    pos = probs * (rows.shape[1] - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, rows.shape[1] - 1)
    return rows[:, lo] + (rows[:, hi] - rows[:, lo]) * (pos - lo)


def history_residuals(scores, horizon: int, reversion: float = DEFAULT_REVERSION) -> np.ndarray:
    """Signed h-step residuals (actual - forecast) over a whole history."""
    x = np.asarray(scores, dtype=float)
    if x.size < max(horizon + 2, 3):
        raise ValueError("history too short for the requested horizon")
    model = estimate_model(x, reversion)
    _, f, y = horizon_pairs(x, model, horizon)
    return y - f


def bootstrap_interval(history: ScoreSeries, horizon: int, resamples: int = 1000,
                       level: float = 0.80, seed: int = 0,
                       reversion: float = DEFAULT_REVERSION) -> Interval:
    """Bootstrap interval for the score ``horizon`` steps past the end of ``history``.

    The interval is widened if needed so that it contains the point forecast.
    """
    res = history_residuals(history.scores, horizon, reversion)
    lo_off, hi_off = bootstrap_offsets(res, resamples, level, np.random.default_rng(seed))
    model = estimate_model(history, reversion)
    center = mean_reversion_forecast(history.scores[-1], model, horizon)
    lower = min(max(center + lo_off, 0.0), center)
    upper = max(min(center + hi_off, 1.0), center)
    return Interval(center, lower, upper, level, "bootstrap")
