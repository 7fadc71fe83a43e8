"""Seeded synthetic data: mean-reverting score streams, release shifts,
stable/volatile populations and correlated pipeline errors.

Randomness comes from NumPy's ``Generator(PCG64(SeedSequence(seed)))``.
Population members draw from ``SeedSequence([seed, agent_index])`` so each
agent's stream is independent of how many other agents are generated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from pulsecal.core import ScoreSeries
from pulsecal.scorekit import DEFAULT_WEIGHTS, FactorVector, PlatformScoreSet, Weights, composite_score, \
    cross_source_divergence

STABLE, VOLATILE = "stable", "volatile"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


@dataclass(frozen=True)
class StreamSpec:
    """One mean-reverting stream.

    ``innovation_df`` switches the innovations from Gaussian to Student-t
    with that many degrees of freedom, rescaled to the same std.
    """

    long_run_mean: float = 0.5
    reversion: float = 0.003
    innovation_std: float = 0.01
    length: int = 2000
    initial: float | None = None
    seed: int | tuple[int, ...] = 0
    innovation_df: float | None = None
    agent_id: str = "agent_00"

    def __post_init__(self):
        if self.innovation_std < 0:
            raise ValueError("innovation std must be nonnegative")
        if self.length < 1:
            raise ValueError("stream length must be at least 1")
        if not 0 <= self.long_run_mean <= 1:
            raise ValueError("long-run mean must lie in [0, 1]")
        if self.initial is not None and not 0 <= self.initial <= 1:
            raise ValueError("initial score must lie in [0, 1]")
        if self.reversion < 0:
            raise ValueError("reversion rate must be nonnegative")
        if self.innovation_df is not None and self.innovation_df <= 2:
            raise ValueError("Student-t innovations need more than 2 degrees of freedom")

    @property
    def start(self) -> float:
        return self.long_run_mean if self.initial is None else self.initial


def _innovations(spec: StreamSpec) -> np.ndarray:
    rng = make_rng(spec.seed)
    n = spec.length - 1
    if spec.innovation_df is None:
        z = rng.standard_normal(n)
    else:
        df = spec.innovation_df
        z = rng.standard_t(df, n) * math.sqrt((df - 2.0) / df)
    return z * spec.innovation_std


def _recurse(out: np.ndarray, eps: np.ndarray, start: int, mean: float, lam: float) -> None:
    # out[t + 1] = clip(out[t] + lam * (mean - out[t]) + eps[t])
    s = float(out[start])
    for t in range(start, out.size - 1):
        s = s + lam * (mean - s) + eps[t]
        s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
        out[t + 1] = s


def gen_stream(spec: StreamSpec) -> ScoreSeries:
    out = np.empty(spec.length)
    out[0] = spec.start
    _recurse(out, _innovations(spec), 0, spec.long_run_mean, spec.reversion)
    return ScoreSeries.from_scores(spec.agent_id, out)


@dataclass(frozen=True)
class ShiftEvent:
    """A release: level jump at ``time`` plus a post-event innovation scale."""

    time: int
    jump: float = 0.0
    multiplier: float = 1.0

    def __post_init__(self):
        if self.multiplier <= 0:
            raise ValueError("innovation multiplier must be positive")


def inject_shift(series: ScoreSeries, event: ShiftEvent, spec: StreamSpec | None = None) -> ScoreSeries:
    """Apply ``event`` to a generated stream.

    Scores from ``event.time`` on move by ``event.jump`` (clamped). Scaling the
    post-event innovations needs the generating ``spec``: the innovations are
    redrawn from its seed, scaled, and the path is re-run from the event.
    """
    n = len(series)
    if not 0 <= event.time < n:
        raise ValueError(f"event time {event.time} outside stream of length {n}")
    out = series.scores.copy()
    if event.multiplier != 1.0:
        if spec is None or spec.length != n:
            raise ValueError("scaling innovations requires the stream's generating spec")
        eps = _innovations(spec)
        eps[event.time:] *= event.multiplier
        _recurse(out, eps, event.time, spec.long_run_mean, spec.reversion)
    if event.jump != 0.0:
        out[event.time:] = np.clip(out[event.time:] + event.jump, 0.0, 1.0)
    return ScoreSeries(series.agent_id, series.timestamps, out)


@dataclass(frozen=True)
class PopulationSpec:
    """Stable and volatile agents around planted long-run means.

    Each agent's long-run mean is the composite of a random factor vector,
    which is also returned so rankings have a ground truth. Volatile agents
    get larger innovations and larger platform divergence.
    """

    n_stable: int = 35
    n_volatile: int = 15
    stable_std: float = 0.01
    volatile_std: float = 0.02
    stable_divergence: float = 0.015
    volatile_divergence: float = 0.08
    platforms: int = 6
    length: int = 2000
    reversion: float = 0.003
    threshold: float = 0.04
    innovation_df: float | None = None
    stationary_start: bool = True
    mean_range: tuple[float, float] = (0.2, 0.8)
    weights: Weights = field(default=DEFAULT_WEIGHTS)
    max_retries: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_stable < 0 or self.n_volatile < 0 or self.n_stable + self.n_volatile < 1:
            raise ValueError("need at least one agent")
        if self.platforms < 2:
            raise ValueError("need at least 2 platforms per agent")
        if min(self.stable_std, self.volatile_std, self.stable_divergence,
               self.volatile_divergence) < 0:
            raise ValueError("scales must be nonnegative")
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.length < 1:
            raise ValueError("stream length must be at least 1")

    @property
    def size(self) -> int:
        return self.n_stable + self.n_volatile


@dataclass
class Population:
    series: list[ScoreSeries]
    platforms: list[PlatformScoreSet]
    labels: list[str]
    factors: list[FactorVector]
    long_run_means: np.ndarray
    specs: list[StreamSpec]

    @property
    def agent_ids(self) -> list[str]:
        return [s.agent_id for s in self.series]

    def sigma_cross(self) -> dict[str, float]:
        return {p.agent_id: cross_source_divergence(p) for p in self.platforms}


def agent_name(i: int, total: int) -> str:
    return f"agent_{i:0{max(2, len(str(total - 1)))}d}"


def gen_population(spec: PopulationSpec) -> Population:
    series, platforms, labels, factors, means, specs = [], [], [], [], [], []
    lo, hi = spec.mean_range
    for i in range(spec.size):
        label = STABLE if i < spec.n_stable else VOLATILE
        rng = make_rng([spec.seed, i])
        fv = FactorVector(*(float(x) for x in rng.beta(2.0, 2.0, size=4)))
        mean = min(max(composite_score(fv, spec.weights), lo), hi)
        std = spec.stable_std if label == STABLE else spec.volatile_std
        if spec.stationary_start and spec.reversion > 0:
            stat_sd = std / math.sqrt(spec.reversion * (2.0 - spec.reversion))
            initial = float(np.clip(mean + stat_sd * rng.standard_normal(), 0.0, 1.0))
        else:
            initial = mean
        name = agent_name(i, spec.size)
        stream = StreamSpec(mean, spec.reversion, std, spec.length, initial,
                            (spec.seed, i, 1), spec.innovation_df, name)
        divergence = spec.stable_divergence if label == STABLE else spec.volatile_divergence
        platforms.append(_platform_scores(name, fv.sentiment, divergence, label, spec, rng))
        series.append(gen_stream(stream))
        labels.append(label)
        factors.append(fv)
        means.append(mean)
        specs.append(stream)
    return Population(series, platforms, labels, factors, np.array(means), specs)


def _platform_scores(name, center, scale, label, spec: PopulationSpec, rng) -> PlatformScoreSet:
    for _ in range(spec.max_retries):
        draws = np.clip(center + scale * rng.standard_normal(spec.platforms), 0.0, 1.0)
        sigma = float(np.std(draws))
        if (sigma < spec.threshold) == (label == STABLE):
            return PlatformScoreSet(name, {f"p{j}": float(v) for j, v in enumerate(draws)})
    raise ValueError(
        f"{name}: could not draw {label} platform scores around threshold {spec.threshold} "
        f"in {spec.max_retries} tries; move the class scales away from the threshold"
    )


def with_shift(population: Population, index: int, event: ShiftEvent) -> Population:
    """Copy of ``population`` with ``event`` injected into one agent's stream."""
    series = list(population.series)
    series[index] = inject_shift(series[index], event, population.specs[index])
    return replace(population, series=series)


def gen_correlated_errors(sigma_a: float, sigma_b: float, rho: float, n: int,
                          seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian error pairs with stds ``sigma_a``, ``sigma_b`` and correlation ``rho``.

    ``b = sigma_b * (rho * z1 + sqrt(1 - rho^2) * z2)`` with ``a = sigma_a * z1``.
    """
    if not -1.0 <= rho <= 1.0:
        raise ValueError("correlation must lie in [-1, 1]")
    if sigma_a < 0 or sigma_b < 0:
        raise ValueError("sigmas must be nonnegative")
    rng = make_rng(seed)
    z = rng.standard_normal((2, n))
    a = sigma_a * z[0]
    b = sigma_b * (rho * z[0] + math.sqrt(1.0 - rho * rho) * z[1])
    return a, b
