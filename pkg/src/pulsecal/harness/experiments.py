"""Experiment drivers shared by the CLI commands and the acceptance suite.

Each agent's stream is split chronologically into train, calibration and
test segments: the last ``test_fraction`` of the points is the test segment
and the remaining history is split ``train_fraction`` / rest. Forecasts with
targets in the test segment are scored against every interval method.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Mapping, Sequence

import numpy as np

from pulsecal.conformal import (AciRun, AciState, CalibrationSet, CoverageRow,
                                bootstrap_offset_table, calibration_residuals, conformal_bounds,
                                conformal_quantile, mondrian_calibrate, run_aci, split_point)
from pulsecal.core import Interval, ScoreSeries
from pulsecal.forecast import (ForecastModel, estimate_model, horizon_pairs, mean_reversion_forecast,
                               parametric_half_width)
from pulsecal.ranking import (ABSTAIN, Leaderboard, RankDecision, apply_fdr, build_leaderboard,
                              false_ranking_rate, pairwise_decisions)
from pulsecal.scorekit import (DEFAULT_WEIGHTS, FactorVector, TauSummary, Weights, composite_score,
                               dirichlet_weight_sensitivity, score_matrix, single_factor_perturbation)
from pulsecal.simgen import ShiftEvent, make_rng

CALIBRATE_METHODS = ("parametric", "split-conformal", "split-conformal-pooled", "aci", "mondrian",
                     "bootstrap")


@dataclass(frozen=True)
class Segments:
    n: int
    n_train: int
    n_hist: int


def segments(n: int, test_fraction: float, train_fraction: float, horizon: int) -> Segments:
    n_hist = n - int(math.floor(n * test_fraction))
    if n_hist >= n:
        raise ValueError(f"test segment of a {n}-point stream is empty")
    n_train = split_point(n_hist, train_fraction)
    if n_train < 3:
        raise ValueError("training segment needs at least 3 points")
    if n_hist - n_train <= 0 or n - n_hist < 1:
        raise ValueError(f"stream of {n} points is too short for horizon {horizon}")
    return Segments(n, n_train, n_hist)


@dataclass
class AgentForecasts:
    """Train-fitted model, calibration residuals and test forecasts for one agent."""

    agent_id: str
    horizon: int
    model: ForecastModel
    calibration: CalibrationSet
    origins: np.ndarray
    forecasts: np.ndarray
    actuals: np.ndarray
    history_residuals: np.ndarray  # signed, targets before the test segment


def agent_forecasts(series: ScoreSeries | np.ndarray, horizon: int, test_fraction: float = 0.25,
                    train_fraction: float = 0.7, reversion: float = 0.003,
                    agent_id: str | None = None) -> AgentForecasts:
    x = series.scores if isinstance(series, ScoreSeries) else np.asarray(series, dtype=float)
    name = agent_id or (series.agent_id if isinstance(series, ScoreSeries) else "agent")
    seg = segments(x.size, test_fraction, train_fraction, horizon)
    return _forecasts_at(x, name, horizon, seg.n_train, seg.n_hist, reversion)


def _forecasts_at(x: np.ndarray, name: str, horizon: int, n_train: int, n_hist: int,
                  reversion: float) -> AgentForecasts:
    model = estimate_model(x[:n_train], reversion)
    try:
        cal = CalibrationSet(calibration_residuals(x[:n_hist], model, horizon, n_train))
    except ValueError:
        raise ValueError(f"{name}: calibration segment too short for horizon {horizon}") from None
    origins, f, y = horizon_pairs(x, model, horizon, n_hist - horizon)
    if f.size == 0:
        raise ValueError(f"{name}: test segment too short for horizon {horizon}")
    _, hf, hy = horizon_pairs(x, model, horizon, 0, n_hist)
    return AgentForecasts(name, horizon, model, cal, origins, f, y, hy - hf)


# -- coverage study ----------------------------------------------------------

@dataclass(frozen=True)
class CoverageRecord:
    """Hit count and width sum of one (agent, horizon, method, alpha) cell."""

    agent_id: str
    stratum: str
    horizon: int
    method: str
    alpha: float
    n: int
    hits: int
    width_sum: float


def _record(af: AgentForecasts, stratum, method, alpha, lower, upper) -> CoverageRecord:
    inside = (lower <= af.actuals) & (af.actuals <= upper)
    return CoverageRecord(af.agent_id, stratum, af.horizon, method, float(alpha), int(inside.size),
                          int(inside.sum()), float(np.sum(upper - lower)))


def coverage_study(series: Mapping[str, ScoreSeries], sigma_cross: Mapping[str, float],
                   horizons: Sequence[int], alphas: Sequence[float], *, gamma: float = 0.01,
                   resamples: int = 1000, threshold: float = 0.04, test_fraction: float = 0.25,
                   train_fraction: float = 0.7, reversion: float = 0.003, seed: int = 0,
                   methods: Sequence[str] = CALIBRATE_METHODS) -> list[CoverageRecord]:
    """Score every interval method on every agent, horizon and alpha.

    ``split-conformal`` calibrates per agent, ``split-conformal-pooled`` pools
    all agents' residuals, ``mondrian`` pools within divergence strata.
    """
    unknown = set(methods) - set(CALIBRATE_METHODS)
    if unknown:
        raise ValueError(f"unknown methods {sorted(unknown)}")
    agents = sorted(series)
    missing = [a for a in agents if a not in sigma_cross]
    if missing:
        raise ValueError(f"no cross-source divergence for agents {missing[:3]}")
    records = []
    for h in horizons:
        fc = {a: agent_forecasts(series[a], h, test_fraction, train_fraction, reversion)
              for a in agents}
        strata = mondrian_calibrate({a: fc[a].calibration.residuals for a in agents},
                                    {a: sigma_cross[a] for a in agents}, threshold)
        pooled = CalibrationSet(np.concatenate([fc[a].calibration.residuals for a in agents]))
        for idx, a in enumerate(agents):
            af = fc[a]
            label = strata.stratum_of(a)
            boot = None
            if "bootstrap" in methods:
                rng = make_rng([seed, idx, h])
                boot = bootstrap_offset_table(af.history_residuals, resamples,
                                              [1.0 - al for al in alphas], rng)
            for j, alpha in enumerate(alphas):
                for method in methods:
                    lo, hi = _method_bounds(method, af, alpha, pooled, strata, gamma,
                                            None if boot is None else boot[j])
                    records.append(_record(af, label, method, alpha, lo, hi))
    return records


def _method_bounds(method, af: AgentForecasts, alpha, pooled, strata, gamma, boot_offsets):
    f = af.forecasts
    if method == "parametric":
        hw = parametric_half_width(af.model, af.horizon, 1.0 - alpha)
        return conformal_bounds(f, hw)
    if method == "split-conformal":
        return conformal_bounds(f, conformal_quantile(af.calibration, alpha)[0])
    if method == "split-conformal-pooled":
        return conformal_bounds(f, conformal_quantile(pooled, alpha)[0])
    if method == "mondrian":
        return conformal_bounds(f, strata.quantile(af.agent_id, alpha)[0])
    if method == "aci":
        run = run_aci(f, af.actuals, af.calibration, AciState.start(alpha, gamma), af.horizon)
        return run.lower, run.upper
    if method == "bootstrap":
        lo_off, hi_off = boot_offsets
        c = np.clip(f, 0.0, 1.0)
        return np.clip(c + lo_off, 0.0, 1.0), np.clip(c + hi_off, 0.0, 1.0)
    raise ValueError(f"unknown method {method!r}")


def aggregate(records: Sequence[CoverageRecord],
              group: Callable[[CoverageRecord], Hashable]) -> list[CoverageRow]:
    """Pool records into coverage rows keyed by ``(group, method, alpha)``.

    Rows keep the order in which their keys first appear.
    """
    tally: dict[tuple, list] = {}
    for r in records:
        key = (group(r), r.method, r.alpha)
        t = tally.setdefault(key, [0, 0, 0.0])
        t[0] += r.n
        t[1] += r.hits
        t[2] += r.width_sum
    return [CoverageRow(g, n, hits / n, width / n, method, alpha)
            for (g, method, alpha), (n, hits, width) in tally.items()]


# -- release-shift study -----------------------------------------------------

@dataclass
class ShiftTrace:
    agent_id: str
    event: ShiftEvent
    origins: np.ndarray
    horizon: int
    actuals: np.ndarray
    run: AciRun
    split_lower: np.ndarray
    split_upper: np.ndarray
    param_lower: np.ndarray
    param_upper: np.ndarray

    @property
    def targets(self) -> np.ndarray:
        return self.origins + self.horizon

    def metrics(self, settle: int = 2000) -> dict:
        """Width and coverage around the event.

        Pre-event intervals have targets before the event; the 6-step
        post-event window is the first 6 origins at or after it.
        """
        e = self.event.time
        w = self.run.width
        pre = self.targets < e
        post6 = (self.origins >= e) & (self.origins < e + 6)
        after = self.targets >= e
        tail = min(settle, int(after.sum()) // 2)
        split_w = self.split_upper - self.split_lower
        return {
            "agent_id": self.agent_id,
            "event_time": e,
            "pre_width": float(w[pre].mean()),
            "post6_width": float(w[post6].mean()),
            "width_ratio": float(w[post6].mean() / w[pre].mean()),
            "post_steps": int(after.sum()),
            "post_miscoverage": float(1.0 - self.run.covered[after].mean()),
            "final_alpha_mean": float(self.run.alpha[-tail:].mean()) if tail else math.nan,
            "telescoping_gap": self.run.telescoping_gap(),
            "split_pre_width": float(split_w[pre].mean()),
            "split_post6_width": float(split_w[post6].mean()),
        }


@dataclass
class ShiftStudy:
    traces: list[ShiftTrace]
    alpha: float
    gamma: float
    horizon: int
    per_agent: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        m = self.per_agent
        pre = np.array([r["pre_width"] for r in m])
        post = np.array([r["post6_width"] for r in m])
        steps = np.array([r["post_steps"] for r in m])
        miss = np.array([r["post_miscoverage"] for r in m])
        return {
            "agents": len(m),
            "alpha": self.alpha,
            "gamma": self.gamma,
            "horizon": self.horizon,
            "pre_width_mean": float(pre.mean()),
            "post6_width_mean": float(post.mean()),
            "width_ratio": float(post.mean() / pre.mean()),
            "post_steps_min": int(steps.min()),
            "post_miscoverage": float(np.sum(miss * steps) / steps.sum()),
            "final_alpha_mean": float(np.nanmean([r["final_alpha_mean"] for r in m])),
            "telescoping_gap_max": float(max(r["telescoping_gap"] for r in m)),
            "split_pre_width_mean": float(np.mean([r["split_pre_width"] for r in m])),
            "split_post6_width_mean": float(np.mean([r["split_post6_width"] for r in m])),
        }


def shift_study(series: Mapping[str, ScoreSeries], events: Mapping[str, ShiftEvent], *,
                alpha: float = 0.2, gamma: float = 0.05, horizon: int = 1, pre: int = 300,
                train_fraction: float = 0.7, reversion: float = 0.003,
                rolling: bool = True) -> ShiftStudy:
    """ACI vs. split conformal vs. parametric around each agent's release event.

    The history ends ``pre`` steps before the event; everything after it is
    served online.
    """
    if not events:
        raise ValueError("no shift event in the dataset")
    traces = []
    for agent in sorted(events):
        if agent not in series:
            raise ValueError(f"event for unknown agent {agent!r}")
        ev = events[agent]
        x = series[agent].scores
        n_hist = ev.time - pre
        if n_hist < 10 or ev.time + horizon >= x.size:
            raise ValueError(f"{agent}: event at {ev.time} leaves too little history or follow-up")
        af = _forecasts_at(x, agent, horizon, split_point(n_hist, train_fraction), n_hist, reversion)
        run = run_aci(af.forecasts, af.actuals, af.calibration, AciState.start(alpha, gamma),
                      horizon, rolling)
        q, _ = conformal_quantile(af.calibration, alpha)
        s_lo, s_hi = conformal_bounds(af.forecasts, q)
        p_lo, p_hi = conformal_bounds(af.forecasts,
                                      parametric_half_width(af.model, horizon, 1.0 - alpha))
        traces.append(ShiftTrace(agent, ev, af.origins, horizon, af.actuals, run,
                                 s_lo, s_hi, p_lo, p_hi))
    study = ShiftStudy(traces, alpha, gamma, horizon)
    study.per_agent = [t.metrics() for t in traces]
    return study


# -- ranking -----------------------------------------------------------------

@dataclass
class RankStudy:
    decisions: dict[str, list[RankDecision]]
    leaderboards: dict[str, Leaderboard]
    false_ranking: dict[str, dict] | None
    fdr_subset: bool

    def summary(self) -> dict:
        out = {mode: lb.summary() for mode, lb in self.leaderboards.items()}
        out["fdr_ranked_subset_of_per_pair"] = self.fdr_subset
        if self.false_ranking is not None:
            out["false_ranking"] = self.false_ranking
        return out


def agent_interval(series: ScoreSeries, horizon: int, alpha: float, train_fraction: float = 0.7,
                   reversion: float = 0.003) -> Interval:
    """Split-conformal interval for the score ``horizon`` steps past the last observation."""
    x = series.scores
    n_train = split_point(x.size, train_fraction)
    model = estimate_model(x[:n_train], reversion)
    cal = CalibrationSet(calibration_residuals(x, model, horizon, n_train))
    q, unbounded = conformal_quantile(cal, alpha)
    center = mean_reversion_forecast(x[-1], model, horizon)
    lo, hi = conformal_bounds(center, q)
    return Interval(center, float(lo), float(hi), 1.0 - alpha, "split-conformal", unbounded)


def rank_study(series: Mapping[str, ScoreSeries], *, alpha: float = 0.2, q: float = 0.2,
               horizon: int = 24, train_fraction: float = 0.7, reversion: float = 0.003,
               truth: Mapping[str, float] | None = None) -> RankStudy:
    if len(series) < 2:
        raise ValueError("ranking needs at least 2 agents")
    per_pair = pairwise_decisions(series, alpha, horizon, train_fraction, reversion)
    fdr = apply_fdr(per_pair, q)
    agents = sorted(series)
    scores = [float(series[a].scores[-1]) for a in agents]
    intervals = {a: agent_interval(series[a], horizon, alpha, train_fraction, reversion)
                 for a in agents}
    decisions = {"per-pair-alpha": per_pair, "fdr": fdr}
    boards = {mode: build_leaderboard(agents, scores, d, mode, intervals)
              for mode, d in decisions.items()}
    subset = all(f.decision == ABSTAIN or f.decision == p.decision for p, f in zip(per_pair, fdr))
    report = None
    if truth is not None:
        report = {}
        for mode, d in decisions.items():
            ranked, wrong, rate = false_ranking_rate(d, truth)
            report[mode] = {"ranked": ranked, "wrong": wrong, "rate": rate}
    return RankStudy(decisions, boards, report, subset)


# -- sensitivity -------------------------------------------------------------

@dataclass
class SensitivityStudy:
    ids: list[str]
    composite: np.ndarray
    u_model: np.ndarray
    sweep: list[TauSummary]


def sensitivity_study(ids: Sequence[str], vectors: Sequence[FactorVector],
                      weights: Weights = DEFAULT_WEIGHTS,
                      concentrations: Sequence[float] = (2, 5, 10, 20, 50), draws: int = 1000,
                      delta: float = 0.10, seed: int = 0) -> SensitivityStudy:
    """Dirichlet concentration sweep and single-factor perturbation counts.

    Every concentration uses the same seed, so the sweep compares the
    concentrations on common random numbers.
    """
    matrix = score_matrix(vectors)
    sweep = [dirichlet_weight_sensitivity(matrix, weights, k, draws, seed, ids)
             for k in concentrations]
    u = single_factor_perturbation(vectors, weights, delta, ids)
    composite = np.array([composite_score(v, weights) for v in vectors])
    return SensitivityStudy(list(ids), composite, u, sweep)
