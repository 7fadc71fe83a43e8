"""Mean-reversion point forecasts and Gaussian parametric intervals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from pulsecal.core import Interval, ScoreSeries, clamped_interval

DEFAULT_REVERSION = 0.003
# two-sided 80% normal quantile as conventionally rounded
Z80 = 1.28


@dataclass(frozen=True)
class ForecastModel:
    """Parameters of the mean-reversion forecaster.

    ``reversion`` is the per-hour pull towards ``long_run_mean``;
    ``innovation_scale`` is the std of one-step score changes.
    """

    reversion: float
    long_run_mean: float
    innovation_scale: float
    bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.bounds
        if self.reversion < 0 or self.innovation_scale < 0:
            raise ValueError("reversion rate and innovation scale must be nonnegative")
        if not lo <= self.long_run_mean <= hi:
            raise ValueError(f"long-run mean must lie in [{lo}, {hi}]")


def estimate_model(series: ScoreSeries | np.ndarray, reversion: float = DEFAULT_REVERSION,
                   bounds: tuple[float, float] = (0.0, 1.0)) -> ForecastModel:
    """Long-run mean from the series mean, innovation scale from the sample
    std of consecutive differences; the reversion rate is not estimated."""
    x = series.scores if isinstance(series, ScoreSeries) else np.asarray(series, dtype=float)
    if x.size < 3:
        raise ValueError("need at least 3 observations to estimate the model")
    mean = float(np.mean(x))
    # keep float rounding from nudging the mean outside the bounds
    mean = min(max(mean, bounds[0]), bounds[1])
    return ForecastModel(reversion, mean, float(np.std(np.diff(x), ddof=1)), bounds)


def mean_reversion_forecast(current, model: ForecastModel, horizon: float):
    """``current + reversion * (mean - current) * horizon``, clamped.

    Accepts a scalar or an array of current scores. Past ``reversion *
    horizon = 1`` the forecast would overshoot the mean, so it stops there.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    pull = min(model.reversion * horizon, 1.0)
    cur = np.asarray(current, dtype=float)
    out = cur + pull * (model.long_run_mean - cur)
    out = np.clip(out, *model.bounds)
    return float(out) if out.ndim == 0 else out


def z_score(level: float) -> float:
    """Two-sided standard-normal quantile; 0.80 maps to 1.28 exactly."""
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if math.isclose(level, 0.80, rel_tol=0, abs_tol=1e-12):
        return Z80
    return float(norm.ppf(0.5 + level / 2.0))


def parametric_half_width(model: ForecastModel, horizon: float, level: float) -> float:
    if horizon <= 0:
        raise ValueError("parametric intervals need a positive horizon")
    return z_score(level) * model.innovation_scale * math.sqrt(horizon)


def parametric_interval(forecast: float, model: ForecastModel, horizon: float,
                        level: float = 0.80) -> Interval:
    hw = parametric_half_width(model, horizon, level)
    return clamped_interval(forecast, hw, level, "parametric", model.bounds,
                            degenerate=model.innovation_scale == 0)


def horizon_pairs(scores, model: ForecastModel, horizon: int, start: int = 0,
                  stop: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forecasts issued at every origin in ``[start, stop)`` whose target
    ``origin + horizon`` also falls before ``stop``.

    Returns ``(origins, forecasts, actuals)``.
    """
    x = np.asarray(scores, dtype=float)
    stop = x.size if stop is None else stop
    origins = np.arange(start, max(stop - horizon, start))
    forecasts = mean_reversion_forecast(x[origins], model, horizon)
    return origins, np.atleast_1d(forecasts), x[origins + horizon]
