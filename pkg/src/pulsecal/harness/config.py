"""Run configuration: a flat ``key = value`` file mapped onto :class:`RunConfig`.

Lists are comma separated; ``none`` or an empty value clears an optional
key. Lines starting with ``#`` or ``;`` are comments.
"""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration or arguments (CLI exit code 1)."""


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "pulsecal"
    seed: int = 0
    data_dir: str | None = None
    out_dir: str = "out"

    # simulation
    n_stable: int = 35
    n_volatile: int = 15
    stream_length: int = 2000
    sim_reversion: float = 0.003
    stable_std: float = 0.01
    volatile_std: float = 0.02
    stable_divergence: float = 0.015
    volatile_divergence: float = 0.08
    platforms: int = 6
    innovation_df: float | None = None
    shift_time: int | None = None
    shift_jump: float = 0.1
    shift_multiplier: float = 3.0
    shift_agents: int | None = None

    # forecasting and calibration
    reversion: float = 0.003
    train_fraction: float = 0.7
    test_fraction: float = 0.25
    alpha: float = 0.2
    alpha_levels: tuple[float, ...] = (0.5, 0.4, 0.3, 0.2, 0.1, 0.05)
    horizons: tuple[int, ...] = (1, 6, 24, 48, 72)
    reference_horizon: int = 24
    gamma: float = 0.01
    resamples: int = 1000
    mondrian_threshold: float = 0.04

    # shift study
    shift_horizon: int = 1
    shift_pre: int = 300

    # ranking
    rank_horizon: int = 24
    fdr_q: float = 0.2

    # pipeline
    pipeline_sigmas: tuple[float, ...] = (0.031, 0.065)
    rho_grid: tuple[float, ...] = (-0.5, -0.4, -0.3, -0.2, -0.1, 0.0, 0.1, 0.2, 0.3, 0.4, 0.5,
                                   0.6, 0.7, 0.8, 0.9)
    pipeline_n: int = 100_000

    # sensitivity
    concentrations: tuple[float, ...] = (2.0, 5.0, 10.0, 20.0, 50.0)
    draws: int = 1000
    perturbation_delta: float = 0.10
    bootstrap_window: int = 168
    bootstrap_level: float = 0.95

    figures: bool = True

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        hints = typing.get_type_hints(cls)
        kwargs = {}
        for key, value in data.items():
            if isinstance(value, list):
                value = tuple(value)
            kwargs[key] = _coerce(key, hints[key], value) if isinstance(value, str) else value
        return cls(**kwargs)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_PROBABILITIES = ("alpha", "train_fraction", "test_fraction", "fdr_q", "bootstrap_level")


def validate(cfg: RunConfig) -> None:
    def fail(msg):
        raise ConfigError(msg)

    for name in _PROBABILITIES:
        v = getattr(cfg, name)
        if not 0 < v < 1:
            fail(f"{name} must lie in (0, 1), got {v}")
    if not cfg.alpha_levels or any(not 0 < a < 1 for a in cfg.alpha_levels):
        fail("alpha_levels must be a non-empty list of values in (0, 1)")
    if not cfg.horizons or any(h < 1 for h in cfg.horizons):
        fail("horizons must be a non-empty list of positive integers")
    for name in ("reference_horizon", "shift_horizon", "rank_horizon"):
        if getattr(cfg, name) < 1:
            fail(f"{name} must be positive")
    if cfg.seed < 0:
        fail("seed must be a nonnegative integer")
    if cfg.stream_length < 10:
        fail(f"stream_length must be at least 10, got {cfg.stream_length}")
    if cfg.n_stable < 0 or cfg.n_volatile < 0 or cfg.n_stable + cfg.n_volatile < 1:
        fail("need at least one simulated agent")
    if cfg.platforms < 2:
        fail("platforms must be at least 2")
    if cfg.gamma <= 0:
        fail("gamma must be positive")
    if cfg.resamples < 100:
        fail("resamples must be at least 100")
    if cfg.mondrian_threshold <= 0:
        fail("mondrian_threshold must be positive")
    if not cfg.rho_grid or any(not -1 <= r <= 1 for r in cfg.rho_grid):
        fail("rho_grid must be a non-empty list of values in [-1, 1]")
    if len(cfg.pipeline_sigmas) != 2 or any(s < 0 for s in cfg.pipeline_sigmas):
        fail("pipeline_sigmas needs exactly two nonnegative values")
    if cfg.pipeline_n < 2:
        fail("pipeline_n must be at least 2")
    if not cfg.concentrations or any(k <= 0 for k in cfg.concentrations):
        fail("concentrations must be positive")
    if cfg.draws < 1:
        fail("draws must be at least 1")
    if cfg.bootstrap_window < 1:
        fail("bootstrap_window must be positive")
    if cfg.reversion < 0 or cfg.sim_reversion < 0:
        fail("reversion rates must be nonnegative")
    if cfg.shift_multiplier <= 0:
        fail("shift_multiplier must be positive")
    if cfg.shift_time is not None and not 0 < cfg.shift_time < cfg.stream_length:
        fail("shift_time must fall inside the stream")
    if cfg.shift_pre < 1:
        fail("shift_pre must be positive")
    if cfg.innovation_df is not None and cfg.innovation_df <= 2:
        fail("innovation_df must exceed 2")


def _coerce(key: str, hint, text: str):
    text = text.strip()
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (args and type(None) in args):
        if text == "" or text.lower() == "none":
            return None
        inner = next(a for a in args if a is not type(None))
        return _coerce(key, inner, text)
    if origin is tuple:
        item = args[0]
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        return tuple(_coerce(key, item, p) for p in parts)
    try:
        if hint is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    return dict(parser["run"])


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read ``path`` (if any), apply non-None ``overrides`` and validate.

    Raises :class:`ConfigError` for bad content and ``OSError`` when the file
    cannot be read.
    """
    data: dict = {}
    if path is not None:
        data.update(parse_config_text(Path(path).read_text()))
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def to_text(cfg: RunConfig) -> str:
    lines = []
    for k, v in cfg.to_dict().items():
        if v is None:
            v = "none"
        elif isinstance(v, list):
            v = ", ".join(repr(x) for x in v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
