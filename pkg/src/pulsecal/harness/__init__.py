"""Configuration, persistence, experiment drivers and the ``pulsecal`` CLI."""

from pulsecal.harness.config import ConfigError, RunConfig, load_config

__all__ = ["ConfigError", "RunConfig", "load_config"]
