"""Simulation harness: configuration, the end-to-end engine, experiments and CLI."""

from .config import ConfigError, SimConfig, dump_config, load_config, parse_config
from .engine import SimMetrics, run, run_session

__all__ = ["ConfigError", "SimConfig", "SimMetrics", "dump_config", "load_config", "parse_config", "run", "run_session"]
