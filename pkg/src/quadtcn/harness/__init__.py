"""Experiment configuration, commands, reports and the command line."""

from .config import ExperimentConfig, load_config, parse_config
from .reports import HorizonReport

__all__ = ["ExperimentConfig", "load_config", "parse_config", "HorizonReport"]
