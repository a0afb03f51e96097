"""Config-driven experiment runner, CSV/SVG output and the command line."""

from .config import ConfigError, ExperimentConfig, describe, from_mapping, load_config
from .output import emit_csv, emit_plot, read_csv
from .runner import CellFailure, ExperimentResult, ResultRow, run_experiment
