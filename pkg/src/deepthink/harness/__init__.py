from .cli import build_parser, main
from .config import ConfigError, default_output_root, dump_config, load_config, parse_assignments, split_config
from .plan import (
    DataRef,
    ExperimentPlan,
    collect_report,
    run_alpha_grid,
    run_hard_to_easy,
    run_name,
    sweep_run,
    train_run,
)

__all__ = [
    "ConfigError",
    "DataRef",
    "ExperimentPlan",
    "build_parser",
    "collect_report",
    "default_output_root",
    "dump_config",
    "load_config",
    "main",
    "parse_assignments",
    "run_alpha_grid",
    "run_hard_to_easy",
    "run_name",
    "split_config",
    "sweep_run",
    "train_run",
]
