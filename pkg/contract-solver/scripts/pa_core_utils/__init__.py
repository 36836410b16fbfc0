"""
Config parsing and artifact writing for the pa CLI.
"""

from .config_parser import (
    ModelBlock,
    SolverBlock,
    SimulationBlock,
    OutputBlock,
    RunConfig,
    parse_run_config,
    load_run_config,
)
from .artifacts import (
    format_value,
    write_csv,
    write_json,
    read_json,
    write_path_csv,
    write_payoffs_csv,
)

__all__ = [
    # Config
    'ModelBlock',
    'SolverBlock',
    'SimulationBlock',
    'OutputBlock',
    'RunConfig',
    'parse_run_config',
    'load_run_config',
    # Artifacts
    'format_value',
    'write_csv',
    'write_json',
    'read_json',
    'write_path_csv',
    'write_payoffs_csv',
]
