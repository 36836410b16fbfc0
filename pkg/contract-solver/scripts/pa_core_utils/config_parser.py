"""
Run config parser.

A run config is a JSON object with four blocks:

    {
      "model":      {"builtin": "sannikov", "overrides": {"rate": 0.1}},
      "solver":     {"y_max": 10.0, "n_points": 1001, ...},
      "simulation": {"n_paths": 2000, "seed": 42, ...},
      "output":     {"directory": "runs/sannikov", "formats": ["csv", "json"]}
    }

Every block is optional except "model". Unknown keys are rejected with a
ConfigError naming the key, and numeric preconditions of the solver modules
are checked here so a bad config fails before any work starts.
"""

import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

from pa_builtins import BUILTINS, OVERRIDES
from pa_common import ConfigError, PAError
from pa_hjb import EuropeanExampleProblem
from pa_montecarlo import SimulationConfig
from pa_obstacle import METHODS, MIN_GRID_POINTS

logger = logging.getLogger(__name__)

FORMATS = ("csv", "json")
CONTRACTS = ("constant", "solved")


@dataclass(frozen=True)
class ModelBlock:
    builtin: str = ""
    overrides: Dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class SolverBlock:
    beta: float = 0.25
    n_max: int = 32
    s_max: float = 20.0
    s_points: int = 400
    y_max: float = 10.0
    n_points: int = 1001
    method: str = "policy"
    omega: float = 1.5
    tolerance: float = 1e-9
    max_iterations: int = 100_000
    max_policy_iterations: int = 200
    sensitivity_factor: float = 1.5
    horizon: float = 1.0
    panels: int = 200
    lambda_max: float = 1e3
    x0: float = 0.0


@dataclass(frozen=True)
class SimulationBlock:
    n_paths: int = 2000
    dt: float = 1e-3
    t_cap: float = 10.0
    seed: int = 42
    antithetic: bool = False
    truncation_bound: float = 1e-3
    keep_paths: int = 0
    checkpoint_every: int = 10
    horizon: float = 1.0
    y0: float = 1.0
    z: float = 1.0
    payment: float = 0.0
    effort: float = 1.0
    deviations: Tuple[float, ...] = (0.0, 2.0)
    stop_offsets: Tuple[float, ...] = (0.1, 0.5, 1.0)
    deviant: bool = False
    contract: str = "constant"

    def simulation_config(self, x0: float = 0.0) -> SimulationConfig:
        return SimulationConfig(
            n_paths=self.n_paths,
            dt=self.dt,
            t_cap=self.t_cap,
            seed=self.seed,
            antithetic=self.antithetic,
            truncation_bound=self.truncation_bound,
            keep_paths=self.keep_paths,
            checkpoint_every=self.checkpoint_every,
            x0=x0,
        )


@dataclass(frozen=True)
class OutputBlock:
    directory: Optional[str] = None
    formats: Tuple[str, ...] = FORMATS


@dataclass(frozen=True)
class RunConfig:
    model: ModelBlock
    solver: SolverBlock = field(default_factory=SolverBlock)
    simulation: SimulationBlock = field(default_factory=SimulationBlock)
    output: OutputBlock = field(default_factory=OutputBlock)
    source: Optional[Path] = None

    def get(self, key: str, default: Any = None) -> Any:
        """Get configuration value by dotted key, e.g. 'simulation.seed'."""
        value: Any = self
        for k in key.split('.'):
            if isinstance(value, dict) and k in value:
                value = value[k]
            elif hasattr(value, '__dataclass_fields__') and k in value.__dataclass_fields__:
                value = getattr(value, k)
            else:
                return default
        return value

    def wants(self, fmt: str) -> bool:
        return fmt in self.output.formats

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       fmt: Optional[str] = None) -> "RunConfig":
        """Apply the CLI's --seed, --out and --format flags."""
        cfg = self
        if seed is not None:
            cfg = replace(cfg, simulation=replace(cfg.simulation, seed=seed))
            _validate_simulation(cfg.simulation)
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=out))
        if fmt is not None:
            formats = FORMATS if fmt == "both" else (fmt,)
            cfg = replace(cfg, output=replace(cfg.output, formats=formats))
        return cfg


# ============================================================================
# Parsing
# ============================================================================

def _build_block(cls, data: Any, block: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"block {block!r} must be a JSON object")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(
                f"unknown key {key!r} in block {block!r}",
                suggestion=f"Valid keys: {', '.join(sorted(known))}",
                key=f"{block}.{key}",
            )
        kwargs[key] = _coerce(value, known[key].default, f"{block}.{key}")
    return cls(**kwargs)


def _number(value: Any, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key=key)
    if not math.isfinite(value):
        raise ConfigError(f"{key} must be finite, got {value!r}", key=key)
    return float(value)


def _coerce(value: Any, default: Any, key: str) -> Any:
    """Check the JSON value against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", key=key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} must be an integer, got {value!r}", key=key)
        return value
    if isinstance(default, float):
        return _number(value, key)
    if isinstance(default, tuple):
        if not isinstance(value, list):
            raise ConfigError(f"{key} must be a list, got {value!r}", key=key)
        if default and all(isinstance(d, float) for d in default):
            return tuple(_number(v, f"{key}[{i}]") for i, v in enumerate(value))
        return tuple(value)
    if isinstance(default, str) or default is None:
        if value is not None and not isinstance(value, str):
            raise ConfigError(f"{key} must be a string, got {value!r}", key=key)
        return value
    return value


# Override name -> (kind, lower bound, strict bound)
_POSITIVE = ("number", 0.0, True)
_NONNEGATIVE = ("number", 0.0, False)
_ANY_NUMBER = ("number", None, False)
_OPTIONAL_NUMBER = ("optional", None, False)
_FLAG = ("bool", None, False)

OVERRIDE_DOMAINS = {
    "rate": _POSITIVE,
    "agent_rate": _NONNEGATIVE,
    "a_max": _POSITIVE,
    "participation": _ANY_NUMBER,
    "retirement": _OPTIONAL_NUMBER,
    "closed_form": _FLAG,
}


def _check_override(name: str, value: Any) -> None:
    key = f"model.overrides.{name}"
    kind, lower, strict = OVERRIDE_DOMAINS[name]
    if kind == "bool":
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}", key=key)
        return
    if kind == "optional" and value is None:
        return
    number = _number(value, key)
    if lower is not None and (number <= lower if strict else number < lower):
        relation = ">" if strict else ">="
        raise ConfigError(f"{key} must be {relation} {lower:g}, got {number:g}", key=key)


def _validate_model(block: ModelBlock) -> None:
    if block.builtin not in BUILTINS:
        raise ConfigError(
            f"model.builtin must be one of {sorted(BUILTINS)}, got {block.builtin!r}",
            key="model.builtin",
        )
    if not isinstance(block.overrides, dict):
        raise ConfigError("model.overrides must be a JSON object", key="model.overrides")
    if block.builtin == "euro_quadratic" and "beta" in block.overrides:
        raise ConfigError("set beta in the solver block, not in model.overrides", key="model.overrides.beta")
    unknown = sorted(set(block.overrides) - OVERRIDES[block.builtin])
    if unknown:
        raise ConfigError(
            f"unknown key {unknown[0]!r} in model.overrides for {block.builtin}",
            suggestion=f"Valid keys: {', '.join(sorted(OVERRIDES[block.builtin]))}",
            key=f"model.overrides.{unknown[0]}",
        )
    for name, value in block.overrides.items():
        _check_override(name, value)


def _validate_solver(block: SolverBlock, builtin: str) -> None:
    try:
        if builtin == "euro_quadratic":
            EuropeanExampleProblem(block.beta, n_max=block.n_max, s_max=block.s_max, s_points=block.s_points)
    except PAError as e:
        raise ConfigError(f"solver: {e}", suggestion=e.suggestion) from e
    if block.n_points < MIN_GRID_POINTS:
        raise ConfigError(f"solver.n_points must be >= {MIN_GRID_POINTS}, got {block.n_points}",
                          key="solver.n_points")
    if block.method not in METHODS:
        raise ConfigError(f"solver.method must be one of {METHODS}, got {block.method!r}", key="solver.method")
    if not block.y_max > 0 or not block.horizon > 0:
        raise ConfigError("solver.y_max and solver.horizon must be positive")
    if not 0 < block.omega < 2:
        raise ConfigError(f"solver.omega must lie in (0, 2), got {block.omega}", key="solver.omega")
    if not block.sensitivity_factor > 1:
        raise ConfigError("solver.sensitivity_factor must exceed 1", key="solver.sensitivity_factor")


def _validate_simulation(block: SimulationBlock) -> None:
    try:
        block.simulation_config()
    except PAError as e:
        raise ConfigError(f"simulation: {e}") from e
    if not block.horizon > 0:
        raise ConfigError("simulation.horizon must be positive", key="simulation.horizon")
    if any(c <= 0 for c in block.stop_offsets):
        raise ConfigError("simulation.stop_offsets must be positive", key="simulation.stop_offsets")
    if block.contract not in CONTRACTS:
        raise ConfigError(f"simulation.contract must be one of {CONTRACTS}, got {block.contract!r}",
                          key="simulation.contract")


def _validate_output(block: OutputBlock) -> None:
    bad = [f for f in block.formats if f not in FORMATS]
    if bad or not block.formats:
        raise ConfigError(f"output.formats must be a non-empty subset of {FORMATS}, got {list(block.formats)}",
                          key="output.formats")


def parse_run_config(data: Dict[str, Any], source: Optional[Path] = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("run config must be a JSON object")
    blocks = {"model": ModelBlock, "solver": SolverBlock, "simulation": SimulationBlock, "output": OutputBlock}
    for key in data:
        if key not in blocks:
            raise ConfigError(f"unknown key {key!r} at top level",
                              suggestion=f"Valid blocks: {', '.join(blocks)}", key=key)
    if "model" not in data:
        raise ConfigError("run config needs a 'model' block", key="model")

    parsed = {name: _build_block(cls, data.get(name), name) for name, cls in blocks.items()}
    _validate_model(parsed["model"])
    _validate_solver(parsed["solver"], parsed["model"].builtin)
    _validate_simulation(parsed["simulation"])
    if parsed["simulation"].contract == "solved" and parsed["model"].builtin != "euro_quadratic":
        raise ConfigError("simulation.contract \"solved\" needs the euro_quadratic model",
                          suggestion="Use the constant contract for grid-solved models.",
                          key="simulation.contract")
    _validate_output(parsed["output"])
    logger.debug(f"parsed run config for {parsed['model'].builtin}")
    return RunConfig(source=source, **parsed)


def load_run_config(path: str) -> RunConfig:
    """Read and parse a UTF-8 JSON run config."""
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return parse_run_config(data, source=p)
