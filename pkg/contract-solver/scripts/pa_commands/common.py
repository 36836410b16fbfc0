"""
Shared plumbing for the pa subcommands: run-config flags, artifact paths and
model construction from a parsed config.
"""

import numpy as np

from pa_builtins import build_model
from pa_core_utils import RunConfig, load_run_config
from pa_first_best import FirstBestProblem
from pa_hjb import EuropeanExampleProblem, limit_solution, value_and_control
from pa_model import EffortDomain, ModelPrimitives


def add_run_arguments(parser) -> None:
    parser.add_argument('--config', required=True, help='Run config (JSON)')
    parser.add_argument('--seed', type=int, help='Override simulation.seed (u64)')
    parser.add_argument('--out', help='Override output.directory')
    parser.add_argument('--format', choices=['csv', 'json', 'both'], help='Artifact formats to write')


def load_config(args) -> RunConfig:
    return load_run_config(args.config).with_overrides(
        seed=getattr(args, 'seed', None),
        out=getattr(args, 'out', None),
        fmt=getattr(args, 'format', None),
    )


def artifact_paths(config: RunConfig):
    from project_paths import run_id_from_config, run_paths
    return run_paths(run_id_from_config(config.source), base=config.output.directory)


def model_from_config(config: RunConfig) -> ModelPrimitives:
    overrides = dict(config.model.overrides)
    if config.model.builtin == "euro_quadratic":
        overrides["beta"] = config.solver.beta
    return build_model(config.model.builtin, **overrides)


def first_best_problem(config: RunConfig) -> FirstBestProblem:
    """Canonical instance: CARA principal, quadratic cost, risk-neutral agent."""
    overrides = config.model.overrides
    a_max = float(overrides.get("a_max", np.inf))
    return FirstBestProblem(
        horizon=config.solver.horizon,
        agent_rate=float(overrides.get("agent_rate", 0.0)),
        participation=float(overrides.get("participation", 0.5)),
        effort=EffortDomain(drift_actions=(-a_max, a_max)),
        x0=config.solver.x0,
        panels=config.solver.panels,
        lambda_max=config.solver.lambda_max,
    )


def european_solution(config: RunConfig):
    """Build the free-boundary solution of the euro_quadratic run and its feedback control."""
    s = config.solver
    problem = EuropeanExampleProblem(s.beta, n_max=s.n_max, s_max=s.s_max, s_points=s.s_points)
    construction = limit_solution(problem)
    return problem, construction, value_and_control(construction.solution)
