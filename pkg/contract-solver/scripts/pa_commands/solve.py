"""
pa solve

Runs the solver that matches the configured builtin model and writes the
value-function table (CSV) and a summary (JSON).
"""

import logging

import numpy as np

from pa_common import PAError, error_response, success_response
from pa_core_utils import RunConfig, write_csv, write_json
from pa_first_best import solve_lambda_hat
from pa_obstacle import boundary_sensitivity, sannikov_problem, solve_obstacle_grid

from .common import (
    add_run_arguments,
    artifact_paths,
    european_solution,
    first_best_problem,
    load_config,
    model_from_config,
)

logger = logging.getLogger(__name__)

VALUE_HEADER = ("y", "v", "v_prime", "z_hat", "stop_flag")


def register(subparsers):
    """Register the solve command."""
    solve_parser = subparsers.add_parser('solve', help='Solve the principal problem for a builtin model')
    add_run_arguments(solve_parser)
    solve_parser.set_defaults(func=cmd_solve)


def _solve_european(config: RunConfig):
    s = config.solver
    problem, construction, control = european_solution(config)
    sol = construction.solution

    grid = problem.s_grid
    y = np.log(grid)
    v = sol.u(grid) / grid
    # d/dy e^-y u(e^y) = u'(s) - u(s)/s
    v_prime = sol.u_prime(grid) - v
    rows = zip(y, v, v_prime, control.z_hat(y), sol.in_stop_region(y))
    summary = {
        "model": "euro_quadratic",
        "beta": s.beta,
        "s_star": problem.s_star,
        "n_min": problem.n_min,
        "n_max": problem.n_max,
        "s_n": sol.s_n,
        "c_n": sol.c_n,
        "s_n_prime": sol.s_n_prime,
        "stop_boundary_y": sol.y_boundary,
        "continuation_upper_y": sol.y_upper,
        "feedback_residual": control.feedback_residual,
        "construction": construction.summary(),
    }
    return summary, VALUE_HEADER, rows


def _solve_grid(config: RunConfig):
    s = config.solver
    model = model_from_config(config)
    american = config.model.builtin == "american_sannikov"
    problem = sannikov_problem(
        model, y_max=s.y_max, n_points=s.n_points, american=american,
        method=s.method, omega=s.omega, tolerance=s.tolerance,
        max_iterations=s.max_iterations, max_policy_iterations=s.max_policy_iterations,
    )
    sol = solve_obstacle_grid(problem)
    summary = {"model": model.name, "american": american, **sol.summary()}
    if american:
        summary["boundary_sensitivity"] = boundary_sensitivity(problem, s.sensitivity_factor)
    rows = zip(sol.y, sol.v, sol.v_prime, sol.z_hat, sol.stop)
    return summary, VALUE_HEADER, rows


def _solve_first_best(config: RunConfig):
    problem = first_best_problem(config)
    sol = solve_lambda_hat(problem)
    t = problem.time_grid(problem.horizon)
    rows = zip(t, sol.optimal_effort(t), sol.pi_rule(t))
    summary = {"model": "first_best_canonical", **sol.summary()}
    return summary, ("t", "effort", "payment"), rows


SOLVERS = {
    "euro_quadratic": _solve_european,
    "sannikov": _solve_grid,
    "american_sannikov": _solve_grid,
    "first_best_canonical": _solve_first_best,
}


def cmd_solve(args) -> dict:
    """Handle pa solve command."""
    try:
        config = load_config(args)
        summary, header, rows = SOLVERS[config.model.builtin](config)
        paths = artifact_paths(config)
        artifacts = []
        if config.wants("csv"):
            summary["rows"] = write_csv(paths.value_csv, header, rows)
            artifacts.append(str(paths.value_csv))
        if config.wants("json"):
            write_json(paths.summary_json, summary)
            artifacts.append(str(paths.summary_json))
        return success_response(command="solve", summary=summary, artifacts=artifacts)
    except PAError as e:
        return error_response(e, "solve")
