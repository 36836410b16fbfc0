"""
pa firstbest

Solves the first-best Lagrangian for the canonical instance, then checks by
simulation that the revealing contract built from it attains the same value
(agent at R, principal at v_fb) and reports one weak-duality sample.
"""

import logging

from pa_common import PAError, error_response, success_response
from pa_core_utils import write_csv, write_json
from pa_first_best import second_best_equality_check, solve_lambda_hat, weak_duality_chain

from .common import add_run_arguments, artifact_paths, first_best_problem, load_config

logger = logging.getLogger(__name__)


def register(subparsers):
    """Register the firstbest command."""
    fb_parser = subparsers.add_parser('firstbest', help='First-best multiplier and second-best equality check')
    add_run_arguments(fb_parser)
    fb_parser.set_defaults(func=cmd_firstbest)


def cmd_firstbest(args) -> dict:
    """Handle pa firstbest command."""
    try:
        config = load_config(args)
        problem = first_best_problem(config)
        sol = solve_lambda_hat(problem)
        sim = config.simulation
        cfg = sim.simulation_config(x0=config.solver.x0)
        payload = {
            "model": config.model.builtin,
            "solution": sol.summary(),
            "equality_check": second_best_equality_check(problem, sol, cfg),
            "weak_duality": weak_duality_chain(problem, sol, cfg, effort_level=sim.effort,
                                               payment_level=sim.payment, y0=sim.y0),
        }
    except PAError as e:
        return error_response(e, "firstbest")

    paths = artifact_paths(config)
    artifacts = []
    if config.wants("csv"):
        t = problem.time_grid(problem.horizon)
        write_csv(paths.value_csv, ("t", "effort", "payment"), zip(t, sol.optimal_effort(t), sol.pi_rule(t)))
        artifacts.append(str(paths.value_csv))
    if config.wants("json"):
        write_json(paths.summary_json, payload)
        artifacts.append(str(paths.summary_json))
    return success_response(command="firstbest", lambda_hat=sol.lambda_hat, v_fb=sol.v_fb, artifacts=artifacts)
