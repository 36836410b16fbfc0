"""
pa simulate

Monte Carlo audits of an inline constant-sensitivity contract:

    agent_value     agent's estimate equals Y0 within three standard errors
    best_response   the revealed effort beats every configured deviation
    martingale      discounted agent value is flat under the maximizer and
                    drifts down under a = z + 0.5
    american_stop   (american_sannikov only) quitting at the first passage
                    below U(rho) beats earlier and later quits

With simulation.deviant the candidate effort is replaced by a = z + 1 and
the revealed maximizer joins the deviations, so best_response must fail.

With simulation.contract = "solved" (euro_quadratic only) the free-boundary
solution is rebuilt from the solver block and its feedback contract
Z = z_hat(Y) is simulated instead:

    reduction       principal estimate equals v(Y0) within the tolerance
"""

import logging
import math

from pa_common import AuditError, PAError, error_response, success_response
from pa_contract import Termination, constant_payment, constant_policy, make_contract
from pa_core_utils import RunConfig, write_json, write_path_csv, write_payoffs_csv
from pa_model import ModelPrimitives
from pa_montecarlo import (
    BAND,
    american_stop_audit,
    best_response_audit,
    constant_effort,
    martingale_audit,
    optimal_contract,
    reduction_report,
    revealed_effort,
    simulate_output,
)

from .common import add_run_arguments, artifact_paths, european_solution, load_config, model_from_config

logger = logging.getLogger(__name__)

DEVIANT_SHIFT = 1.0
MARTINGALE_SHIFT = 0.5
AUDITS = ("agent_value", "best_response", "martingale", "american_stop", "reduction")


def register(subparsers):
    """Register the simulate command."""
    sim_parser = subparsers.add_parser('simulate', help='Run Monte Carlo audits on a revealing contract')
    add_run_arguments(sim_parser)
    sim_parser.set_defaults(func=cmd_simulate)


def build_contract(model: ModelPrimitives, config: RunConfig):
    """Constant Z and payment rate; American runs stop at U(rho), others at the horizon or the bottom of U's range."""
    sim = config.simulation
    if config.model.builtin == "american_sannikov":
        termination = Termination(level=model.retirement_level)
    else:
        lo = model.utility_range[0]
        termination = Termination(horizon=sim.horizon, level=lo if math.isfinite(lo) else None)
    return make_contract(model, sim.y0, constant_policy(sim.z), termination,
                         payment_rate=constant_payment(sim.payment))


def _agent_value(model, contract, cfg, american: bool):
    batch = simulate_output(model, None, contract, cfg, american=american)
    estimate, std_error = batch.estimate(batch.agent_payoffs)
    report = {
        **batch.summary("agent"),
        "target": contract.y0,
        "principal": batch.summary("principal"),
        "passed": abs(estimate - contract.y0) <= BAND * std_error + 1e-9,
    }
    if not report["passed"]:
        raise AuditError(f"agent estimate {estimate:.6g} differs from Y0 = {contract.y0:g}",
                         audit="agent_value", report=report)
    return report, batch


def _martingale(model, contract, cfg, z: float) -> dict:
    report = {"maximizer": martingale_audit(model, contract, cfg)}
    if not report["maximizer"]["flat"]:
        raise AuditError("discounted agent value drifts under the revealed effort",
                         audit="martingale", report=report)
    shifted = z + MARTINGALE_SHIFT
    if model.effort.contains(shifted, model.effort.vol_actions[0]):
        report["shifted"] = martingale_audit(model, contract, cfg, constant_effort(shifted))
        if not report["shifted"]["decreasing"]:
            raise AuditError(f"discounted agent value is not decreasing under a = {shifted:g}",
                             audit="martingale", report=report)
    return report


def run_audits(config: RunConfig, report: dict):
    """Run every applicable audit, filling `report` as they pass."""
    model = model_from_config(config)
    sim = config.simulation
    cfg = sim.simulation_config()
    american = config.model.builtin == "american_sannikov"
    contract = build_contract(model, config)
    report["model"] = model.name
    report["contract"] = {"y0": sim.y0, "z": sim.z, "payment": sim.payment,
                          "termination": contract.termination.kind}

    report["agent_value"], batch = _agent_value(model, contract, cfg, american)

    deviations = {f"constant_{a:g}": constant_effort(a) for a in sim.deviations}
    candidate = None
    if sim.deviant:
        logger.warning("deviant flag set: auditing a = z + 1 against the revealed effort")
        candidate = constant_effort(sim.z + DEVIANT_SHIFT)
        deviations = {"revealed": revealed_effort(model, contract), **deviations}
    report["best_response"] = best_response_audit(model, contract, cfg, deviations, candidate=candidate)
    report["martingale"] = _martingale(model, contract, cfg, sim.z)
    if american:
        report["american_stop"] = american_stop_audit(model, contract, cfg, offsets=sim.stop_offsets)
    return batch


def run_reduction(config: RunConfig, report: dict):
    """Simulate the optimal feedback contract of the solved euro_quadratic run against v(Y0)."""
    model = model_from_config(config)
    sim = config.simulation
    cfg = sim.simulation_config()
    _, construction, control = european_solution(config)
    solution = construction.solution
    contract = optimal_contract(model, solution, control, sim.y0, horizon=sim.horizon)
    report["model"] = model.name
    report["contract"] = {"y0": sim.y0, "kind": "solved", "termination": contract.termination.kind,
                          "stop_boundary_y": solution.y_boundary,
                          "upper_exit_y": contract.termination.upper}

    batch = simulate_output(model, None, contract, cfg, continuation=solution.v)
    reduction = reduction_report(batch, solution, sim.y0)
    if not reduction["passed"]:
        raise AuditError(f"principal estimate {reduction['estimate']:.6g} differs from "
                         f"v(Y0) = {reduction['target']:.6g}", audit="reduction", report=reduction)
    report["reduction"] = reduction
    return batch


def cmd_simulate(args) -> dict:
    """Handle pa simulate command."""
    try:
        config = load_config(args)
    except PAError as e:
        return error_response(e, "simulate")

    paths = artifact_paths(config)
    report = {"seed": config.simulation.seed, "n_paths": config.simulation.n_paths}
    artifacts = []
    try:
        runner = run_reduction if config.simulation.contract == "solved" else run_audits
        batch = runner(config, report)
        report["passed"] = True
    except AuditError as e:
        report[e.audit] = e.report
        report["passed"] = False
        report["failed_audit"] = e.audit
        if config.wants("json"):
            write_json(paths.report_json, report)
        return error_response(e, "simulate")
    except PAError as e:
        return error_response(e, "simulate")

    if config.wants("csv"):
        write_payoffs_csv(paths.payoffs_csv, batch)
        artifacts.append(str(paths.payoffs_csv))
        for j, sample in enumerate(batch.paths):
            write_path_csv(paths.path_csv(j), sample)
            artifacts.append(str(paths.path_csv(j)))
    if config.wants("json"):
        write_json(paths.report_json, report)
        artifacts.append(str(paths.report_json))
    estimates = {}
    if "agent_value" in report:
        estimates = {"agent_estimate": report["agent_value"]["estimate"],
                     "agent_std_error": report["agent_value"]["std_error"]}
    if "reduction" in report:
        estimates = {"principal_estimate": report["reduction"]["estimate"],
                     "principal_std_error": report["reduction"]["std_error"]}
    return success_response(
        command="simulate",
        **estimates,
        audits=sorted(k for k in AUDITS if k in report),
        artifacts=artifacts,
    )
