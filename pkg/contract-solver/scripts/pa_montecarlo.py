"""
Monte Carlo verification of the contract reduction.

Simulates the controlled output X[i+1] = X[i] + sigma (lambda dt + sqrt(dt) eps)
under a given effort policy, co-propagates the promised value Y of a revealing
contract, and evaluates both parties' discounted payoffs. The audits compare
the revealed effort against deviations, check the martingale property of the
discounted agent value, and test the agent's quitting rule.

Normals for step i come from a Philox stream keyed by the seed with the step
in the counter, so results do not depend on how paths are partitioned.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from pa_common import AuditError, DomainError, HorizonError, NumericError, RangeError
from pa_contract import DiscretizedPath, RevealingContract, Termination, make_contract
from pa_model import ModelPrimitives, hamiltonian_array, maximizer_array

logger = logging.getLogger(__name__)

MAX_DT = 1e-2
ACCEPTANCE_PATHS = 1000
BAND = 3.0


# ============================================================================
# Configuration and containers
# ============================================================================

@dataclass(frozen=True)
class SimulationConfig:
    n_paths: int = 2000
    dt: float = 1e-3
    t_cap: float = 10.0
    seed: int = 42
    antithetic: bool = False
    truncation_bound: float = 1e-3
    keep_paths: int = 0
    checkpoint_every: int = 10
    x0: float = 0.0

    def __post_init__(self):
        if self.n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.antithetic and self.n_paths % 2:
            raise DomainError("antithetic sampling needs an even n_paths")
        if not 0 < self.dt <= MAX_DT:
            raise DomainError(f"dt must lie in (0, {MAX_DT}], got {self.dt}")
        if not self.t_cap > 0:
            raise DomainError(f"t_cap must be positive, got {self.t_cap}")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= self.truncation_bound <= 1:
            raise DomainError("truncation_bound must lie in [0, 1]")
        if not 0 <= self.keep_paths <= self.n_paths:
            raise DomainError("keep_paths must lie in [0, n_paths]")
        if self.checkpoint_every < 1:
            raise DomainError("checkpoint_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_cap / self.dt - 1e-9))


@dataclass(frozen=True)
class SimulationBatch:
    agent_payoffs: np.ndarray
    principal_payoffs: np.ndarray
    stop_times: np.ndarray
    terminal_y: np.ndarray
    terminal_x: np.ndarray
    truncated_count: int
    seed: int
    antithetic: bool
    checkpoint_times: np.ndarray
    checkpoint_values: np.ndarray
    paths: Tuple[DiscretizedPath, ...] = field(default_factory=tuple)

    @property
    def n_paths(self) -> int:
        return len(self.agent_payoffs)

    def estimate(self, values: np.ndarray) -> Tuple[float, float]:
        """Sample mean and standard error; antithetic pairs are averaged first."""
        values = np.asarray(values, dtype=float)
        if self.antithetic:
            half = len(values) // 2
            values = 0.5 * (values[:half] + values[half:])
        if len(values) < 2:
            return float(values.mean()), 0.0
        return float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values)))

    def summary(self, kind: str = "agent") -> dict:
        values = self.agent_payoffs if kind == "agent" else self.principal_payoffs
        estimate, std_error = self.estimate(values)
        return {
            "estimate": estimate,
            "std_error": std_error,
            "n_paths": self.n_paths,
            "truncated_count": self.truncated_count,
            "seed": self.seed,
        }


def step_normals(seed: int, step: int, n_paths: int, antithetic: bool = False) -> np.ndarray:
    """Standard normals for one time step, keyed by (seed, step)."""
    gen = np.random.Generator(np.random.Philox(key=seed, counter=step << 128))
    if antithetic:
        half = gen.standard_normal(n_paths // 2)
        return np.concatenate((half, -half))
    return gen.standard_normal(n_paths)


def revealed_effort(model: ModelPrimitives, contract: RevealingContract) -> Callable:
    """The agent's best response to a revealing contract: the Hamiltonian maximizer."""
    def policy(t, x, y):
        z = contract.z_policy(t, x, y)
        gamma = contract.gamma_policy(t, x, y)
        return maximizer_array(model, t, x, y, z, gamma)
    return policy


def constant_effort(a: float, b: float = 0.0) -> Callable:
    def policy(t, x, y):
        shape = np.broadcast(t, x, y).shape
        return np.full(shape, float(a)), np.full(shape, float(b))
    return policy


# ============================================================================
# Simulation
# ============================================================================

def simulate_output(model: ModelPrimitives, effort_policy: Optional[Callable], contract: RevealingContract,
                    cfg: SimulationConfig, american: bool = False,
                    continuation: Optional[Callable] = None) -> SimulationBatch:
    """Euler-Maruyama simulation of output, promised value and payoffs.

    With `american`, every termination is the agent quitting and pays the
    retirement level U(rho) instead of U(xi). With `continuation`, the
    principal is credited K^P v(Y) at termination in place of the
    liquidation payoff (risk-neutral reduced criterion). After a first
    passage with a stopping delay the path is absorbed: no payments, no
    effort, Y frozen at the level.
    """
    if effort_policy is None:
        effort_policy = revealed_effort(model, contract)
    term = contract.termination
    n, dt = cfg.n_paths, cfg.dt
    sqdt = math.sqrt(dt)
    retirement = model.retirement_level
    if american and retirement is None:
        raise DomainError(f"model {model.name!r} has no retirement level for an American run")
    k0 = model.k0

    x = np.full(n, cfg.x0)
    y = np.full(n, float(contract.y0))
    disc = np.ones(n)
    disc_p = np.ones(n)
    flow = np.zeros(n)
    agent_run = np.zeros(n)
    principal_run = np.zeros(n)
    stop_time = np.full(n, np.nan)
    y_stop = np.full(n, np.nan)

    stop, first_hit, y_term = term.initial(y)
    alive = ~stop
    stop_time[stop] = 0.0
    y_stop[stop] = y_term[stop]

    keep = cfg.keep_paths
    kept = {key: np.full((cfg.n_steps + 1, keep), np.nan) for key in ("x", "y", "disc")}
    kept_steps = {key: np.full((cfg.n_steps, keep), np.nan)
                  for key in ("z", "rate", "cost", "payment_utility", "drift_part")}
    if keep:
        kept["x"][0], kept["y"][0], kept["disc"][0] = x[:keep], y[:keep], disc[:keep]

    chk_times = [0.0]
    chk_values = [disc * y + agent_run]
    last_step = 0

    for i in range(cfg.n_steps):
        if not alive.any():
            break
        last_step = i + 1
        t = i * dt
        eps = step_normals(cfg.seed, i, n, cfg.antithetic)
        absorbed = alive & np.isfinite(first_hit)
        active = alive & ~absorbed
        idx = np.nonzero(active)[0]

        if len(idx):
            xa, ya = x[idx], y[idx]
            a, b = effort_policy(t, xa, ya)
            a = np.broadcast_to(np.asarray(a, dtype=float), xa.shape)
            b = np.broadcast_to(np.asarray(b, dtype=float), xa.shape)
            z = contract.z_policy(t, xa, ya)
            gamma = contract.gamma_policy(t, xa, ya)
            pi = contract.payment_rate(t, xa)
            h_max = hamiltonian_array(model, t, xa, ya, z, gamma)
            drift_part = model.vol(t, xa, b) * model.drift(t, xa, a)
            dx = model.vol(t, xa, b) * (model.drift(t, xa, a) * dt + sqdt * eps[idx])
            cost = model.cost(t, xa, a, b)
            rate = model.discount_rate(t, xa, a, b)
            u_pi = model.agent_utility(pi)

            agent_run[idx] += disc[idx] * (u_pi - cost) * dt
            principal_run[idx] += disc_p[idx] * model.principal_utility(-pi) * dt
            flow[idx] += disc_p[idx] * dx
            y_new = ya + z * dx + 0.5 * gamma * dx * dx - (h_max + u_pi) * dt
            if not np.all(np.isfinite(y_new)):
                raise NumericError(f"promised value not finite at step {i}", step=i)

            sel = idx < keep
            if np.any(sel):
                cols = idx[sel]
                for key, arr in (("z", z), ("rate", rate), ("cost", cost),
                                 ("payment_utility", u_pi), ("drift_part", drift_part)):
                    kept_steps[key][i, cols] = np.broadcast_to(arr, xa.shape)[sel]

            x[idx] += dx
            y[idx] = y_new
            disc[idx] *= np.exp(-rate * dt)
            disc_p[idx] *= np.exp(-model.principal_discount_rate(t, xa) * dt)

        ab = np.nonzero(absorbed)[0]
        if len(ab):
            disc[ab] *= math.exp(-k0 * dt)
            disc_p[ab] *= np.exp(-model.principal_discount_rate(t, x[ab]) * dt)

        live = np.nonzero(alive)[0]
        t_next = (i + 1) * dt
        stop, hit, y_term = term.advance(np.full(len(live), t_next), y[live], first_hit[live])
        first_hit[live] = hit
        done = live[stop]
        stop_time[done] = t_next
        y_stop[done] = y_term[stop]
        alive[done] = False

        if keep:
            kept["x"][i + 1], kept["y"][i + 1], kept["disc"][i + 1] = x[:keep], y[:keep], disc[:keep]
        if (i + 1) % cfg.checkpoint_every == 0:
            chk_times.append(t_next)
            chk_values.append(disc * np.where(np.isnan(y_stop), y, y_stop) + agent_run)

    truncated = np.nonzero(alive)[0]
    stop_time[truncated] = last_step * dt
    y_stop[truncated] = y[truncated]
    if len(truncated) > cfg.truncation_bound * n:
        raise HorizonError(
            f"{len(truncated)} of {n} paths still running at t_cap = {cfg.t_cap}",
            truncated=int(len(truncated)),
        )

    if american:
        agent = disc * retirement + agent_run
        xi = np.zeros(n)
    else:
        lo, hi = model.utility_range
        if np.any((y_stop < lo) | (y_stop > hi)):
            raise RangeError(f"terminal promised values leave the range [{lo}, {hi}] of U")
        xi = model.agent_utility_inverse(y_stop)
        agent = disc * model.agent_utility(xi) + agent_run

    if continuation is not None:
        principal = flow + disc_p * continuation(y_stop) + principal_run
    else:
        liquidation = flow / disc_p if model.discounted_output else model.liquidation(x)
        principal = disc_p * model.principal_utility(liquidation - xi) + principal_run

    paths = tuple(_kept_path(kept, kept_steps, j, stop_time[j], dt) for j in range(keep))
    return SimulationBatch(
        agent_payoffs=agent,
        principal_payoffs=principal,
        stop_times=stop_time,
        terminal_y=y_stop,
        terminal_x=x.copy(),
        truncated_count=int(len(truncated)),
        seed=cfg.seed,
        antithetic=cfg.antithetic,
        checkpoint_times=np.asarray(chk_times),
        checkpoint_values=np.vstack(chk_values),
        paths=paths,
    )


def _kept_path(kept: dict, steps: dict, j: int, stop_time: float, dt: float) -> DiscretizedPath:
    last = int(round(stop_time / dt))
    times = np.arange(last + 1) * dt
    return DiscretizedPath(
        times=times,
        x=kept["x"][: last + 1, j],
        y=kept["y"][: last + 1, j],
        discount=kept["disc"][: last + 1, j],
        stopped_at=last,
        terminated=True,
        y_terminal=float(kept["y"][last, j]),
        **{key: arr[:last, j] for key, arr in steps.items()},
    )


# ============================================================================
# Value estimates
# ============================================================================

def agent_value_mc(model: ModelPrimitives, contract: RevealingContract, effort_policy: Optional[Callable],
                   cfg: SimulationConfig) -> Tuple[float, float]:
    batch = simulate_output(model, effort_policy, contract, cfg)
    return batch.estimate(batch.agent_payoffs)


def principal_value_mc(model: ModelPrimitives, contract: RevealingContract, cfg: SimulationConfig,
                       continuation: Optional[Callable] = None) -> Tuple[float, float]:
    """Principal's value when the agent plays the revealed best response."""
    batch = simulate_output(model, None, contract, cfg, continuation=continuation)
    return batch.estimate(batch.principal_payoffs)


# ============================================================================
# Audits
# ============================================================================

def _compare(name: str, base: SimulationBatch, other: SimulationBatch) -> dict:
    est_b, se_b = base.estimate(base.agent_payoffs)
    est_o, se_o = other.estimate(other.agent_payoffs)
    _, paired = base.estimate(base.agent_payoffs - other.agent_payoffs)
    combined = math.hypot(se_b, se_o)
    gap = est_b - est_o
    return {
        "name": name,
        "estimate": est_o,
        "std_error": se_o,
        "gap": gap,
        "combined_error": combined,
        "paired_error": paired,
        "passed": gap >= -BAND * combined,
        "loses": gap > BAND * combined,
    }


def best_response_audit(model: ModelPrimitives, contract: RevealingContract, cfg: SimulationConfig,
                        deviations: Dict[str, Callable], candidate: Optional[Callable] = None) -> dict:
    """Check that the candidate effort (default: revealed maximizer) beats every deviation.

    Raises AuditError naming the first deviation that wins by more than
    three combined standard errors.
    """
    if cfg.n_paths < ACCEPTANCE_PATHS:
        logger.warning(f"best_response_audit with {cfg.n_paths} paths is below acceptance size")
    base = simulate_output(model, candidate, contract, cfg)
    est, se = base.estimate(base.agent_payoffs)
    rows = [_compare(name, base, simulate_output(model, policy, contract, cfg))
            for name, policy in deviations.items()]
    report = {"candidate": {"estimate": est, "std_error": se}, "deviations": rows,
              "passed": all(r["passed"] for r in rows)}
    if not report["passed"]:
        worst = min(rows, key=lambda r: r["gap"] + BAND * r["combined_error"])
        raise AuditError(
            f"deviation {worst['name']!r} beats the candidate effort by {-worst['gap']:.4g} "
            f"(combined std error {worst['combined_error']:.3g})",
            audit="best_response",
            report=report,
        )
    return report


def martingale_audit(model: ModelPrimitives, contract: RevealingContract, cfg: SimulationConfig,
                     effort_policy: Optional[Callable] = None) -> dict:
    """Per-path least-squares slope of K Y + sum K (U(pi) - c) dt against time."""
    batch = simulate_output(model, effort_policy, contract, cfg)
    t = batch.checkpoint_times
    if len(t) < 3:
        raise DomainError("martingale audit needs at least three checkpoints")
    tc = t - t.mean()
    values = batch.checkpoint_values
    slopes = tc @ (values - values.mean(axis=0)) / np.sum(tc ** 2)
    slope, std_error = batch.estimate(slopes)
    z = slope / std_error if std_error > 0 else 0.0
    return {
        "slope": slope,
        "std_error": std_error,
        "z_score": z,
        "flat": abs(slope) <= BAND * std_error,
        "decreasing": slope < -BAND * std_error,
    }


def american_stop_audit(model: ModelPrimitives, contract: RevealingContract, cfg: SimulationConfig,
                        offsets: Sequence[float] = (0.1, 0.5, 1.0)) -> dict:
    """Compare quitting at the first passage below U(rho) with earlier and later quits."""
    term = contract.termination
    level = model.retirement_level
    if level is None or term.level is None or term.horizon is not None or not math.isclose(term.level, level):
        raise DomainError("American stop audit needs a pure hitting rule at the retirement level U(rho)")

    base = simulate_output(model, None, contract, cfg, american=True)
    est, se = base.estimate(base.agent_payoffs)
    rows = []
    for c in offsets:
        early = replace(contract, termination=Termination(horizon=c, level=level))
        late = replace(contract, termination=Termination(level=level, delay=c))
        rows.append(_compare(f"early_{c:g}", base, simulate_output(model, None, early, cfg, american=True)))
        rows.append(_compare(f"late_{c:g}", base, simulate_output(model, None, late, cfg, american=True)))

    h0, _ = base.estimate(base.stop_times)
    report = {
        "hitting_time_mean": h0,
        "immediate": bool(contract.y0 <= level),
        "candidate": {"estimate": est, "std_error": se},
        "deviations": rows,
        "passed": all(r["passed"] for r in rows),
    }
    if not report["passed"]:
        worst = min(rows, key=lambda r: r["gap"] + BAND * r["combined_error"])
        raise AuditError(f"stopping rule {worst['name']!r} beats the first passage below U(rho)",
                         audit="american_stop", report=report)
    return report


def optimal_contract(model: ModelPrimitives, solution, control, y0: float, horizon: float = 1.0,
                     upper_margin: float = 0.5) -> RevealingContract:
    """Feedback contract Z = z_hat(Y) of a constructed free-boundary solution.

    It pays U^-1(Y) at the free boundary y = ln s_n and also exits at the
    horizon or `upper_margin` below the top of the continuation region.
    """
    termination = Termination(horizon=horizon, level=solution.y_boundary,
                              upper=control.continuation[1] - upper_margin)
    return make_contract(model, y0, lambda t, x, y: control.z_hat(y), termination)


def reduction_report(batch: SimulationBatch, solution, y0: float) -> dict:
    """Compare the principal estimate of an optimal-contract batch with v(y0)."""
    estimate, std_error = batch.estimate(batch.principal_payoffs)
    target = float(solution.v(y0))
    tolerance = max(BAND * std_error, 5e-2)
    return {
        "estimate": estimate,
        "std_error": std_error,
        "target": target,
        "tolerance": tolerance,
        "passed": abs(estimate - target) <= tolerance,
    }


def reduction_check(model: ModelPrimitives, solution, control, cfg: SimulationConfig,
                    y0: float, horizon: float = 1.0, upper_margin: float = 0.5) -> dict:
    """Simulate the optimal contract of a constructed free-boundary solution.

    Exits at the horizon or near the top of the continuation region are
    credited with the value-to-go, so the estimate targets v(y0) without
    truncation bias.
    """
    contract = optimal_contract(model, solution, control, y0, horizon, upper_margin)
    batch = simulate_output(model, None, contract, cfg, continuation=solution.v)
    return reduction_report(batch, solution, y0)
