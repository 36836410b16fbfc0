"""
First-best risk sharing with a deterministic horizon.

For a risk-neutral agent and deterministic discounts the first-best problem
reduces to a scalar Lagrange multiplier lambda solving

    G(lambda) = J[U_P*](lambda) - J[U_P o (U_P')^-1](lambda) + lambda * h_sup = 0,

where J[F](lambda) = K^P_T F(lambda eta_T) + int_0^T K^P_t F(lambda eta_t) dt
and h_sup is the best discounted output net of effort cost and the agent's
reservation value. The optimal contract pays
xi = l - (U_P')^-1(lambda eta_T) at T and pi_t = -(U_P')^-1(lambda eta_t).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from pa_common import AuditError, DomainError, ModelError, RangeError, RootError
from pa_contract import RevealingContract, Termination, make_contract
from pa_model import EffortDomain, ModelPrimitives, QuadraticEffort, grid_argmax_1d
from pa_montecarlo import (
    BAND,
    SimulationConfig,
    best_response_audit,
    constant_effort,
    revealed_effort,
    simulate_output,
)

logger = logging.getLogger(__name__)

LAMBDA_MIN = 1e-8
LAMBDA_CEILING = 1e12
MIN_PANELS = 200


# ============================================================================
# Principal utility and problem data
# ============================================================================

@dataclass(frozen=True)
class PrincipalUtility:
    name: str
    value: Callable
    derivative: Callable
    derivative_inverse: Callable
    derivative_range: Tuple[float, float] = (0.0, np.inf)


def cara_utility(risk_aversion: float = 1.0) -> PrincipalUtility:
    """U_P(x) = -exp(-g x) / g (g = 1 gives -e^-x)."""
    g = float(risk_aversion)
    if not g > 0:
        raise DomainError(f"risk_aversion must be positive, got {g}")
    return PrincipalUtility(
        name=f"cara({g:g})",
        value=lambda x: -np.exp(-g * np.asarray(x, dtype=float)) / g,
        derivative=lambda x: np.exp(-g * np.asarray(x, dtype=float)),
        derivative_inverse=lambda y: -np.log(np.asarray(y, dtype=float)) / g,
    )


def _quadratic_cost(a):
    return 0.5 * np.asarray(a, dtype=float) ** 2


@dataclass(frozen=True)
class FirstBestProblem:
    horizon: float = 1.0
    agent_rate: float = 0.0
    principal_rate: float = 0.0
    utility: PrincipalUtility = field(default_factory=cara_utility)
    cost: Callable = _quadratic_cost
    effort: EffortDomain = field(default_factory=lambda: EffortDomain(drift_actions=(-np.inf, np.inf)))
    closed_form: Optional[QuadraticEffort] = field(default_factory=QuadraticEffort)
    participation: float = 0.5
    x0: float = 0.0
    panels: int = MIN_PANELS
    lambda_max: float = 1e3

    def __post_init__(self):
        if not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.panels < MIN_PANELS or self.panels % 2:
            raise DomainError(f"Simpson quadrature needs an even panel count >= {MIN_PANELS}")
        if not self.lambda_max > LAMBDA_MIN:
            raise DomainError(f"lambda_max must exceed {LAMBDA_MIN}")
        xs = np.linspace(-5.0, 5.0, 201)
        slope = self.utility.derivative(xs)
        if np.any(slope <= 0) or np.any(np.diff(slope) >= 0):
            raise ModelError("U_P' must be positive and strictly decreasing")
        t = self.time_grid(self.horizon)
        if np.max(np.abs(self.eta(t) * self.principal_discount(t) - self.agent_discount(t))) > 1e-12:
            raise ModelError("eta * K^P must reproduce K")

    def time_grid(self, tau: float) -> np.ndarray:
        return np.linspace(0.0, tau, self.panels + 1)

    def agent_discount(self, t):
        return np.exp(-self.agent_rate * np.asarray(t, dtype=float))

    def principal_discount(self, t):
        return np.exp(-self.principal_rate * np.asarray(t, dtype=float))

    def eta(self, t):
        return self.agent_discount(t) / self.principal_discount(t)

    def as_model(self) -> ModelPrimitives:
        """The second-best economy with the same primitives (unit volatility, drift a)."""
        ones = lambda *args: np.ones(np.broadcast(*args).shape)
        return ModelPrimitives(
            name="first_best",
            drift=lambda t, x, a: np.asarray(a, dtype=float) * ones(t, x),
            vol=lambda t, x, b: ones(t, x, b),
            cost=lambda t, x, a, b: self.cost(a) * ones(t, x, b),
            discount_rate=lambda t, x, a, b: self.agent_rate * ones(t, x, a, b),
            agent_utility=lambda v: np.asarray(v, dtype=float),
            agent_utility_inverse=lambda v: np.asarray(v, dtype=float),
            principal_utility=self.utility.value,
            principal_discount_rate=lambda t, x: self.principal_rate * ones(t, x),
            participation=self.participation,
            effort=self.effort,
            closed_form=self.closed_form,
        )


@dataclass(frozen=True)
class LagrangianSolution:
    problem: FirstBestProblem
    lambda_hat: float
    v_fb: float
    h_sup: float
    g_slope: float

    def xi_rule(self, x_terminal):
        p = self.problem
        return np.asarray(x_terminal, dtype=float) - p.utility.derivative_inverse(self.lambda_hat * p.eta(p.horizon))

    def pi_rule(self, t):
        p = self.problem
        return -p.utility.derivative_inverse(self.lambda_hat * p.eta(t))

    def optimal_effort(self, t):
        return effort_path(self.problem, t, self.problem.horizon)[0]

    def summary(self) -> dict:
        return {
            "lambda_hat": self.lambda_hat,
            "v_fb": self.v_fb,
            "h_sup": self.h_sup,
            "g_slope": self.g_slope,
            "pi_at_zero": float(self.pi_rule(0.0)),
            "xi_offset": float(self.xi_rule(0.0)),
        }


# ============================================================================
# Conjugates and functionals
# ============================================================================

def conjugate(utility: PrincipalUtility, y):
    """U_P*(y) = sup_x {U_P(x) - x y} = U_P(I(y)) - y I(y), I = (U_P')^-1."""
    y_arr = np.asarray(y, dtype=float)
    lo, hi = utility.derivative_range
    if np.any(y_arr <= lo) or np.any(y_arr >= hi) or np.any(np.isnan(y_arr)):
        raise RangeError(f"conjugate argument outside the range ({lo}, {hi}) of U_P'")
    x = utility.derivative_inverse(y_arr)
    out = utility.value(x) - y_arr * x
    return float(out) if out.ndim == 0 else out


def j_functional(problem: FirstBestProblem, F: Callable, lam: float, tau: float) -> float:
    if not 0 < tau <= problem.horizon * (1 + 1e-12):
        raise DomainError(f"tau must lie in (0, T], got {tau}")
    t = problem.time_grid(tau)
    kp = problem.principal_discount(t)
    integrand = kp * F(lam * problem.eta(t))
    return float(kp[-1] * F(lam * problem.eta(tau)) + simpson(integrand, x=t))


def effort_path(problem: FirstBestProblem, t, tau: float):
    """Pointwise maximizer of K_tau a - K_t c(a) and its value."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    k_tau = float(problem.agent_discount(tau))
    k_t = problem.agent_discount(t)
    lo, hi = problem.effort.drift_actions
    if problem.closed_form is not None:
        a = np.clip(k_tau / (problem.closed_form.kappa * k_t), lo, hi)
    else:
        a = np.array([
            grid_argmax_1d(lambda v, kt=kt: k_tau * v - kt * problem.cost(v),
                           problem.effort.drift_actions, problem.effort.grid_resolution)[0]
            for kt in k_t
        ])
    return a, k_tau * a - k_t * problem.cost(a)


def h_functional_sup(problem: FirstBestProblem, tau: float) -> float:
    """sup over effort of K_tau X_tau - int K_t c(a_t) dt - R (expected)."""
    t = problem.time_grid(tau)
    _, gain = effort_path(problem, t, tau)
    return float(problem.agent_discount(tau) * problem.x0 + simpson(gain, x=t) - problem.participation)


def first_best_value(problem: FirstBestProblem, lam: float, h_sup: Optional[float] = None) -> float:
    """v_fb(lambda) = J[U_P*](lambda) + lambda h_sup."""
    if h_sup is None:
        h_sup = h_functional_sup(problem, problem.horizon)
    return j_functional(problem, lambda y: conjugate(problem.utility, y), lam, problem.horizon) + lam * h_sup


# ============================================================================
# Lagrange multiplier
# ============================================================================

def solve_lambda_hat(problem: FirstBestProblem) -> LagrangianSolution:
    T = problem.horizon
    u = problem.utility
    h_sup = h_functional_sup(problem, T)

    def pay_value(y):
        return u.value(u.derivative_inverse(y))

    def G(lam):
        return (j_functional(problem, lambda y: conjugate(u, y), lam, T)
                - j_functional(problem, pay_value, lam, T) + lam * h_sup)

    lo, hi = LAMBDA_MIN, problem.lambda_max
    g_lo, g_hi = G(lo), G(hi)
    while np.sign(g_lo) == np.sign(g_hi) and hi < LAMBDA_CEILING:
        hi *= 10.0
        g_hi = G(hi)
    if np.sign(g_lo) == np.sign(g_hi):
        raise RootError(
            f"G has no sign change on [{lo:g}, {hi:g}]: G = ({g_lo:.6g}, {g_hi:.6g})",
            endpoints=(lo, hi),
            values=(g_lo, g_hi),
        )
    lam = brentq(G, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)

    # Newton polish with a central-difference slope
    for _ in range(2):
        step = 1e-6 * lam
        slope = (G(lam + step) - G(lam - step)) / (2 * step)
        candidate = lam - G(lam) / slope
        if candidate > 0 and abs(G(candidate)) < abs(G(lam)):
            lam = candidate
    step = 1e-6 * lam
    slope = (G(lam + step) - G(lam - step)) / (2 * step)

    v_fb = first_best_value(problem, lam, h_sup)
    pay = j_functional(problem, pay_value, lam, T)
    if abs(v_fb - pay) > 1e-8 * max(1.0, abs(v_fb)):
        logger.warning(f"v_fb = {v_fb:.12g} differs from J[U_P o I](lambda) = {pay:.12g}")
    logger.info(f"lambda_hat = {lam:.12g}, v_fb = {v_fb:.12g}")
    return LagrangianSolution(problem=problem, lambda_hat=float(lam), v_fb=float(v_fb),
                              h_sup=h_sup, g_slope=float(slope))


# ============================================================================
# Second-best comparison
# ============================================================================

def revealing_first_best(problem: FirstBestProblem, sol: LagrangianSolution, y0: Optional[float] = None,
                         payment: Optional[Callable] = None) -> RevealingContract:
    """Y0 = R, Z_t = K_T / K_t, payment pi^lambda: implements the first-best effort."""
    T = problem.horizon
    k_T = float(problem.agent_discount(T))

    def z_policy(t, x, y):
        return k_T / problem.agent_discount(np.broadcast_to(t, np.broadcast(t, x, y).shape))

    def pi_rule(t, x):
        return np.broadcast_to(sol.pi_rule(t), np.broadcast(t, x).shape)

    return make_contract(
        problem.as_model(),
        problem.participation if y0 is None else y0,
        z_policy,
        Termination(horizon=T),
        payment_rate=pi_rule if payment is None else payment,
    )


def second_best_equality_check(problem: FirstBestProblem, sol: LagrangianSolution, cfg: SimulationConfig) -> dict:
    """Simulate the revealing first-best contract and compare against R and v_fb."""
    model = problem.as_model()
    cfg = replace(cfg, x0=problem.x0)
    contract = revealing_first_best(problem, sol)
    batch = simulate_output(model, None, contract, cfg)
    agent, agent_se = batch.estimate(batch.agent_payoffs)
    principal, principal_se = batch.estimate(batch.principal_payoffs)
    gap = float(np.max(np.abs(batch.terminal_y - sol.xi_rule(batch.terminal_x))))

    t = problem.time_grid(problem.horizon)
    revealed = revealed_effort(model, contract)(t, np.zeros_like(t), np.zeros_like(t))[0]
    effort_gap = float(np.max(np.abs(revealed - sol.optimal_effort(t))))

    audit = best_response_audit(model, contract, cfg, {"zero_effort": constant_effort(0.0)})
    checks = {
        "agent_value": abs(agent - problem.participation) <= BAND * agent_se + 1e-9,
        "principal_value": abs(principal - sol.v_fb) <= max(BAND * principal_se, 1e-6),
        "best_response": effort_gap <= 1e-9 and audit["passed"],
        "deviation_loses": all(row["loses"] for row in audit["deviations"]),
    }
    report = {
        "agent": {"estimate": agent, "std_error": agent_se, "target": problem.participation},
        "principal": {"estimate": principal, "std_error": principal_se, "target": sol.v_fb},
        "representation_gap": gap,
        "effort_gap": effort_gap,
        "deviations": audit["deviations"],
        "checks": checks,
        "passed": all(checks.values()),
    }
    if not report["passed"]:
        failed = [name for name, ok in checks.items() if not ok]
        raise AuditError(f"second-best equality check failed: {', '.join(failed)}",
                         audit="second_best_equality", report=report)
    return report


def weak_duality_chain(problem: FirstBestProblem, sol: LagrangianSolution, cfg: SimulationConfig,
                       effort_level: float, payment_level: float, y0: float) -> dict:
    """J^P, the dual bound J[U_P*](lambda) + lambda E[h], and v_fb for one constant-effort contract."""
    model = problem.as_model()
    cfg = replace(cfg, x0=problem.x0)
    T = problem.horizon
    contract = revealing_first_best(
        problem, sol, y0=y0,
        payment=lambda t, x: np.full(np.broadcast(t, x).shape, float(payment_level)),
    )
    batch = simulate_output(model, constant_effort(effort_level), contract, cfg)
    j_p, j_p_se = batch.estimate(batch.principal_payoffs)
    j_a, j_a_se = batch.estimate(batch.agent_payoffs)

    t = problem.time_grid(T)
    k = problem.agent_discount(t)
    h_expected = (float(problem.agent_discount(T)) * (problem.x0 + effort_level * T)
                  - simpson(k * problem.cost(np.full_like(t, effort_level)), x=t)
                  - problem.participation)
    dual = float(j_functional(problem, lambda y: conjugate(problem.utility, y), sol.lambda_hat, T)
                 + sol.lambda_hat * h_expected)
    # the chain needs the agent to receive at least R
    admissible = j_a >= problem.participation - BAND * j_a_se - 1e-9
    holds = j_p <= dual + BAND * j_p_se + 1e-9 and dual <= sol.v_fb + 1e-9 * max(1.0, abs(sol.v_fb))
    if admissible and not holds:
        logger.warning(f"weak duality chain broken: J^P = {j_p:.6g}, dual = {dual:.6g}, v_fb = {sol.v_fb:.6g}")
    return {
        "principal": j_p,
        "principal_std_error": j_p_se,
        "agent": j_a,
        "agent_std_error": j_a_se,
        "dual_bound": dual,
        "v_fb": sol.v_fb,
        "admissible": bool(admissible),
        "holds": bool(holds),
    }
