"""
Grid solver for the principal's reduced variational inequality

    min{ v - v0,  r (v - y v') + I(v') - J(v', v'') } = 0   on [0, y_max]

with the inner problems

    I(p)    = inf_{0 <= pi <= cap} { pi + p U(pi) }
    J(p, q) = sup_{a in A} { a + h(a) p + gamma(a)^2 q / 2 }.

Without an obstacle the equality is solved instead (the agent, not the
principal, decides when the relationship ends). The right edge carries the
retirement value: zero effort and the flat payment that keeps the agent at
y forever, plus the effort term J/r that dominates its error for large y.

Both methods are outer policy iterations. At each node the incumbent
control is kept unless a candidate (the maximizers under central, forward
and backward slopes, or stopping) lowers the row residual by more than the
improvement threshold, so the iterates increase monotonically.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from pa_common import ConvergenceError, DomainError, GridError, UnboundedError
from pa_model import ModelPrimitives, QuadraticEffort, grid_argmax_1d

logger = logging.getLogger(__name__)

PAYMENT_CAP = 100.0
MIN_GRID_POINTS = 200
METHODS = ("policy", "psor")
RIGHT_BOUNDARIES = ("retirement",)
# Residual noise floor in units of machine epsilon times the row scale
NOISE_ULPS = 64
RESIDUAL_EVERY = 25


# ============================================================================
# Inner optimization problems
# ============================================================================

def inner_payment_inf(p, model: ModelPrimitives):
    """I(p) = inf over pi >= 0 of pi + p U(pi), for p < 0."""
    p_arr = np.asarray(p, dtype=float)
    if np.any(p_arr >= 0) or np.any(np.isnan(p_arr)):
        raise DomainError("inner_payment_inf needs p < 0")
    pi = _payment_argmin(p_arr, model)
    out = pi + p_arr * model.agent_utility(pi)
    return float(out) if out.ndim == 0 else out


def _payment_argmin(p: np.ndarray, model: ModelPrimitives) -> np.ndarray:
    if model.utility_derivative_inverse is not None:
        return np.asarray(model.utility_derivative_inverse(-1.0 / p), dtype=float)
    pi = np.empty(p.shape)
    for idx, pk in enumerate(p.flat):
        pi.flat[idx], _ = grid_argmax_1d(
            lambda v, pk=pk: -(v + pk * model.agent_utility(v)), (0.0, PAYMENT_CAP), 2001
        )
    return pi


def optimal_payment(p, model: ModelPrimitives, cap: float = PAYMENT_CAP) -> np.ndarray:
    """Payment policy: the minimizer of I where p < 0, zero elsewhere, at most `cap`.

    pi + p U(pi) is convex in U(pi) for concave U, so clipping the free
    minimizer gives the constrained one.
    """
    p = np.asarray(p, dtype=float)
    pi = np.zeros(p.shape)
    if not model.payments:
        return pi
    neg = p < 0
    if np.any(neg):
        pi[neg] = np.minimum(_payment_argmin(p[neg], model), cap)
    return pi


def optimal_effort(p, q, model: ModelPrimitives):
    """Maximizer a* of a + h(a) p + gamma(a)^2 q / 2 over A."""
    p, q = np.broadcast_arrays(np.asarray(p, dtype=float), np.asarray(q, dtype=float))
    lo, hi = model.effort.drift_actions
    form = model.closed_form
    if isinstance(form, QuadraticEffort):
        c2 = form.kappa * p + q
        if np.any((c2 >= 0) & (hi == np.inf)) or np.any((c2 > 0) & (lo == -np.inf)):
            raise UnboundedError("J(p, q) is unbounded: p + q >= 0 on an unbounded effort set")
        with np.errstate(divide="ignore"):
            interior = np.clip(-1.0 / np.where(c2 < 0, c2, -1.0), lo, hi)
        left = lo + 0.5 * c2 * lo ** 2 if np.isfinite(lo) else -np.inf
        right = hi + 0.5 * c2 * hi ** 2 if np.isfinite(hi) else -np.inf
        endpoint = np.where(right > left, hi, lo)
        return np.where(c2 < 0, interior, endpoint)
    a = np.empty(p.shape)
    for idx, (pk, qk) in enumerate(zip(p.flat, q.flat)):
        a.flat[idx], _ = grid_argmax_1d(
            lambda v, pk=pk, qk=qk: _effort_objective(v, pk, qk, model),
            model.effort.drift_actions,
            model.effort.grid_resolution,
        )
    return a


def _effort_candidate(p, q, model: ModelPrimitives) -> Tuple[np.ndarray, np.ndarray]:
    """optimal_effort with the unbounded nodes masked out instead of raising."""
    lo, hi = model.effort.drift_actions
    form = model.closed_form
    valid = np.ones(np.shape(p), dtype=bool)
    if isinstance(form, QuadraticEffort) and not (np.isfinite(lo) and np.isfinite(hi)):
        c2 = form.kappa * p + q
        valid = ~(((c2 >= 0) & (hi == np.inf)) | ((c2 > 0) & (lo == -np.inf)))
        q = np.where(valid, q, -form.kappa * p - 1.0)
    return optimal_effort(p, q, model), valid


def _effort_objective(a, p, q, model: ModelPrimitives):
    return a + model.h(a) * p + 0.5 * model.response_inverse(a) ** 2 * q


def inner_effort_sup(p, q, model: ModelPrimitives):
    """J(p, q) = sup over a in A of a + h(a) p + gamma(a)^2 q / 2."""
    a = optimal_effort(p, q, model)
    out = _effort_objective(a, np.asarray(p, dtype=float), np.asarray(q, dtype=float), model)
    return float(out) if np.ndim(out) == 0 else out


# ============================================================================
# Retirement boundary
# ============================================================================

def retirement_value(model: ModelPrimitives, rate: float, y):
    """Principal value of zero effort and the flat payment U^-1(k0 y) that keeps the agent at y."""
    y = np.asarray(y, dtype=float)
    return -np.asarray(model.agent_utility_inverse(model.k0 * y), dtype=float) / rate


def retirement_boundary_value(model: ModelPrimitives, rate: float, y: float, rel_step: float = 1e-3) -> float:
    """Retirement value plus J(v', v'')/r evaluated on it.

    With k0 = r the retirement value cancels the payment part of the
    generator exactly and leaves -J, so this is the leading-order value for
    large y.
    """
    step = rel_step * max(1.0, abs(y))
    lo, mid, hi = retirement_value(model, rate, np.array([y - step, y, y + step]))
    p = (hi - lo) / (2.0 * step)
    q = (hi - 2.0 * mid + lo) / step ** 2
    return float(mid + inner_effort_sup(p, q, model) / rate)


# ============================================================================
# Problem and solution types
# ============================================================================

@dataclass(frozen=True)
class ObstacleGridProblem:
    model: ModelPrimitives
    y_max: float
    n_points: int = 601
    rate: float = 0.1
    agent_rate: Optional[float] = None
    obstacle: Optional[Callable] = None
    left_value: float = 0.0
    right_boundary: Union[str, float] = "retirement"
    payment_cap: float = PAYMENT_CAP
    method: str = "policy"
    omega: float = 1.5
    tolerance: float = 1e-9
    max_iterations: int = 100_000
    max_policy_iterations: int = 200

    def __post_init__(self):
        if not self.rate > 0:
            raise DomainError(f"rate must be positive, got {self.rate}")
        if self.n_points < MIN_GRID_POINTS:
            raise GridError(f"grid needs at least {MIN_GRID_POINTS} points, got {self.n_points}")
        if not self.y_max > 0:
            raise GridError(f"y_max must be positive, got {self.y_max}")
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}, got {self.method!r}")
        if not 0 < self.omega < 2:
            raise DomainError(f"omega must lie in (0, 2), got {self.omega}")
        if not self.payment_cap > 0:
            raise DomainError(f"payment_cap must be positive, got {self.payment_cap}")
        if isinstance(self.right_boundary, str):
            if self.right_boundary not in RIGHT_BOUNDARIES:
                raise DomainError(
                    f"right_boundary must be one of {RIGHT_BOUNDARIES} or a number, got {self.right_boundary!r}"
                )
            if not (self.model.payments and self.model.k0 > 0):
                raise DomainError(
                    "a retirement right boundary needs payments and a positive agent rate k0",
                    suggestion="Pass a numeric right_boundary for this model.",
                )
        if self.obstacle is not None:
            g = self.obstacle(self.y_grid)
            if not np.all(np.isfinite(g)):
                raise DomainError("obstacle must be finite on the grid")
            if self.left_value < g[0] or self.right_value < g[-1]:
                raise DomainError("boundary values must lie on or above the obstacle")

    @property
    def y_grid(self) -> np.ndarray:
        return np.linspace(0.0, self.y_max, self.n_points)

    @property
    def dy(self) -> float:
        return self.y_max / (self.n_points - 1)

    @property
    def slope_rate(self) -> float:
        return self.rate if self.agent_rate is None else self.agent_rate

    @property
    def right_value(self) -> float:
        if isinstance(self.right_boundary, str):
            return retirement_boundary_value(self.model, self.rate, self.y_max)
        return float(self.right_boundary)


@dataclass(frozen=True)
class GridSolution:
    y: np.ndarray
    v: np.ndarray
    v_prime: np.ndarray
    v_second: np.ndarray
    effort: np.ndarray
    payment: np.ndarray
    z_hat: np.ndarray
    stop: np.ndarray
    residual: float
    iterations: int
    method: str

    def summary(self) -> dict:
        stopped = self.y[self.stop]
        return {
            "method": self.method,
            "iterations": self.iterations,
            "residual": self.residual,
            "n_points": len(self.y),
            "y_max": float(self.y[-1]),
            "v_left": float(self.v[0]),
            "v_right": float(self.v[-1]),
            "stop_nodes": int(np.count_nonzero(self.stop)),
            "first_stop_y": float(stopped[0]) if len(stopped) else None,
        }


@dataclass
class _Rows:
    lower: np.ndarray
    diag: np.ndarray
    upper: np.ndarray
    rhs: np.ndarray

    def apply(self, v: np.ndarray) -> np.ndarray:
        return self.lower * v[:-2] + self.diag * v[1:-1] + self.upper * v[2:] - self.rhs


@dataclass
class _Policy:
    """Interior controls; `stop` rows pin v to the obstacle."""

    effort: np.ndarray
    payment: np.ndarray
    stop: np.ndarray


def _rows(problem: ObstacleGridProblem, y_int: np.ndarray, a: np.ndarray, pi: np.ndarray) -> _Rows:
    """Interior rows of r v - b v' - d v'' = a - pi at fixed controls.

    Central differences where the row stays monotone, upwind first
    derivatives elsewhere, so every row is an M-matrix row.
    """
    model = problem.model
    dy = problem.dy
    diff = 0.5 * model.response_inverse(a) ** 2
    b = problem.slope_rate * y_int + model.h(a) - model.agent_utility(pi)
    central = 2.0 * diff >= np.abs(b) * dy
    lower = np.where(central, b / (2 * dy), np.where(b > 0, 0.0, b / dy)) - diff / dy ** 2
    upper = np.where(central, -b / (2 * dy), np.where(b > 0, -b / dy, 0.0)) - diff / dy ** 2
    diag = problem.rate + 2 * diff / dy ** 2 + np.where(central, 0.0, np.abs(b) / dy)
    return _Rows(lower=lower, diag=diag, upper=upper, rhs=a - pi)


def _initial_guess(problem: ObstacleGridProblem, y: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
    left, right = problem.left_value, problem.right_value
    v = left + (right - left) * y / problem.y_max
    if g is not None:
        v = np.maximum(v, g)
    v[0], v[-1] = left, right
    return v


def _candidates(problem: ObstacleGridProblem, v: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Controls that are optimal for v under central, forward and backward slopes."""
    dy = problem.dy
    q = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / dy ** 2
    slopes = ((v[2:] - v[:-2]) / (2.0 * dy), (v[2:] - v[1:-1]) / dy, (v[1:-1] - v[:-2]) / dy)
    out = []
    for p in slopes:
        a, valid = _effort_candidate(p, q, problem.model)
        out.append((a, optimal_payment(p, problem.model, problem.payment_cap), valid))
    return out


def _threshold(problem: ObstacleGridProblem, v: np.ndarray, diag: np.ndarray) -> float:
    """Smallest residual improvement that is not rounding noise."""
    scale = float(np.max(diag)) * max(1.0, float(np.max(np.abs(v))))
    return max(problem.tolerance, NOISE_ULPS * np.finfo(float).eps * scale)


def _select(problem: ObstacleGridProblem, y_int: np.ndarray, v: np.ndarray, g: Optional[np.ndarray],
            incumbent: Optional[_Policy]):
    """Improve the policy at v.

    Returns (policy, changed, bellman) where bellman is the best residual
    min(v - v0, row) available at each interior node.
    """
    m = len(y_int)
    gap = v[1:-1] - g[1:-1] if g is not None else np.full(m, np.inf)
    explicit_stop = problem.method == "policy" and g is not None

    def score(rows, valid, stop):
        value = np.where(valid, rows.apply(v), np.inf)
        if explicit_stop:
            return np.where(stop, gap, value)
        return np.minimum(gap, value)

    efforts, payments, stops, values, diags = [], [], [], [], []
    for a, pi, valid in _candidates(problem, v):
        rows = _rows(problem, y_int, a, pi)
        efforts.append(a)
        payments.append(pi)
        stops.append(np.zeros(m, dtype=bool))
        values.append(score(rows, valid, stops[-1]))
        diags.append(rows.diag)
    if explicit_stop:
        efforts.append(efforts[0])
        payments.append(payments[0])
        stops.append(np.ones(m, dtype=bool))
        values.append(gap)

    values = np.vstack(values)
    best = np.argmin(values, axis=0)
    cols = np.arange(m)
    best_value = values[best, cols]
    chosen = _Policy(
        effort=np.vstack(efforts)[best, cols],
        payment=np.vstack(payments)[best, cols],
        stop=np.vstack(stops)[best, cols],
    )

    if incumbent is None:
        if not np.all(np.isfinite(best_value)):
            raise UnboundedError("J(p, q) is unbounded at every candidate slope of the initial guess")
        return chosen, True, best_value

    inc_rows = _rows(problem, y_int, incumbent.effort, incumbent.payment)
    inc_value = score(inc_rows, np.ones(m, dtype=bool), incumbent.stop)
    threshold = _threshold(problem, v, np.maximum(np.max(diags, axis=0), inc_rows.diag))
    switch = best_value < inc_value - threshold
    policy = _Policy(
        effort=np.where(switch, chosen.effort, incumbent.effort),
        payment=np.where(switch, chosen.payment, incumbent.payment),
        stop=np.where(switch, chosen.stop, incumbent.stop),
    )
    return policy, bool(np.any(switch)), np.minimum(best_value, inc_value)


def _solve_policy_system(problem: ObstacleGridProblem, y_int: np.ndarray, policy: _Policy,
                         g: Optional[np.ndarray]) -> np.ndarray:
    rows = _rows(problem, y_int, policy.effort, policy.payment)
    stop = policy.stop
    lower = np.where(stop, 0.0, rows.lower)
    upper = np.where(stop, 0.0, rows.upper)
    diag = np.where(stop, 1.0, rows.diag)
    rhs = np.where(stop, g[1:-1] if g is not None else 0.0, rows.rhs)

    # Dirichlet rows at both ends
    matrix = sparse.diags(
        [np.append(lower, 0.0), np.concatenate(([1.0], diag, [1.0])), np.insert(upper, 0, 0.0)],
        [-1, 0, 1],
        format="csc",
    )
    v = spsolve(matrix, np.concatenate(([problem.left_value], rhs, [problem.right_value])))
    v[0], v[-1] = problem.left_value, problem.right_value
    return v


def _complementarity(rows: _Rows, v: np.ndarray, g: Optional[np.ndarray]) -> np.ndarray:
    pde = rows.apply(v)
    if g is None:
        return pde
    return np.minimum(v[1:-1] - g[1:-1], pde)


def _psor(problem: ObstacleGridProblem, rows: _Rows, v: np.ndarray, g: Optional[np.ndarray],
          target: float) -> Tuple[np.ndarray, int]:
    """Red-black projected SOR on fixed rows, run until the residual is below `target`."""
    n = problem.n_points
    omega = problem.omega
    v[0], v[-1] = problem.left_value, problem.right_value
    residual = float(np.max(np.abs(_complementarity(rows, v, g))))
    if residual <= target:
        return v, 0
    for sweep in range(1, problem.max_iterations + 1):
        for start in (1, 2):
            i = np.arange(start, n - 1, 2)
            k = i - 1
            gs = (rows.rhs[k] - rows.lower[k] * v[i - 1] - rows.upper[k] * v[i + 1]) / rows.diag[k]
            v[i] = v[i] + omega * (gs - v[i])
            if g is not None:
                v[i] = np.maximum(v[i], g[i])
        if sweep % RESIDUAL_EVERY == 0:
            residual = float(np.max(np.abs(_complementarity(rows, v, g))))
            if residual <= target:
                return v, sweep
    raise ConvergenceError(
        f"PSOR did not converge within {problem.max_iterations} sweeps", residual=residual
    )


def solve_obstacle_grid(problem: ObstacleGridProblem) -> GridSolution:
    y = problem.y_grid
    y_int = y[1:-1]
    g = problem.obstacle(y) if problem.obstacle is not None else None
    v = _initial_guess(problem, y, g)
    policy, _, bellman = _select(problem, y_int, v, g, None)
    total_sweeps = 0

    for it in range(1, problem.max_policy_iterations + 1):
        if problem.method == "policy":
            v_new = _solve_policy_system(problem, y_int, policy, g)
        else:
            rows = _rows(problem, y_int, policy.effort, policy.payment)
            v_new, sweeps = _psor(problem, rows, v.copy(), g, _threshold(problem, v, rows.diag) / 4)
            total_sweeps += sweeps
        if not np.all(np.isfinite(v_new)):
            raise ConvergenceError("grid iterate is not finite", residual=np.inf, iteration=it)
        change = float(np.max(np.abs(v_new - v)))
        v = v_new
        policy, changed, bellman = _select(problem, y_int, v, g, policy)
        logger.debug(f"{problem.method} iteration {it}: change={change:.3e}, policy changed={changed}")
        if not changed:
            break
    else:
        raise ConvergenceError(
            f"{problem.method} iteration did not converge in {problem.max_policy_iterations} steps",
            residual=float(np.max(np.abs(bellman))),
        )

    residual = float(np.max(np.abs(bellman)))
    stop_flags = np.zeros(problem.n_points, dtype=bool)
    if g is not None:
        stop_flags = np.abs(v - g) <= 1e-12 * np.maximum(1.0, np.abs(g))
        stop_flags[0] = stop_flags[-1] = False
    effort = np.concatenate(([policy.effort[0]], policy.effort, [policy.effort[-1]]))
    payment = np.concatenate(([policy.payment[0]], policy.payment, [policy.payment[-1]]))
    logger.info(
        f"solved {problem.model.name} grid ({problem.method}) in {it} iterations"
        f"{f', {total_sweeps} sweeps' if total_sweeps else ''}; residual {residual:.3e}"
    )
    return GridSolution(
        y=y,
        v=v,
        v_prime=np.gradient(v, problem.dy),
        v_second=np.gradient(np.gradient(v, problem.dy), problem.dy),
        effort=effort,
        payment=payment,
        z_hat=problem.model.response_inverse(effort),
        stop=stop_flags,
        residual=residual,
        iterations=it,
        method=problem.method,
    )


# ============================================================================
# Builders
# ============================================================================

def sannikov_problem(model: ModelPrimitives, y_max: float = 10.0, n_points: int = 1001,
                     american: bool = False, **options) -> ObstacleGridProblem:
    """European (obstacle -U^-1(y)) or American (no obstacle) reduced problem."""
    obstacle = None if american else (lambda y: -model.agent_utility_inverse(y))
    return ObstacleGridProblem(
        model=model,
        y_max=y_max,
        n_points=n_points,
        rate=float(model.principal_discount_rate(0.0, 0.0)),
        agent_rate=model.k0,
        obstacle=obstacle,
        **options,
    )


def european_recast(solution, model: ModelPrimitives, y_max: float = 3.5, n_points: int = 3501,
                    **options) -> ObstacleGridProblem:
    """The risk-neutral quadratic problem on [0, y_max] with Dirichlet data from a constructed solution."""
    return ObstacleGridProblem(
        model=model,
        y_max=y_max,
        n_points=n_points,
        rate=solution.beta,
        agent_rate=0.0,
        obstacle=lambda y: -np.asarray(y, dtype=float),
        left_value=float(solution.v(0.0)),
        right_boundary=float(solution.v(y_max)),
        **options,
    )


def boundary_sensitivity(problem: ObstacleGridProblem, factor: float = 1.5) -> float:
    """Sup gap on [0, y_max/2] between solutions on y_max and factor*y_max (same step)."""
    base = solve_obstacle_grid(problem)
    n_wide = int(round((problem.n_points - 1) * factor)) + 1
    wide = solve_obstacle_grid(replace(problem, n_points=n_wide, y_max=problem.dy * (n_wide - 1)))
    shared = base.y <= problem.y_max / 2
    gap = float(np.max(np.abs(base.v[shared] - wide.v[: len(base.y)][shared])))
    logger.info(f"right-boundary sensitivity on [0, {problem.y_max / 2:g}]: {gap:.3e}")
    return gap
