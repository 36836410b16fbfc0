"""
Economy primitives and the agent Hamiltonian.

A ModelPrimitives bundles the drift, volatility, cost and discount maps of a
one-dimensional contracting economy together with both utility functions.
The Hamiltonian is the supremum of the agent's running reward over the
effort set; it is evaluated in closed form when the model registers one and
by grid search refined on the best cell otherwise.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from pa_common import DomainError, ModelError, UnboundedError, require_finite

logger = logging.getLogger(__name__)

# Values above this during a grid search are treated as an unbounded supremum
OVERFLOW_GUARD = 1e12
REFINE_XATOL = 1e-12


# ============================================================================
# Effort sets
# ============================================================================

@dataclass(frozen=True)
class EffortDomain:
    """Closed intervals A (drift actions) and B (volatility actions)."""

    drift_actions: Tuple[float, float] = (0.0, 0.0)
    vol_actions: Tuple[float, float] = (0.0, 0.0)
    grid_resolution: int = 201

    def __post_init__(self):
        for name, (lo, hi) in (("drift_actions", self.drift_actions), ("vol_actions", self.vol_actions)):
            if np.isnan(lo) or np.isnan(hi) or lo > hi:
                raise DomainError(f"{name} must be an interval with lower <= upper, got ({lo}, {hi})")
        if self.grid_resolution < 2:
            raise DomainError(f"grid_resolution must be >= 2, got {self.grid_resolution}")

    @property
    def bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.drift_actions + self.vol_actions)))

    def contains(self, a, b) -> bool:
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return bool(
            np.all((a >= self.drift_actions[0]) & (a <= self.drift_actions[1]))
            and np.all((b >= self.vol_actions[0]) & (b <= self.vol_actions[1]))
        )

    def drift_grid(self) -> np.ndarray:
        return _interval_grid(self.drift_actions, self.grid_resolution, "drift")

    def vol_grid(self) -> np.ndarray:
        return _interval_grid(self.vol_actions, self.grid_resolution, "volatility")


def _interval_grid(bounds: Tuple[float, float], resolution: int, label: str) -> np.ndarray:
    lo, hi = bounds
    if not (np.isfinite(lo) and np.isfinite(hi)):
        raise UnboundedError(
            f"grid search over the {label} actions needs finite bounds, got ({lo}, {hi})"
        )
    if lo == hi:
        return np.array([lo])
    return np.linspace(lo, hi, resolution)


# ============================================================================
# Closed-form maximizers
# ============================================================================

@dataclass(frozen=True)
class QuadraticEffort:
    """Cost kappa*a^2/2, drift response a and a single volatility action.

    The maximizer of -kappa*a^2/2 + sigma*a*z is sigma*z/kappa, clipped to A.
    """

    kappa: float = 1.0

    def maximize(self, model: "ModelPrimitives", t, x, y, z, gamma):
        lo, hi = model.effort.drift_actions
        b = np.full(np.shape(z), model.effort.vol_actions[0], dtype=float)
        sigma = model.vol(t, x, b)
        a = np.clip(sigma * np.asarray(z, dtype=float) / self.kappa, lo, hi)
        return a, b


# ============================================================================
# Model primitives
# ============================================================================

def _identity(v):
    return v


@dataclass(frozen=True)
class ModelPrimitives:
    """One contracting economy (scalar state).

    All maps are expected to accept numpy arrays and broadcast.
    """

    name: str
    drift: Callable
    vol: Callable
    cost: Callable
    discount_rate: Callable
    agent_utility: Callable
    agent_utility_inverse: Callable
    principal_utility: Callable = _identity
    principal_discount_rate: Callable = lambda t, x: np.zeros(np.broadcast(t, x).shape)
    liquidation: Callable = _identity
    participation: float = 0.0
    effort: EffortDomain = field(default_factory=EffortDomain)
    closed_form: Optional[QuadraticEffort] = None
    retirement: Optional[float] = None
    utility_range: Tuple[float, float] = (-np.inf, np.inf)
    utility_derivative_inverse: Optional[Callable] = None
    payments: bool = True
    effort_cost: Optional[Callable] = None
    response_inverse: Callable = _identity
    discounted_output: bool = False
    bounds: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.effort.bounded and self.closed_form is None:
            raise ModelError(
                f"model {self.name!r}: an unbounded effort set needs a registered closed-form maximizer"
            )

    @property
    def k0(self) -> float:
        return float(self.discount_rate(0.0, 0.0, 0.0, 0.0))

    @property
    def retirement_level(self) -> Optional[float]:
        """U(rho) = U(0)/k0, or the explicitly declared level."""
        if self.retirement is not None:
            return self.retirement
        if self.k0 > 0:
            return float(self.agent_utility(0.0)) / self.k0
        return None

    def h(self, a):
        """Effort cost h(a) used by the reduced grid equations."""
        if self.effort_cost is not None:
            return self.effort_cost(a)
        return self.cost(0.0, 0.0, a, self.effort.vol_actions[0])

    def validate(self, t_samples=None, x_samples=None, y_samples=None) -> None:
        """Check the declared invariants on sampled points, raising ModelError."""
        t = np.linspace(0.0, 5.0, 11) if t_samples is None else np.asarray(t_samples, dtype=float)
        x = np.linspace(-5.0, 5.0, 21) if x_samples is None else np.asarray(x_samples, dtype=float)
        tt, xx = np.meshgrid(t, x, indexing="ij")

        lo, hi = self.utility_range
        if y_samples is None:
            y_lo = lo if np.isfinite(lo) else -10.0
            y_hi = hi if np.isfinite(hi) else 10.0
            y_samples = np.linspace(y_lo, y_hi, 101)
        y = np.asarray(y_samples, dtype=float)
        roundtrip = self.agent_utility(self.agent_utility_inverse(y))
        if np.max(np.abs(roundtrip - y)) > 1e-10 * max(1.0, float(np.max(np.abs(y)))):
            raise ModelError(f"model {self.name!r}: U(U^-1(y)) != y on the sampled grid")

        zero = np.zeros_like(tt)
        if np.max(np.abs(self.cost(tt, xx, zero, zero))) > 0.0:
            raise ModelError(f"model {self.name!r}: cost(t, x, 0, 0) must vanish")
        rest = self.discount_rate(tt, xx, zero, zero)
        k0 = self.k0
        if np.max(np.abs(rest - k0)) > 1e-12 or k0 < 0:
            raise ModelError(f"model {self.name!r}: discount_rate(t, x, 0, 0) must be a constant k0 >= 0")
        if k0 == 0:
            logger.info(f"model {self.name!r} has k0 = 0; retirement level must be declared explicitly")

        if self.effort.bounded:
            a = self.effort.drift_grid()
            b = self.effort.vol_grid()
            T, X, A, B = np.meshgrid(t, x, a, b, indexing="ij")
            checks = {
                "drift_bound": np.abs(self.drift(T, X, A)),
                "vol_bound": np.abs(self.vol(T, X, B)),
                "discount_bound": np.abs(self.discount_rate(T, X, A, B)),
            }
            for key, values in checks.items():
                bound = self.bounds.get(key)
                if bound is not None and np.max(values) > bound:
                    raise ModelError(f"model {self.name!r}: {key} {bound} exceeded on the sampled grid")
        if np.any(self.vol(tt, xx, np.full_like(tt, self.effort.vol_actions[0])) <= 0):
            raise ModelError(f"model {self.name!r}: volatility must be positive")


@dataclass(frozen=True)
class HamiltonianQuery:
    t: float
    x: float
    y: float
    z: float
    gamma: float = 0.0

    def __post_init__(self):
        require_finite("HamiltonianQuery", self.t, self.x, self.y, self.z, self.gamma)


# ============================================================================
# Running reward, Hamiltonian, maximizer
# ============================================================================

def reward_array(model: ModelPrimitives, t, x, y, z, gamma, a, b):
    """Vectorized running reward h without domain checks."""
    sigma = model.vol(t, x, b)
    return (
        -model.cost(t, x, a, b)
        - model.discount_rate(t, x, a, b) * y
        + sigma * model.drift(t, x, a) * z
        + 0.5 * sigma ** 2 * gamma
    )


def running_reward(model: ModelPrimitives, q: HamiltonianQuery, a: float, b: float) -> float:
    if not model.effort.contains(a, b):
        raise DomainError(f"action ({a}, {b}) outside the effort domain {model.effort}")
    return float(reward_array(model, q.t, q.x, q.y, q.z, q.gamma, a, b))


def maximizer(model: ModelPrimitives, q: HamiltonianQuery) -> Tuple[float, float]:
    """Argmax of the running reward; ties go to the smallest drift then vol action."""
    if model.closed_form is not None:
        a, b = model.closed_form.maximize(model, q.t, q.x, q.y, q.z, q.gamma)
        return float(a), float(b)
    return _grid_maximizer(model, q)


def hamiltonian(model: ModelPrimitives, q: HamiltonianQuery) -> float:
    a, b = maximizer(model, q)
    value = float(reward_array(model, q.t, q.x, q.y, q.z, q.gamma, a, b))
    if not np.isfinite(value) or value > OVERFLOW_GUARD:
        raise UnboundedError(f"Hamiltonian not finite at {q}")
    return value


def _grid_maximizer(model: ModelPrimitives, q: HamiltonianQuery) -> Tuple[float, float]:
    a_grid = model.effort.drift_grid()
    b_grid = model.effort.vol_grid()
    A, B = np.meshgrid(a_grid, b_grid, indexing="ij")
    with np.errstate(over="ignore", invalid="ignore"):
        values = reward_array(model, q.t, q.x, q.y, q.z, q.gamma, A, B)
    if not np.all(np.isfinite(values)) or np.max(values) > OVERFLOW_GUARD:
        raise UnboundedError(f"running reward exceeds the overflow guard at {q}")

    # argmax returns the first maximum: smallest drift index, then smallest vol index
    i, j = np.unravel_index(int(np.argmax(values)), values.shape)
    a_best, b_best, best = float(a_grid[i]), float(b_grid[j]), float(values[i, j])

    def reward_a(a):
        return float(reward_array(model, q.t, q.x, q.y, q.z, q.gamma, a, b_best))

    a_best, best = _refine(reward_a, a_grid, i, a_best, best)

    def reward_b(b):
        return float(reward_array(model, q.t, q.x, q.y, q.z, q.gamma, a_best, b))

    b_best, best = _refine(reward_b, b_grid, j, b_best, best)
    return a_best, b_best


def _refine(f: Callable, grid: np.ndarray, idx: int, x_best: float, f_best: float):
    """Bounded Brent/golden-section search on the cells around grid[idx]."""
    if len(grid) < 2:
        return x_best, f_best
    lo = grid[max(idx - 1, 0)]
    hi = grid[min(idx + 1, len(grid) - 1)]
    res = minimize_scalar(lambda v: -f(v), bounds=(lo, hi), method="bounded",
                          options={"xatol": REFINE_XATOL})
    candidate = -float(res.fun)
    if candidate > f_best + 1e-12 * max(1.0, abs(f_best)):
        return float(res.x), candidate
    return x_best, f_best


def grid_argmax_1d(f: Callable, bounds: Tuple[float, float], resolution: int = 201) -> Tuple[float, float]:
    """Maximize a vectorized scalar function over a closed interval.

    Returns (argmax, max). Used where no closed form is registered.
    """
    grid = _interval_grid(bounds, resolution, "action")
    with np.errstate(over="ignore", invalid="ignore"):
        values = np.asarray(f(grid), dtype=float)
    if not np.all(np.isfinite(values)) or np.max(values) > OVERFLOW_GUARD:
        raise UnboundedError(f"objective exceeds the overflow guard on {bounds}")
    i = int(np.argmax(values))
    return _refine(lambda v: float(f(np.asarray(v))), grid, i, float(grid[i]), float(values[i]))


# ============================================================================
# Vectorized helpers for path simulation
# ============================================================================

def maximizer_array(model: ModelPrimitives, t, x, y, z, gamma):
    """Elementwise maximizer over broadcast arrays."""
    if model.closed_form is not None:
        t, x, y, z, gamma = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (t, x, y, z, gamma)))
        return model.closed_form.maximize(model, t, x, y, z, gamma)
    shape = np.broadcast(t, x, y, z, gamma).shape
    a = np.empty(shape)
    b = np.empty(shape)
    for idx, (ti, xi, yi, zi, gi) in enumerate(np.broadcast(t, x, y, z, gamma)):
        a.flat[idx], b.flat[idx] = _grid_maximizer(model, HamiltonianQuery(ti, xi, yi, zi, gi))
    return a, b


def hamiltonian_array(model: ModelPrimitives, t, x, y, z, gamma):
    a, b = maximizer_array(model, t, x, y, z, gamma)
    return reward_array(model, t, x, y, z, gamma, a, b)
