"""
Revealing contracts.

A contract is parameterized by its initial promised value Y0, feedback
sensitivities (Z, Gamma), a payment rate and a termination rule. Along a
discretized output path the promised value follows the explicit Euler
recursion

    Y[i+1] = Y[i] + Z dX + Gamma dX^2 / 2 - (H(Y, Z, Gamma) + U(pi)) dt

and the terminal payment is U^-1(Y) at termination.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from pa_common import DomainError, GridError, NumericError, RangeError
from pa_model import HamiltonianQuery, ModelPrimitives, maximizer, reward_array

logger = logging.getLogger(__name__)

DEFAULT_MAX_DT = 1e-2


# ============================================================================
# Policies and termination rules
# ============================================================================

def constant_policy(value: float) -> Callable:
    """Feedback map (t, x, y) -> value."""
    def policy(t, x, y):
        return np.full(np.broadcast(t, x, y).shape, float(value))
    return policy


def constant_payment(value: float) -> Callable:
    def payment_rate(t, x):
        return np.full(np.broadcast(t, x).shape, float(value))
    return payment_rate


ZERO_POLICY = constant_policy(0.0)
NO_PAYMENT = constant_payment(0.0)


@dataclass(frozen=True)
class Termination:
    """Fixed horizon, first passage of Y below a level, or the earliest of both.

    `upper` adds an exit when Y rises to that level; `delay` stops a fixed
    time after the first passage below `level` instead of at it.
    """

    horizon: Optional[float] = None
    level: Optional[float] = None
    upper: Optional[float] = None
    delay: float = 0.0

    def __post_init__(self):
        if self.horizon is None and self.level is None:
            raise DomainError("termination needs a horizon, a level, or both")
        if self.horizon is not None and not self.horizon > 0:
            raise DomainError(f"horizon must be positive, got {self.horizon}")
        if self.delay < 0:
            raise DomainError(f"delay must be nonnegative, got {self.delay}")
        if self.delay > 0 and self.level is None:
            raise DomainError("a stopping delay needs a hitting level")
        if self.upper is not None and self.level is not None and self.upper <= self.level:
            raise DomainError("upper exit must lie above the hitting level")

    @property
    def kind(self) -> str:
        if self.level is None:
            return "fixed"
        if self.horizon is None:
            return "hitting"
        return "composite"

    def initial(self, y0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Stop flags and first-passage times at t = 0.

        A start at or below the level is a first passage at t = 0; the
        terminal value is Y0 itself since nothing has overshot yet.
        """
        y0 = np.asarray(y0, dtype=float)
        stop, first_hit, _ = self.advance(np.zeros(y0.shape), y0, np.full(y0.shape, np.inf))
        return stop, first_hit, y0.copy()

    def advance(self, t, y, first_hit):
        """Update first-passage times and return (stop, first_hit, terminal_y)."""
        t = np.asarray(t, dtype=float)
        y = np.asarray(y, dtype=float)
        terminal_y = y.copy()
        stop = np.zeros(y.shape, dtype=bool)
        if self.level is not None:
            newly = (y <= self.level) & np.isinf(first_hit)
            first_hit = np.where(newly, t, first_hit)
            if self.delay == 0:
                stop |= newly
                terminal_y = np.where(newly, self.level, terminal_y)
            else:
                stop |= t >= first_hit + self.delay - 1e-12
        if self.upper is not None:
            crossed = y >= self.upper
            stop |= crossed
            terminal_y = np.where(crossed, np.minimum(terminal_y, self.upper), terminal_y)
        if self.horizon is not None:
            stop |= t >= self.horizon - 1e-9
        return stop, first_hit, terminal_y


@dataclass(frozen=True)
class RevealingContract:
    y0: float
    z_policy: Callable
    termination: Termination
    gamma_policy: Callable = ZERO_POLICY
    payment_rate: Callable = NO_PAYMENT
    participation: float = -np.inf

    def __post_init__(self):
        if not np.isfinite(self.y0):
            raise DomainError(f"y0 must be finite, got {self.y0}")
        if self.y0 < self.participation:
            raise DomainError(
                f"y0 = {self.y0} is below the participation level R = {self.participation}",
                suggestion="Promise the agent at least the reservation value.",
            )


def make_contract(model: ModelPrimitives, y0: float, z_policy: Callable, termination: Termination,
                  gamma_policy: Callable = ZERO_POLICY, payment_rate: Callable = NO_PAYMENT) -> RevealingContract:
    """Build a contract whose participation check uses the model's R."""
    return RevealingContract(
        y0=y0,
        z_policy=z_policy,
        termination=termination,
        gamma_policy=gamma_policy,
        payment_rate=payment_rate,
        participation=model.participation,
    )


# ============================================================================
# Paths
# ============================================================================

@dataclass(frozen=True)
class DiscretizedPath:
    """Samples of (t, X, Y, discount) up to and including `stopped_at`.

    The step arrays (z, rate, cost, payment_utility, drift_part) hold the
    per-step quantities used by the Ito identity and have one entry fewer.
    """

    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    discount: np.ndarray
    stopped_at: int
    terminated: bool
    y_terminal: float
    z: np.ndarray
    rate: np.ndarray
    cost: np.ndarray
    payment_utility: np.ndarray
    drift_part: np.ndarray

    def check(self) -> None:
        n = len(self.times)
        if not (len(self.x) == len(self.y) == len(self.discount) == n == self.stopped_at + 1):
            raise GridError("path arrays have mismatched lengths")
        if np.any(self.discount <= 0):
            raise NumericError("discount factor must stay positive")
        dt = np.diff(self.times)
        expected = np.exp(-np.concatenate(([0.0], np.cumsum(self.rate * dt))))
        if np.max(np.abs(expected - self.discount)) > 1e-12:
            raise NumericError("discount samples disagree with their own rate increments")


def _check_grid(times: np.ndarray, max_dt: float) -> float:
    if times.ndim != 1 or len(times) < 2:
        raise GridError("time grid needs at least two points")
    steps = np.diff(times)
    dt = float(steps[0])
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-9 * max(1.0, dt):
        raise GridError("time grid must be uniform and increasing")
    if dt > max_dt:
        raise GridError(f"time step {dt} exceeds the configured bound {max_dt}")
    return dt


def propagate_y(contract: RevealingContract, times, x_path, model: ModelPrimitives,
                effort_policy: Optional[Callable] = None, max_dt: float = DEFAULT_MAX_DT) -> DiscretizedPath:
    """Run the promised-value recursion along an observed output path.

    The agent discount uses `effort_policy` when given, otherwise the
    Hamiltonian maximizer the contract reveals.
    """
    times = np.asarray(times, dtype=float)
    x_path = np.asarray(x_path, dtype=float)
    if x_path.shape != times.shape:
        raise GridError("x_path and times must have the same length")
    dt = _check_grid(times, max_dt)

    n = len(times)
    y = np.empty(n)
    disc = np.empty(n)
    steps = {key: np.empty(n - 1) for key in ("z", "rate", "cost", "payment_utility", "drift_part")}
    y[0], disc[0] = contract.y0, 1.0

    stop, first_hit, y_term = contract.termination.initial(contract.y0)
    last = 0
    terminated = bool(stop)
    y_terminal = float(y_term)
    i = 0
    while not terminated and i < n - 1:
        t, x, yi = times[i], x_path[i], y[i]
        z = float(contract.z_policy(t, x, yi))
        gamma = float(contract.gamma_policy(t, x, yi))
        pi = float(contract.payment_rate(t, x))
        q = HamiltonianQuery(t, x, yi, z, gamma)
        a_hat, b_hat = maximizer(model, q)
        h_max = float(reward_array(model, t, x, yi, z, gamma, a_hat, b_hat))
        a, b = (a_hat, b_hat) if effort_policy is None else map(float, effort_policy(t, x, yi))

        u_pi = float(model.agent_utility(pi))
        dx = x_path[i + 1] - x
        y_next = yi + z * dx + 0.5 * gamma * dx * dx - (h_max + u_pi) * dt
        if not np.isfinite(y_next):
            raise NumericError(f"promised value not finite at step {i}", step=i)

        k = float(model.discount_rate(t, x, a, b))
        steps["z"][i] = z
        steps["rate"][i] = k
        steps["cost"][i] = float(model.cost(t, x, a, b))
        steps["payment_utility"][i] = u_pi
        steps["drift_part"][i] = float(model.vol(t, x, b) * model.drift(t, x, a))
        y[i + 1] = y_next
        disc[i + 1] = disc[i] * np.exp(-k * dt)

        i += 1
        last = i
        stop, first_hit, y_term = contract.termination.advance(times[i], y_next, first_hit)
        terminated = bool(stop)
        y_terminal = float(y_term)

    if not terminated:
        logger.debug(f"path ended at t={times[last]} before the termination rule fired")
    return DiscretizedPath(
        times=times[: last + 1],
        x=x_path[: last + 1],
        y=y[: last + 1],
        discount=disc[: last + 1],
        stopped_at=last,
        terminated=terminated,
        y_terminal=y_terminal,
        **{key: arr[:last] for key, arr in steps.items()},
    )


def terminal_payment(y_terminal: float, model: ModelPrimitives) -> float:
    """xi = U^-1(Y_tau)."""
    lo, hi = model.utility_range
    if not (lo <= y_terminal <= hi):
        raise RangeError(f"terminal value {y_terminal} outside the range [{lo}, {hi}] of U")
    return float(model.agent_utility_inverse(y_terminal))


def hitting_time(path: DiscretizedPath, level: float) -> Optional[float]:
    """First time Y <= level, linearly interpolated; None if never hit."""
    below = np.nonzero(path.y <= level)[0]
    if len(below) == 0:
        return None
    i = int(below[0])
    if i == 0:
        return float(path.times[0])
    y_prev, y_hit = path.y[i - 1], path.y[i]
    frac = (y_prev - level) / (y_prev - y_hit)
    return float(path.times[i - 1] + frac * (path.times[i] - path.times[i - 1]))


def ito_residual(path: DiscretizedPath) -> np.ndarray:
    """K Y + sum K (U(pi) - c) dt - Y0 - sum K Z (dX - sigma*lambda*dt) along the path.

    Vanishes up to O(dt) when effort is the Hamiltonian maximizer and is
    nonincreasing otherwise.
    """
    dt = np.diff(path.times)
    k = path.discount[:-1]
    running = np.concatenate(([0.0], np.cumsum(k * (path.payment_utility - path.cost) * dt)))
    martingale = np.concatenate(([0.0], np.cumsum(k * path.z * (np.diff(path.x) - path.drift_part * dt))))
    return path.discount * path.y + running - path.y[0] - martingale
