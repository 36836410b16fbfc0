"""
Constructive free-boundary solution for the risk-neutral quadratic economy.

The principal's reduced problem min{v + y, beta*v - sup_z(z^2 (v'+v'')/2 + z)} = 0
becomes, under s = e^y and u(s) = s v(ln s), the obstacle problem

    min{u - u0, beta*u + 1/(2 u'')} = 0,    u0(s) = -s ln s.

For every matching point s_n in the obstacle region the ODE has an explicit
solution through the Gamma(1, 1/2) distribution function F(t) = erf(sqrt t):

    c_n   = beta * u0'(s_n)^2 + ln u0(s_n)
    s_n'  = s_n + e^{c_n} sqrt(beta*pi) F(beta * u0'(s_n)^2)
    ln u  = c_n - F^-1(F(beta * u0'(s_n)^2) - (s - s_n) / (e^{c_n} sqrt(beta*pi)))

and u is extended by the obstacle on (0, s_n] and by the constant e^{c_n}
beyond s_n'.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import special

from pa_common import (
    ConcavityError,
    ConstructionError,
    DomainError,
    InvariantViolationError,
    NumericError,
)

logger = logging.getLogger(__name__)

QUANTILE_NEWTON_STEPS = 3
QUANTILE_TOLERANCE = 1e-12
MONOTONE_TOLERANCE = 1e-9
FD_REL_STEP = 1e-4


# ============================================================================
# Gamma(1, 1/2) distribution
# ============================================================================

def _density(t):
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(t > 0, np.exp(-t) / np.sqrt(np.pi * np.where(t > 0, t, 1.0)), np.inf)


def gamma_half_cdf(t):
    """F(t) = int_0^t e^-s / sqrt(pi s) ds = erf(sqrt t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("gamma_half_cdf needs t >= 0")
    out = special.erf(np.sqrt(t))
    return float(out) if out.ndim == 0 else out


def gamma_half_sf(t):
    """1 - F(t), accurate in the upper tail."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(np.isnan(t)):
        raise DomainError("gamma_half_sf needs t >= 0")
    out = special.erfc(np.sqrt(t))
    return float(out) if out.ndim == 0 else out


def _newton_on_half_line(t, residual: Callable, slope: Callable):
    """Newton steps kept inside the bracket [0, inf)."""
    for _ in range(QUANTILE_NEWTON_STEPS):
        dens = slope(t)
        with np.errstate(invalid="ignore", divide="ignore"):
            step = np.where(np.isfinite(dens) & (dens != 0), residual(t) / dens, 0.0)
        t = np.maximum(t - step, 0.0)
    return t


def gamma_half_quantile(p):
    """Inverse of gamma_half_cdf on [0, 1)."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0) | (p >= 1)) or np.any(np.isnan(p)):
        raise DomainError("gamma_half_quantile needs p in [0, 1)")
    t = special.erfinv(p) ** 2
    t = _newton_on_half_line(t, lambda s: special.erf(np.sqrt(s)) - p, _density)
    if np.max(np.abs(special.erf(np.sqrt(t)) - p), initial=0.0) > QUANTILE_TOLERANCE:
        raise NumericError("gamma_half_quantile did not converge")
    return float(t) if t.ndim == 0 else t


def gamma_half_isf(q):
    """Inverse of gamma_half_sf on (0, 1]."""
    q = np.asarray(q, dtype=float)
    if np.any((q <= 0) | (q > 1)) or np.any(np.isnan(q)):
        raise DomainError("gamma_half_isf needs q in (0, 1]")
    t = special.erfcinv(q) ** 2
    t = _newton_on_half_line(t, lambda s: special.erfc(np.sqrt(s)) - q, lambda s: -_density(s))
    scale = np.maximum(q, np.finfo(float).tiny)
    if np.max(np.abs(special.erfc(np.sqrt(t)) - q) / scale, initial=0.0) > QUANTILE_TOLERANCE:
        raise NumericError("gamma_half_isf did not converge")
    return float(t) if t.ndim == 0 else t


# ============================================================================
# Problem and solution types
# ============================================================================

def u0(s):
    s = np.asarray(s, dtype=float)
    return -s * np.log(s)


def u0_prime(s):
    return -np.log(np.asarray(s, dtype=float)) - 1.0


@dataclass(frozen=True)
class EuropeanExampleProblem:
    discount_beta: float
    n_max: int = 32
    s_max: float = 20.0
    s_points: int = 400

    def __post_init__(self):
        if not 0.0 < self.discount_beta < 0.5:
            raise DomainError(
                f"discount_beta must lie in (0, 1/2) for smooth fit, got {self.discount_beta}",
                suggestion="Pick beta in (0, 0.5); the construction needs u0'(s*) = 1/(2 beta) - 1 > 0.",
            )
        if self.n_max < 4:
            raise DomainError(f"n_max must be >= 4, got {self.n_max}")
        if self.s_points < 2 or not self.s_max > 1.0 / self.n_max:
            raise DomainError("s grid needs s_points >= 2 and s_max > 1/n_max")

    @property
    def s_star(self) -> float:
        """Right edge of the obstacle region, e^{-1/(2 beta)}."""
        return math.exp(-1.0 / (2.0 * self.discount_beta))

    @property
    def n_min(self) -> int:
        n = math.ceil(1.0 / self.s_star)
        return n if 1.0 / n <= self.s_star else n + 1

    @property
    def s_grid(self) -> np.ndarray:
        return np.geomspace(1.0 / self.n_max, self.s_max, self.s_points)


@dataclass(frozen=True)
class FreeBoundarySolution:
    beta: float
    s_n: float
    c_n: float
    s_n_prime: float
    n: int = 0

    @property
    def t0(self) -> float:
        return self.beta * float(u0_prime(self.s_n)) ** 2

    @property
    def scale(self) -> float:
        return math.exp(self.c_n) * math.sqrt(self.beta * math.pi)

    @property
    def y_boundary(self) -> float:
        """Stop region is y <= ln s_n."""
        return math.log(self.s_n)

    @property
    def y_upper(self) -> float:
        return math.log(self.s_n_prime)

    def _q(self, s):
        tail = gamma_half_sf(self.t0) + (s - self.s_n) / self.scale
        return gamma_half_isf(np.clip(tail, np.finfo(float).tiny, 1.0))

    def u(self, s):
        shape = np.shape(s)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.full(s.shape, math.exp(self.c_n))
        left = s <= self.s_n
        mid = ~left & (s < self.s_n_prime)
        out[left] = u0(s[left])
        if np.any(mid):
            out[mid] = np.exp(self.c_n - self._q(s[mid]))
        return float(out[0]) if shape == () else out.reshape(shape)

    def u_prime(self, s):
        """u' from the first integral beta u'^2 = c_n - ln u."""
        shape = np.shape(s)
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.zeros(s.shape)
        left = s <= self.s_n
        mid = ~left & (s < self.s_n_prime)
        out[left] = u0_prime(s[left])
        if np.any(mid):
            out[mid] = np.sqrt(self._q(s[mid]) / self.beta)
        return float(out[0]) if shape == () else out.reshape(shape)

    def v(self, y):
        y = np.asarray(y, dtype=float)
        return np.exp(-y) * self.u(np.exp(y))

    def in_stop_region(self, y):
        return np.asarray(y, dtype=float) <= self.y_boundary


@dataclass(frozen=True)
class LimitConstruction:
    """Members u_{1/n} for n = n_min..n_max with their convergence diagnostics.

    `increments` are consecutive gaps max |u_n - u_(n-1)| on the s grid and
    include the constant extension e^{c_n}, whose steps grow with n.
    `tail_gaps` are max (u_{n_max} - u_n) on the same grid and must be
    nonincreasing in n.
    """

    solution: FreeBoundarySolution
    members: Tuple[Tuple[int, float, float, float], ...]
    increments: Tuple[float, ...]
    increments_decreasing: bool
    tail_gaps: Tuple[float, ...] = ()

    def summary(self) -> dict:
        return {
            "n": [m[0] for m in self.members],
            "s_n": [m[1] for m in self.members],
            "c_n": [m[2] for m in self.members],
            "s_n_prime": [m[3] for m in self.members],
            "increments": list(self.increments),
            "increments_decreasing": self.increments_decreasing,
            "tail_gaps": list(self.tail_gaps),
        }


@dataclass(frozen=True)
class ValueControl:
    v: Callable
    z_hat: Callable
    y_table: np.ndarray
    z_table: np.ndarray
    continuation: Tuple[float, float]
    feedback_residual: float


# ============================================================================
# Construction
# ============================================================================

def construct_un(problem: EuropeanExampleProblem, s_n: float, n: int = 0) -> FreeBoundarySolution:
    beta = problem.discount_beta
    s_star = problem.s_star
    if not 0.0 < s_n <= s_star * (1.0 + 1e-15):
        raise ConstructionError(f"matching point s_n = {s_n} must lie in (0, s*] with s* = {s_star:.6g}")
    if s_n >= 1.0:
        raise ConstructionError("u0 must be positive at the matching point")
    t0 = beta * float(u0_prime(s_n)) ** 2
    c_n = t0 + math.log(float(u0(s_n)))
    s_n_prime = s_n + math.exp(c_n) * math.sqrt(beta * math.pi) * gamma_half_cdf(t0)
    logger.debug(f"constructed u_n: s_n={s_n:.6g} c_n={c_n:.6g} s_n'={s_n_prime:.6g}")
    return FreeBoundarySolution(beta=beta, s_n=s_n, c_n=c_n, s_n_prime=s_n_prime, n=n)


def limit_solution(problem: EuropeanExampleProblem) -> LimitConstruction:
    """Build u_{1/n} for n = n_min..n_max and report how the sequence settles on the s grid.

    Raises InvariantViolationError if the sequence stops increasing in n or
    the tail gaps to the last member are not nonincreasing.
    """
    n_min = problem.n_min
    if problem.n_max <= n_min:
        raise ConstructionError(
            f"n_max = {problem.n_max} leaves no members with 1/n <= s*; need n_max > {n_min}"
        )
    grid = problem.s_grid
    members = []
    increments = []
    history = []
    solution = None
    for n in range(n_min, problem.n_max + 1):
        solution = construct_un(problem, 1.0 / n, n=n)
        values = solution.u(grid)
        if history:
            previous = history[-1]
            drop = previous - values
            if np.max(drop) > MONOTONE_TOLERANCE * max(1.0, float(np.max(np.abs(values)))):
                raise InvariantViolationError(f"sequence u_n decreased between n={n - 1} and n={n}")
            increments.append(float(np.max(np.abs(values - previous))))
        members.append((n, solution.s_n, solution.c_n, solution.s_n_prime))
        history.append(values)

    last = history[-1]
    tail_gaps = tuple(float(np.max(last - values)) for values in history)
    slack = MONOTONE_TOLERANCE * max(1.0, float(np.max(np.abs(last))))
    if np.any(np.diff(tail_gaps) > slack):
        n_bad = members[int(np.argmax(np.diff(tail_gaps))) + 1][0]
        raise InvariantViolationError(f"gap to u_{problem.n_max} grows at n={n_bad}", tail_gaps=tail_gaps)

    decreasing = bool(np.all(np.diff(increments) < 0)) if len(increments) > 1 else True
    if not decreasing:
        logger.info("consecutive increments grow with n (constant extension e^{c_n} inside the s grid)")
    logger.debug(f"tail gaps to u_{problem.n_max}: {tail_gaps[0]:.3e} .. {tail_gaps[-2]:.3e}")
    return LimitConstruction(
        solution=solution,
        members=tuple(members),
        increments=tuple(increments),
        increments_decreasing=decreasing,
        tail_gaps=tail_gaps,
    )


def second_difference(f: Callable, s, rel_step: float = FD_REL_STEP):
    s = np.asarray(s, dtype=float)
    h = rel_step * s
    return (f(s + h) - 2.0 * f(s) + f(s - h)) / h ** 2


def value_and_control(sol: FreeBoundarySolution, y_points: int = 2001) -> ValueControl:
    """Value v(y) = e^-y u(e^y) and feedback z(y) = -1/(e^y u''(e^y)).

    The feedback is tabulated on the continuation region from central
    differences of u and compared against 2*beta*v(y).
    """
    lo, hi = sol.y_boundary, sol.y_upper
    margin = 1e-3 * (hi - lo)
    y_table = np.linspace(lo + margin, hi - margin, y_points)
    s = np.exp(y_table)
    u_second = second_difference(sol.u, s)
    if np.any(u_second >= 0):
        worst = float(y_table[np.argmax(u_second)])
        raise ConcavityError(f"u'' >= 0 in the continuation region near y = {worst:.6g}")
    z_table = -1.0 / (s * u_second)
    residual = float(np.max(np.abs(z_table - 2.0 * sol.beta * sol.v(y_table))))
    logger.info(f"feedback residual |z - 2 beta v| = {residual:.3e} on {y_points} points")

    def z_hat(y):
        y = np.asarray(y, dtype=float)
        inside = np.interp(y, y_table, z_table)
        # stop region: v = -y gives v' + v'' = -1
        return np.where(y <= lo, 1.0, inside)

    return ValueControl(
        v=sol.v,
        z_hat=z_hat,
        y_table=y_table,
        z_table=z_table,
        continuation=(lo, hi),
        feedback_residual=residual,
    )
