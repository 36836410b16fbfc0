import math

import numpy as np
import pytest
from scipy.integrate import quad

from pa_common import ConstructionError, DomainError
from pa_hjb import (
    EuropeanExampleProblem,
    construct_un,
    gamma_half_cdf,
    gamma_half_isf,
    gamma_half_quantile,
    gamma_half_sf,
    limit_solution,
    second_difference,
    u0,
    u0_prime,
    value_and_control,
)

BETA = 0.25


@pytest.fixture(scope="module")
def problem():
    return EuropeanExampleProblem(BETA, n_max=32)


@pytest.fixture(scope="module")
def construction(problem):
    return limit_solution(problem)


# Gamma(1, 1/2) distribution

def test_cdf_at_zero():
    assert gamma_half_cdf(0.0) == 0.0


@pytest.mark.parametrize("t,expected", [(1.0, 0.8427007929), (4.0, 0.9953222650)])
def test_cdf_reference_values(t, expected):
    assert gamma_half_cdf(t) == pytest.approx(expected, abs=1e-9)


@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0, 4.0])
def test_cdf_against_quadrature(t):
    # substitute s = u^2 to remove the endpoint singularity of e^-s / sqrt(pi s)
    oracle, _ = quad(lambda u: 2.0 / math.sqrt(math.pi) * math.exp(-u * u), 0.0, math.sqrt(t),
                     epsabs=1e-14, epsrel=1e-14)
    assert gamma_half_cdf(t) == pytest.approx(oracle, abs=1e-9)


def test_cdf_monotone_and_bounded():
    t = np.linspace(0.0, 30.0, 3001)
    f = gamma_half_cdf(t)
    assert np.all(np.diff(f) >= 0)
    assert f[0] == 0.0 and np.all(f < 1.0 + 1e-15)


def test_quantile_inverts_cdf():
    t = np.linspace(0.01, 10.0, 400)
    assert np.allclose(gamma_half_quantile(gamma_half_cdf(t)), t, rtol=1e-8, atol=0)


def test_isf_inverts_sf():
    t = np.linspace(0.01, 30.0, 400)
    assert np.allclose(gamma_half_isf(gamma_half_sf(t)), t, rtol=1e-10, atol=0)


def test_distribution_domains():
    with pytest.raises(DomainError):
        gamma_half_cdf(-1.0)
    with pytest.raises(DomainError):
        gamma_half_quantile(1.0)
    with pytest.raises(DomainError):
        gamma_half_isf(0.0)


# Single member u_n

def test_matching_point_constants(problem):
    sol = construct_un(problem, math.exp(-3.0))
    assert sol.c_n == pytest.approx(math.log(3.0) - 2.0, abs=1e-12)
    expected = math.exp(-3.0) + 3.0 * math.exp(-2.0) * math.sqrt(math.pi) / 2.0 * math.erf(1.0)
    assert sol.s_n_prime == pytest.approx(expected, rel=1e-12)
    assert sol.s_n_prime == pytest.approx(0.3530, abs=5e-5)
    assert sol.u(sol.s_n_prime) == pytest.approx(3.0 * math.exp(-2.0), rel=1e-12)
    assert sol.u_prime(sol.s_n_prime) == 0.0


@pytest.mark.parametrize("s_n", [1.0 / 8, 1.0 / 16, math.exp(-3.0), 1.0 / 32])
def test_smooth_fit(problem, s_n):
    sol = construct_un(problem, s_n)
    s = s_n * (1.0 + 1e-12)
    assert sol.u(s) == pytest.approx(float(u0(s_n)), abs=1e-8)
    assert sol.u_prime(s) == pytest.approx(float(u0_prime(s_n)), abs=1e-8)


@pytest.mark.parametrize("s_n", [1.0 / 8, math.exp(-3.0), 1.0 / 32])
def test_ode_residual_in_continuation(problem, s_n):
    sol = construct_un(problem, s_n)
    width = sol.s_n_prime - sol.s_n
    s = np.linspace(sol.s_n + 0.1 * width, sol.s_n_prime - 0.1 * width, 25)
    residual = BETA * sol.u(s) + 1.0 / (2.0 * second_difference(sol.u, s))
    assert np.max(np.abs(residual)) < 1e-5


def test_first_integral(problem):
    sol = construct_un(problem, 1.0 / 16)
    width = sol.s_n_prime - sol.s_n
    s = np.linspace(sol.s_n + 0.05 * width, sol.s_n_prime - 0.05 * width, 25)
    h = 1e-6 * s
    slope = (sol.u(s + h) - sol.u(s - h)) / (2 * h)
    assert np.max(np.abs(BETA * slope ** 2 - (sol.c_n - np.log(sol.u(s))))) < 1e-6


def test_matching_point_outside_obstacle_region(problem):
    with pytest.raises(ConstructionError):
        construct_un(problem, 0.5)


def test_beta_outside_half_interval():
    with pytest.raises(DomainError, match=r"\(0, 1/2\)"):
        EuropeanExampleProblem(0.7)


# Limit construction

def test_s_star(problem):
    assert problem.s_star == pytest.approx(math.exp(-2.0))
    assert problem.s_star == pytest.approx(0.135335, abs=1e-6)
    assert problem.n_min == 8


def test_limit_dominates_obstacle(problem, construction):
    s = problem.s_grid
    assert np.all(construction.solution.u(s) >= u0(s) - 1e-12)


def test_members_monotone_in_n(problem):
    s = problem.s_grid
    previous = None
    for n in range(problem.n_min, problem.n_max + 1):
        values = construct_un(problem, 1.0 / n).u(s)
        if previous is not None:
            assert np.all(values >= previous - 1e-9)
        previous = values


def test_s_n_prime_strictly_increasing(construction):
    s_prime = [m[3] for m in construction.members]
    assert len(s_prime) == 32 - 8 + 1
    assert np.all(np.diff(s_prime) > 0)


def test_stop_region_inside_obstacle_region(problem, construction):
    for _, s_n, _, _ in construction.members:
        assert s_n <= problem.s_star


def test_construction_summary(construction):
    summary = construction.summary()
    assert summary["n"][0] == 8 and summary["n"][-1] == 32
    assert len(summary["increments"]) == len(summary["n"]) - 1
    assert len(summary["tail_gaps"]) == len(summary["n"])


def test_tail_gaps_shrink_to_last_member(construction):
    gaps = np.array(construction.tail_gaps)
    assert gaps[-1] == 0.0
    assert np.all(gaps[:-1] > 0.0)
    assert np.all(np.diff(gaps) <= 1e-9)


def test_tail_gaps_bound_consecutive_increments(construction):
    # u_32 - u_n >= u_(n+1) - u_n pointwise for an increasing sequence
    gaps = np.array(construction.tail_gaps)
    assert np.all(gaps[:-1] >= np.array(construction.increments) - 1e-8)


def test_n_max_too_small():
    with pytest.raises(ConstructionError):
        limit_solution(EuropeanExampleProblem(BETA, n_max=6))


# Value function and feedback

def test_value_above_obstacle(construction):
    sol = construction.solution
    y = np.linspace(-4.0, 3.0, 701)
    assert np.all(sol.v(y) >= -y - 1e-12)


def test_feedback_matches_closed_form(construction):
    control = value_and_control(construction.solution)
    assert control.feedback_residual < 1e-4
    assert np.all(control.z_table > 0)


def test_feedback_in_stop_region(construction):
    sol = construction.solution
    control = value_and_control(sol)
    assert control.z_hat(sol.y_boundary - 1.0) == 1.0
    assert sol.in_stop_region(sol.y_boundary - 1.0)
    assert not sol.in_stop_region(sol.y_boundary + 0.1)


def test_concavity_in_continuation(construction):
    sol = construction.solution
    y = np.linspace(sol.y_boundary + 0.05, sol.y_upper - 0.05, 50)
    v = lambda yy: sol.v(yy)
    h = 1e-4
    v1 = (v(y + h) - v(y - h)) / (2 * h)
    v2 = (v(y + h) - 2 * v(y) + v(y - h)) / h ** 2
    assert np.all(v1 + v2 < 0)
