from dataclasses import replace

import numpy as np
import pytest

from pa_builtins import american_sannikov, euro_quadratic, sannikov
from pa_common import DomainError, GridError, UnboundedError
from pa_hjb import EuropeanExampleProblem, construct_un
from pa_model import EffortDomain
from pa_obstacle import (
    PAYMENT_CAP,
    ObstacleGridProblem,
    boundary_sensitivity,
    european_recast,
    inner_effort_sup,
    inner_payment_inf,
    optimal_effort,
    optimal_payment,
    retirement_boundary_value,
    retirement_value,
    sannikov_problem,
    solve_obstacle_grid,
)


@pytest.fixture(scope="module")
def european_grid():
    problem = EuropeanExampleProblem(0.25)
    sol = construct_un(problem, 1.0 / 5000)
    grid = european_recast(sol, euro_quadratic(a_max=50.0), y_max=3.5, n_points=3501)
    return sol, grid, solve_obstacle_grid(grid)


@pytest.fixture(scope="module")
def sannikov_pair():
    model = sannikov()
    euro = solve_obstacle_grid(sannikov_problem(model, y_max=10.0, n_points=1001))
    amer = solve_obstacle_grid(sannikov_problem(american_sannikov(), y_max=10.0, n_points=1001, american=True))
    return euro, amer


# Inner problems

@pytest.mark.parametrize("p,expected,pi", [(-2.0, -1.0, 1.0), (-1.0, -0.25, 0.25)])
def test_payment_inf_sqrt(sannikov_model, p, expected, pi):
    assert inner_payment_inf(p, sannikov_model) == pytest.approx(expected)
    assert optimal_payment(p, sannikov_model) == pytest.approx(pi)


def test_payment_inf_identity(sannikov_model):
    p = np.linspace(-5.0, -0.1, 50)
    assert np.allclose(inner_payment_inf(p, sannikov_model), -p ** 2 / 4, atol=1e-12)


def test_payment_inf_grid_fallback(sannikov_model):
    model = replace(sannikov_model, utility_derivative_inverse=None)
    assert inner_payment_inf(-2.0, model) == pytest.approx(-1.0, abs=1e-8)


def test_payment_inf_needs_negative_slope(sannikov_model):
    with pytest.raises(DomainError):
        inner_payment_inf(0.5, sannikov_model)


def test_optimal_payment_zero_when_not_paying(sannikov_model):
    assert np.all(optimal_payment(np.array([0.0, 1.0]), sannikov_model) == 0.0)
    assert optimal_payment(-2.0, euro_quadratic()) == 0.0


def test_effort_sup_quadratic(sannikov_model):
    assert inner_effort_sup(-1.0, -1.0, sannikov_model) == pytest.approx(0.25)
    assert optimal_effort(-1.0, -1.0, sannikov_model) == pytest.approx(0.5)


def test_effort_sup_single_action(sannikov_model):
    model = replace(sannikov_model, effort=EffortDomain(drift_actions=(0.0, 0.0)))
    assert inner_effort_sup(-1.0, -1.0, model) == 0.0


def test_effort_sup_unbounded():
    with pytest.raises(UnboundedError):
        inner_effort_sup(-0.25, 0.5, euro_quadratic())


def test_effort_sup_bounded_endpoint():
    # convex objective on [-1, 1]: the larger endpoint value wins
    assert optimal_effort(-0.25, 0.5, euro_quadratic(a_max=1.0)) == 1.0


def test_effort_sup_grid_matches_closed_form():
    closed = sannikov()
    grid = sannikov(closed_form=False)
    rng = np.random.default_rng(1)
    for p, q in zip(rng.uniform(-3, -0.2, 10), rng.uniform(-3, 0.0, 10)):
        assert inner_effort_sup(p, q, grid) == pytest.approx(inner_effort_sup(p, q, closed), abs=1e-8)


# European recast against the constructed solution

def test_recast_matches_construction(european_grid):
    sol, _, grid_sol = european_grid
    mask = (grid_sol.y >= 0.1) & (grid_sol.y <= 3.0)
    assert np.max(np.abs(grid_sol.v[mask] - sol.v(grid_sol.y[mask]))) <= 2e-3


def test_recast_complementarity(european_grid):
    _, _, grid_sol = european_grid
    assert grid_sol.residual <= 1e-6


def test_recast_dirichlet_nodes(european_grid):
    sol, problem, grid_sol = european_grid
    assert grid_sol.v[0] == problem.left_value == float(sol.v(0.0))
    assert grid_sol.v[-1] == pytest.approx(float(sol.v(3.5)), abs=1e-12)


# Sannikov economy

def test_sannikov_left_node_exact(sannikov_pair):
    euro, amer = sannikov_pair
    assert euro.v[0] == 0.0
    assert amer.v[0] == 0.0


def test_sannikov_complementarity(sannikov_pair):
    euro, amer = sannikov_pair
    assert euro.residual <= 1e-6
    assert amer.residual <= 1e-6


def test_sannikov_above_obstacle(sannikov_pair):
    euro, _ = sannikov_pair
    assert np.all(euro.v >= -euro.y ** 2 - 1e-8)


def test_european_dominates_american(sannikov_pair):
    euro, amer = sannikov_pair
    assert np.all(euro.v >= amer.v - 1e-6)


def test_payments_respect_cap(sannikov_pair):
    euro, _ = sannikov_pair
    assert np.all(euro.payment >= 0.0)
    assert np.all(euro.payment <= PAYMENT_CAP)
    assert np.all((euro.effort >= 0.0) & (euro.effort <= 1.0))


def test_solution_tables_align(sannikov_pair):
    euro, _ = sannikov_pair
    n = len(euro.y)
    for column in (euro.v, euro.v_prime, euro.z_hat, euro.effort, euro.payment, euro.stop):
        assert len(column) == n
    assert euro.summary()["n_points"] == n


def test_psor_agrees_with_policy_iteration():
    model = sannikov()
    policy = solve_obstacle_grid(sannikov_problem(model, y_max=4.0, n_points=201))
    psor = solve_obstacle_grid(sannikov_problem(model, y_max=4.0, n_points=201, method="psor", omega=1.8))
    assert psor.method == "psor"
    assert psor.residual <= 1e-6
    assert np.max(np.abs(policy.v - psor.v)) < 1e-4


def test_grid_refinement_converges():
    model = sannikov()
    solutions = [solve_obstacle_grid(sannikov_problem(model, y_max=4.0, n_points=n)) for n in (201, 401, 801)]
    for sol in solutions:
        assert np.all(sol.v >= -sol.y ** 2)
    coarse, mid, fine = (sol.v[:: 2 ** k] for k, sol in enumerate(solutions))
    gap_coarse = float(np.max(np.abs(coarse - mid)))
    gap_fine = float(np.max(np.abs(mid - fine)))
    assert gap_fine < gap_coarse
    assert gap_coarse <= 10 * 4.0 / 200


# Right boundary

def test_retirement_value_sqrt_utility(sannikov_model):
    y = np.linspace(0.0, 10.0, 11)
    assert np.allclose(retirement_value(sannikov_model, 0.1, y), -0.1 * y ** 2, atol=1e-12)


def test_retirement_boundary_value(sannikov_model):
    # v' = -2, v'' = -0.2: effort 1/2.2 and J = 0.5/2.2
    expected = -10.0 + 0.5 / 2.2 / 0.1
    assert retirement_boundary_value(sannikov_model, 0.1, 10.0) == pytest.approx(expected, abs=1e-8)


def test_right_node_carries_retirement_value(sannikov_pair):
    euro, _ = sannikov_pair
    assert euro.v[-1] == retirement_boundary_value(sannikov(), 0.1, 10.0)


def test_numeric_right_boundary():
    problem = sannikov_problem(sannikov(), y_max=4.0, n_points=201, right_boundary=-1.0)
    sol = solve_obstacle_grid(problem)
    assert sol.v[-1] == -1.0


def test_right_boundary_validation():
    with pytest.raises(DomainError):
        sannikov_problem(sannikov(), right_boundary="linear")
    with pytest.raises(DomainError):
        ObstacleGridProblem(model=euro_quadratic(a_max=5.0), y_max=3.0, n_points=301)
    with pytest.raises(DomainError):
        # below the obstacle -U^-1(4) = -16
        sannikov_problem(sannikov(), y_max=4.0, n_points=201, right_boundary=-20.0)


def test_boundary_sensitivity_is_reported():
    problem = sannikov_problem(american_sannikov(), y_max=4.0, n_points=201, american=True)
    gap = boundary_sensitivity(problem, factor=1.5)
    assert np.isfinite(gap) and gap >= 0.0


def test_grid_validation():
    with pytest.raises(GridError):
        sannikov_problem(sannikov(), n_points=50)
    with pytest.raises(DomainError):
        sannikov_problem(sannikov(), method="multigrid")
    with pytest.raises(DomainError):
        sannikov_problem(sannikov(), payment_cap=0.0)


def test_optimal_payment_capped(sannikov_model):
    # uncapped minimizer at p = -100 is 2500
    assert optimal_payment(-100.0, sannikov_model) == PAYMENT_CAP
    assert optimal_payment(-100.0, sannikov_model, cap=7.0) == 7.0
