import numpy as np
import pytest

from pa_builtins import euro_quadratic, sannikov
from pa_common import DomainError, GridError, RangeError
from pa_contract import (
    Termination,
    constant_payment,
    constant_policy,
    hitting_time,
    ito_residual,
    make_contract,
    propagate_y,
    terminal_payment,
)
from pa_montecarlo import constant_effort


def fixed_contract(model, y0=1.0, z=1.0, horizon=2.0, payment=0.0):
    return make_contract(model, y0, constant_policy(z), Termination(horizon=horizon),
                         payment_rate=constant_payment(payment))


def brownian_path(times, seed=0, drift=0.0):
    rng = np.random.default_rng(seed)
    dt = times[1] - times[0]
    steps = drift * dt + np.sqrt(dt) * rng.standard_normal(len(times) - 1)
    return np.concatenate(([0.0], np.cumsum(steps)))


# Promised-value recursion

def test_flat_path_linear_decay(euro_model):
    times = np.linspace(0.0, 2.0, 2001)
    path = propagate_y(fixed_contract(euro_model), times, np.zeros_like(times), euro_model)
    assert path.terminated
    assert path.stopped_at == 2000
    assert path.y[-1] == pytest.approx(0.0, abs=1e-9)
    assert path.y[1000] == pytest.approx(0.5, abs=1e-9)


def test_zero_sensitivity_freezes_value(euro_model):
    times = np.linspace(0.0, 1.0, 1001)
    path = propagate_y(fixed_contract(euro_model, y0=0.7, z=0.0, horizon=1.0), times, brownian_path(times), euro_model)
    assert np.all(path.y == 0.7)


def test_euler_step_refinement(euro_model):
    coarse = np.linspace(0.0, 0.2, 201)
    fine = np.linspace(0.0, 0.2, 20001)
    contract = fixed_contract(euro_model, horizon=0.2)
    y_coarse = propagate_y(contract, coarse, np.sin(2 * np.pi * coarse), euro_model).y[-1]
    y_fine = propagate_y(contract, fine, np.sin(2 * np.pi * fine), euro_model).y[-1]
    assert y_coarse == pytest.approx(y_fine, abs=5e-3)


def test_payment_lowers_promised_value(euro_model):
    times = np.linspace(0.0, 1.0, 101)
    path = propagate_y(fixed_contract(euro_model, z=0.0, horizon=1.0, payment=0.3), times, np.zeros_like(times), euro_model)
    assert path.y[-1] == pytest.approx(1.0 - 0.3, abs=1e-12)


def test_path_consistency(sannikov_model):
    times = np.linspace(0.0, 1.0, 1001)
    path = propagate_y(fixed_contract(sannikov_model, z=0.5, horizon=1.0), times, brownian_path(times, 3), sannikov_model)
    path.check()
    assert len(path.z) == path.stopped_at


def test_grid_checks(euro_model):
    contract = fixed_contract(euro_model)
    with pytest.raises(GridError):
        propagate_y(contract, np.array([0.0, 0.001, 0.003]), np.zeros(3), euro_model)
    with pytest.raises(GridError):
        propagate_y(contract, np.linspace(0.0, 1.0, 11), np.zeros(11), euro_model)
    with pytest.raises(GridError):
        propagate_y(contract, np.linspace(0.0, 1.0, 101), np.zeros(5), euro_model)


def test_hitting_level_stops_and_clamps(euro_model):
    times = np.linspace(0.0, 3.0, 3001)
    contract = make_contract(euro_model, 1.0, constant_policy(1.0), Termination(level=0.0))
    path = propagate_y(contract, times, np.zeros_like(times), euro_model)
    assert path.terminated
    assert path.y_terminal == 0.0
    assert path.times[-1] == pytest.approx(2.0, abs=2e-3)


# Terminal payment

def test_terminal_payment_identity(euro_model):
    assert terminal_payment(3.7, euro_model) == 3.7


def test_terminal_payment_sqrt(sannikov_model):
    assert terminal_payment(2.0, sannikov_model) == pytest.approx(4.0)
    with pytest.raises(RangeError):
        terminal_payment(-1.0, sannikov_model)


# Hitting times

def test_hitting_time_immediate(euro_model):
    times = np.linspace(0.0, 1.0, 101)
    contract = fixed_contract(euro_model, y0=0.0, horizon=1.0)
    path = propagate_y(contract, times, np.zeros_like(times), euro_model)
    assert hitting_time(path, 0.0) == 0.0


def test_hitting_time_linear_decay(euro_model):
    times = np.linspace(0.0, 3.0, 3001)
    path = propagate_y(fixed_contract(euro_model, horizon=3.0), times, np.zeros_like(times), euro_model)
    assert hitting_time(path, 0.0) == pytest.approx(2.0, abs=1e-3)


def test_hitting_time_monotone_in_level(euro_model):
    times = np.linspace(0.0, 1.0, 1001)
    path = propagate_y(fixed_contract(euro_model, horizon=1.0), times, brownian_path(times, 5), euro_model)
    levels = np.linspace(path.y.min(), path.y[0], 25)
    hits = [hitting_time(path, level) for level in levels]
    assert all(h is not None for h in hits)
    # higher levels are reached first
    assert np.all(np.diff(hits) <= 0.0)
    assert hits[-1] == 0.0


def test_hitting_time_never(euro_model):
    times = np.linspace(0.0, 1.0, 101)
    path = propagate_y(fixed_contract(euro_model, horizon=1.0), times, 5.0 * times, euro_model)
    assert np.all(np.diff(path.y) > 0)
    assert hitting_time(path, path.y[0] - 1.0) is None


# Discrete Ito identity

def test_ito_residual_vanishes_without_discounting(euro_model):
    times = np.linspace(0.0, 1.0, 1001)
    path = propagate_y(fixed_contract(euro_model, horizon=1.0), times, brownian_path(times, 1, drift=1.0), euro_model)
    assert np.max(np.abs(ito_residual(path))) < 1e-10


def test_ito_residual_small_with_discounting(sannikov_model):
    times = np.linspace(0.0, 1.0, 1001)
    contract = fixed_contract(sannikov_model, y0=2.0, z=0.5, horizon=1.0, payment=0.25)
    path = propagate_y(contract, times, brownian_path(times, 2, drift=0.5), sannikov_model)
    assert np.max(np.abs(ito_residual(path))) < 1e-2


def test_ito_residual_nonincreasing_off_maximizer(euro_model):
    times = np.linspace(0.0, 1.0, 1001)
    path = propagate_y(fixed_contract(euro_model, horizon=1.0), times, brownian_path(times, 4),
                       euro_model, effort_policy=constant_effort(0.0))
    res = ito_residual(path)
    assert np.all(np.diff(res) <= 1e-12)
    assert res[-1] == pytest.approx(-0.5, abs=1e-9)


# Contract construction

def test_participation_enforced():
    model = euro_quadratic(participation=1.0)
    with pytest.raises(DomainError):
        make_contract(model, 0.5, constant_policy(1.0), Termination(horizon=1.0))


@pytest.mark.parametrize("kwargs", [{}, {"horizon": -1.0}, {"horizon": 1.0, "delay": 0.5}, {"level": 1.0, "upper": 0.5}])
def test_termination_validation(kwargs):
    with pytest.raises(DomainError):
        Termination(**kwargs)


def test_termination_kind():
    assert Termination(horizon=1.0).kind == "fixed"
    assert Termination(level=0.0).kind == "hitting"
    assert Termination(horizon=1.0, level=0.0).kind == "composite"


def test_start_on_or_below_level_stops_at_once():
    stop, first_hit, y_term = Termination(level=0.0).initial(np.array([-0.5, 0.0, 0.5]))
    assert stop.tolist() == [True, True, False]
    assert first_hit[:2].tolist() == [0.0, 0.0]
    assert np.isinf(first_hit[2])
    assert y_term[:2].tolist() == [-0.5, 0.0]


def test_start_below_level_with_delay_waits():
    stop, first_hit, _ = Termination(level=0.0, delay=0.5).initial(np.array([-0.5]))
    assert not stop[0]
    assert first_hit[0] == 0.0


def test_propagation_on_the_level_stops_at_time_zero(euro_model):
    times = np.linspace(0.0, 1.0, 101)
    contract = make_contract(euro_model, 0.0, constant_policy(1.0), Termination(level=0.0))
    path = propagate_y(contract, times, brownian_path(times, 3), euro_model)
    assert path.terminated
    assert path.stopped_at == 0
    assert path.y_terminal == 0.0


def test_sannikov_absorbs_at_zero():
    model = sannikov()
    times = np.linspace(0.0, 1.0, 101)
    contract = make_contract(model, 0.1, constant_policy(0.5), Termination(horizon=1.0, level=0.0))
    path = propagate_y(contract, times, -3.0 * times, model)
    assert path.terminated
    assert path.y_terminal == 0.0
    assert terminal_payment(path.y_terminal, model) == 0.0
