"""
Builtin model registry.

The CLI selects economies by name; each factory accepts a small set of
parameter overrides.
"""

import logging
from dataclasses import replace
from typing import Callable, Dict

import numpy as np

from pa_common import ConfigError
from pa_model import EffortDomain, ModelPrimitives, QuadraticEffort

logger = logging.getLogger(__name__)


def _zeros(*args):
    return np.zeros(np.broadcast(*args).shape)


def _ones(*args):
    return np.ones(np.broadcast(*args).shape)


def _drift_a(t, x, a):
    return np.asarray(a, dtype=float) * _ones(t, x)


def _vol_one(t, x, b):
    return _ones(t, x, b)


def _quadratic_cost(t, x, a, b):
    return 0.5 * np.asarray(a, dtype=float) ** 2 * _ones(t, x, b)


def _sqrt_inverse(y):
    return np.asarray(y, dtype=float) ** 2


def _sqrt_marginal_inverse(y):
    # U'(p) = 1/(2 sqrt(p)) = y  =>  p = 1/(4 y^2)
    return 0.25 / np.asarray(y, dtype=float) ** 2


def _constant_rate(rate: float) -> Callable:
    def discount_rate(t, x, a, b):
        return rate * _ones(t, x, a, b)
    return discount_rate


def _principal_rate(rate: float) -> Callable:
    def principal_discount_rate(t, x):
        return rate * _ones(t, x)
    return principal_discount_rate


def euro_quadratic(beta: float = 0.25, a_max: float = np.inf, participation: float = 0.0,
                   retirement: float = None) -> ModelPrimitives:
    """Risk-neutral agent, quadratic cost, no agent discounting, principal discount beta.

    The principal collects the discounted output flow; with a_max = inf the
    effort set is the whole real line.
    """
    return ModelPrimitives(
        name="euro_quadratic",
        drift=_drift_a,
        vol=_vol_one,
        cost=_quadratic_cost,
        discount_rate=_constant_rate(0.0),
        agent_utility=lambda v: np.asarray(v, dtype=float),
        agent_utility_inverse=lambda v: np.asarray(v, dtype=float),
        principal_discount_rate=_principal_rate(beta),
        participation=participation,
        effort=EffortDomain(drift_actions=(-a_max, a_max)),
        closed_form=QuadraticEffort(),
        retirement=retirement,
        payments=False,
        discounted_output=True,
        bounds={"vol_bound": 1.0, "discount_bound": 0.0},
    )


def sannikov(rate: float = 0.1, a_max: float = 1.0, participation: float = 0.0,
             closed_form: bool = True) -> ModelPrimitives:
    """Square-root utility agent, quadratic cost, common discount rate r."""
    return ModelPrimitives(
        name="sannikov",
        drift=_drift_a,
        vol=_vol_one,
        cost=_quadratic_cost,
        discount_rate=_constant_rate(rate),
        agent_utility=lambda v: np.sqrt(np.asarray(v, dtype=float)),
        agent_utility_inverse=_sqrt_inverse,
        principal_discount_rate=_principal_rate(rate),
        participation=participation,
        effort=EffortDomain(drift_actions=(0.0, a_max)),
        closed_form=QuadraticEffort() if closed_form else None,
        utility_range=(0.0, np.inf),
        utility_derivative_inverse=_sqrt_marginal_inverse,
        discounted_output=True,
        bounds={"drift_bound": a_max, "vol_bound": 1.0, "discount_bound": rate},
    )


def american_sannikov(rate: float = 0.1, a_max: float = 1.0, participation: float = 0.0) -> ModelPrimitives:
    """Same economy as sannikov; the agent may retire at U(rho) = U(0)/r = 0."""
    return replace(sannikov(rate=rate, a_max=a_max, participation=participation), name="american_sannikov")


def first_best_canonical(agent_rate: float = 0.0, a_max: float = np.inf,
                         participation: float = 0.5) -> ModelPrimitives:
    """Risk-neutral agent with terminal-state liquidation and CARA principal."""
    return ModelPrimitives(
        name="first_best_canonical",
        drift=_drift_a,
        vol=_vol_one,
        cost=_quadratic_cost,
        discount_rate=_constant_rate(agent_rate),
        agent_utility=lambda v: np.asarray(v, dtype=float),
        agent_utility_inverse=lambda v: np.asarray(v, dtype=float),
        principal_utility=lambda v: -np.exp(-np.asarray(v, dtype=float)),
        participation=participation,
        effort=EffortDomain(drift_actions=(-a_max, a_max)),
        closed_form=QuadraticEffort(),
    )


BUILTINS: Dict[str, Callable[..., ModelPrimitives]] = {
    "euro_quadratic": euro_quadratic,
    "sannikov": sannikov,
    "american_sannikov": american_sannikov,
    "first_best_canonical": first_best_canonical,
}

# Override keys accepted per builtin in the config's model block
OVERRIDES = {
    "euro_quadratic": {"beta", "a_max", "participation", "retirement"},
    "sannikov": {"rate", "a_max", "participation", "closed_form"},
    "american_sannikov": {"rate", "a_max", "participation"},
    "first_best_canonical": {"agent_rate", "a_max", "participation"},
}


def build_model(name: str, **overrides) -> ModelPrimitives:
    if name not in BUILTINS:
        raise ConfigError(f"unknown builtin model {name!r}; choose one of {sorted(BUILTINS)}")
    unknown = set(overrides) - OVERRIDES[name]
    if unknown:
        raise ConfigError(f"unknown override key(s) for {name}: {sorted(unknown)}")
    logger.debug(f"building model {name} with overrides {overrides}")
    return BUILTINS[name](**overrides)
