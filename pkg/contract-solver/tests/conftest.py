import json
import sys
from pathlib import Path

import pytest

SCRIPTS = Path(__file__).resolve().parent.parent / "scripts"
sys.path.insert(0, str(SCRIPTS))

from pa_builtins import euro_quadratic, sannikov  # noqa: E402
from pa_montecarlo import SimulationConfig  # noqa: E402


@pytest.fixture
def euro_model():
    return euro_quadratic()


@pytest.fixture
def sannikov_model():
    return sannikov()


@pytest.fixture
def fast_cfg():
    """Desk-scale Monte Carlo: 2000 paths on a coarse step."""
    return SimulationConfig(n_paths=2000, dt=1e-2, t_cap=2.0, seed=42)


@pytest.fixture
def write_config(tmp_path):
    """Write a run config dict to tmp_path and return its path as a string."""
    def _write(data, name="run.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data), encoding="utf-8")
        return str(path)
    return _write
