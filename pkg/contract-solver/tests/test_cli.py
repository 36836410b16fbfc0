import csv
import json
import math

import pytest

from pa_cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


def read_rows(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.reader(f))


@pytest.fixture
def euro_config(write_config, tmp_path):
    return write_config({
        "model": {"builtin": "euro_quadratic"},
        "solver": {"beta": 0.25},
        "simulation": {"n_paths": 4000, "dt": 0.01, "t_cap": 2.0, "seed": 42, "y0": 0.0, "z": 1.0,
                       "keep_paths": 2},
        "output": {"directory": str(tmp_path / "euro")},
    }, name="euro.json")


# solve

def test_solve_european(capsys, euro_config, tmp_path):
    code, result = run(capsys, "solve", "--config", euro_config)
    assert code == 0
    summary = result["summary"]
    assert summary["s_star"] == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert summary["n_min"] == 8
    assert summary["rows"] == 400
    rows = read_rows(tmp_path / "euro" / "value_function.csv")
    assert rows[0] == ["y", "v", "v_prime", "z_hat", "stop_flag"]
    assert len(rows) == 401
    assert (tmp_path / "euro" / "summary.json").exists()


def test_solve_grid_json_only(capsys, write_config, tmp_path):
    config = write_config({
        "model": {"builtin": "sannikov"},
        "solver": {"n_points": 201},
        "output": {"directory": str(tmp_path / "grid")},
    })
    code, result = run(capsys, "solve", "--config", config, "--format", "json")
    assert code == 0
    assert result["summary"]["model"] == "sannikov"
    assert not (tmp_path / "grid" / "value_function.csv").exists()
    assert (tmp_path / "grid" / "summary.json").exists()


def test_out_flag_redirects_artifacts(capsys, euro_config, tmp_path):
    code, result = run(capsys, "solve", "--config", euro_config, "--out", str(tmp_path / "moved"))
    assert code == 0
    assert (tmp_path / "moved" / "value_function.csv").exists()
    assert all("moved" in a for a in result["artifacts"])


# configuration errors

def test_beta_out_of_range_exits_1(capsys, write_config):
    config = write_config({"model": {"builtin": "euro_quadratic"}, "solver": {"beta": 0.7}})
    code, result = run(capsys, "solve", "--config", config)
    assert code == 1
    assert result["code"] == "CONFIG"
    assert "(0, 1/2)" in result["error"]


def test_misspelled_key_exits_1(capsys, write_config):
    config = write_config({"model": {"builtin": "euro_quadratic"}, "solver": {"betaa": 0.25}})
    code, result = run(capsys, "solve", "--config", config)
    assert code == 1
    assert "betaa" in result["error"]


def test_bad_override_value_exits_1(capsys, write_config):
    config = write_config({"model": {"builtin": "sannikov", "overrides": {"rate": "0.1"}}})
    code, result = run(capsys, "simulate", "--config", config)
    assert code == 1
    assert result["code"] == "CONFIG"
    assert "model.overrides.rate" in result["error"]


def test_bad_arguments_exit_1(capsys):
    code, result = run(capsys, "solve", "--config", "x.json", "--format", "xml")
    assert code == 1
    assert result["code"] == "CONFIG"


def test_no_command_exits_1(capsys):
    assert main([]) == 1


# simulate

def test_simulate_reproducible(capsys, euro_config, tmp_path):
    code, first = run(capsys, "simulate", "--config", euro_config)
    assert code == 0
    report_path = tmp_path / "euro" / "report.json"
    before = report_path.read_bytes()
    code, second = run(capsys, "simulate", "--config", euro_config)
    assert code == 0
    assert report_path.read_bytes() == before
    assert first["agent_estimate"] == second["agent_estimate"]

    report = json.loads(before)
    assert report["passed"]
    assert report["seed"] == 42
    assert set(first["audits"]) == {"agent_value", "best_response", "martingale"}

    payoffs = read_rows(tmp_path / "euro" / "payoffs.csv")
    assert payoffs[0] == ["path", "stop_time", "terminal_y", "agent_payoff", "principal_payoff"]
    assert len(payoffs) == 4001
    path_rows = read_rows(tmp_path / "euro" / "paths" / "path_000.csv")
    assert path_rows[0] == ["t", "x", "y", "discount", "flags"]
    assert path_rows[1][-1] == "start"
    assert path_rows[-1][-1] == "stop"
    assert (tmp_path / "euro" / "paths" / "path_001.csv").exists()


def test_seed_flag_changes_estimate(capsys, euro_config):
    _, first = run(capsys, "simulate", "--config", euro_config, "--format", "json")
    _, second = run(capsys, "simulate", "--config", euro_config, "--format", "json", "--seed", "7")
    assert first["agent_estimate"] != second["agent_estimate"]


def test_deviant_effort_fails_audit(capsys, write_config, tmp_path):
    config = write_config({
        "model": {"builtin": "euro_quadratic"},
        "simulation": {"n_paths": 2000, "dt": 0.01, "t_cap": 2.0, "y0": 0.0, "z": 1.0, "deviant": True},
        "output": {"directory": str(tmp_path / "deviant"), "formats": ["json"]},
    })
    code, result = run(capsys, "simulate", "--config", config)
    assert code == 3
    assert result["code"] == "AUDIT"
    assert result["audit"] == "best_response"
    report = json.loads((tmp_path / "deviant" / "report.json").read_text(encoding="utf-8"))
    assert report["failed_audit"] == "best_response"
    assert report["passed"] is False


def test_simulate_solved_contract(capsys, write_config, tmp_path):
    config = write_config({
        "model": {"builtin": "euro_quadratic"},
        "solver": {"beta": 0.25},
        "simulation": {"contract": "solved", "n_paths": 500, "dt": 0.005, "t_cap": 1.0, "horizon": 0.5,
                       "y0": 0.0},
        "output": {"directory": str(tmp_path / "solved")},
    })
    code, result = run(capsys, "simulate", "--config", config)
    assert code == 0
    assert result["audits"] == ["reduction"]
    report = json.loads((tmp_path / "solved" / "report.json").read_text(encoding="utf-8"))
    assert report["contract"]["kind"] == "solved"
    assert report["reduction"]["passed"]
    assert result["principal_estimate"] == report["reduction"]["estimate"]
    assert (tmp_path / "solved" / "payoffs.csv").exists()


def test_solved_contract_needs_constructed_model(capsys, write_config):
    config = write_config({"model": {"builtin": "sannikov"}, "simulation": {"contract": "solved"}})
    code, result = run(capsys, "simulate", "--config", config)
    assert code == 1
    assert "simulation.contract" in result["error"]


# firstbest

def test_firstbest_canonical(capsys, write_config, tmp_path):
    config = write_config({
        "model": {"builtin": "first_best_canonical", "overrides": {"participation": 0.5}},
        "simulation": {"n_paths": 2000, "dt": 0.01, "t_cap": 2.0, "y0": 1.0, "effort": 1.0},
        "output": {"directory": str(tmp_path / "fb")},
    })
    code, result = run(capsys, "firstbest", "--config", config)
    assert code == 0
    assert result["lambda_hat"] == pytest.approx(1.0, abs=1e-10)
    assert result["v_fb"] == pytest.approx(-2.0, abs=1e-10)

    text = (tmp_path / "fb" / "summary.json").read_text(encoding="utf-8")
    payload = json.loads(text)
    assert json.dumps(payload, indent=2, sort_keys=True) + "\n" == text
    assert payload["equality_check"]["passed"]
    assert payload["weak_duality"]["holds"]
    rows = read_rows(tmp_path / "fb" / "value_function.csv")
    assert rows[0] == ["t", "effort", "payment"]
    assert len(rows) == 202


def test_firstbest_without_root_exits_2(capsys, write_config, tmp_path):
    config = write_config({
        "model": {"builtin": "first_best_canonical", "overrides": {"participation": -100.0}},
        "output": {"directory": str(tmp_path / "fb")},
    })
    code, result = run(capsys, "firstbest", "--config", config)
    assert code == 2
    assert result["code"] == "ROOT"
    assert len(result["details"]["values"]) == 2
