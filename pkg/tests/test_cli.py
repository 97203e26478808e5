from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import pytest

from vbl import cli
from vbl.config import SCHEMA, defaults, load_config, parse_config
from vbl.errors import ConfigError
from vbl.transport import import_binary

ROOT = Path(__file__).resolve().parents[1]
GATE_CFG = ROOT / "configs" / "gate.cfg"

SMALL = """
[grid]
nx = 32
nv = 32
dt = 0.001
T = 0.005
"""


def write_cfg(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def run_cli(tmp_path, mode, text, *extra, out="out"):
    cfg = write_cfg(tmp_path, text)
    dest = tmp_path / out
    status = cli.main([mode, str(cfg), "--out", str(dest), *extra])
    report = json.loads((dest / "report.json").read_text()) if (dest / "report.json").exists() else None
    return status, report, dest


class TestParseConfig:
    def test_minimal_config_gets_defaults(self):
        cfg = parse_config("[grid]\nnx = 32\n[params]\nq = 2\n")
        d = defaults()
        assert cfg.grid["nx"] == 32 and cfg.params["q"] == 2
        assert cfg.grid["nv"] == d["grid"]["nv"] == 64
        assert cfg.grid["L"] == pytest.approx(2 * math.pi)
        assert cfg.params["M"] == "auto"
        assert cfg.initial == d["initial"] and cfg.run == d["run"]
        assert cfg.explicit == {"grid.nx", "params.q"}

    def test_every_schema_key_is_echoed(self):
        echo = parse_config("").as_dict()
        assert {s: set(v) for s, v in echo.items()} == {s: set(v) for s, v in SCHEMA.items()}

    def test_shipped_gate_config(self):
        cfg = load_config(GATE_CFG)
        assert cfg.params["lambda0"] == 0.5
        assert cfg.T == 0.01 and cfg.params["T"] == 0.01
        assert cfg.params["K"] == 40
        assert cfg.run["mode"] == "gate"

    def test_consistent_duplicate_T(self):
        cfg = parse_config("[grid]\nT = 0.02\n[params]\nT = 0.02\n")
        assert cfg.params["T"] == cfg.grid["T"] == 0.02

    def test_params_T_is_shared(self):
        assert parse_config("[params]\nT = 0.02\n").grid["T"] == 0.02

    def test_inconsistent_T_rejected_with_line(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[grid]\nT = 0.01\n\n[params]\nT = 0.02\n")
        assert info.value.line == 5 and info.value.section == "params"
        assert "line 5" in str(info.value)

    @pytest.mark.parametrize("text, line", [
        ("[grid]\nnx = 32\nnx = 64\n", 3),
        ("[grid]\nbogus = 1\n", 2),
        ("[nowhere]\n", 1),
        ("[grid]\n\nnx = abc\n", 3),
        ("nx = 32\n", 1),
        ("[grid]\nnx 32\n", 2),
        ("[grid]\nnx = 48\n", 2),
        ("[params]\nq = -1\n", 2),
        ("[run]\n# comment\nmode = dance\n", 3),
        ("[grid]\ndt = 0.003\n", 2),
    ])
    def test_errors_carry_line_numbers(self, text, line):
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        assert info.value.line == line

    def test_comments_and_blank_lines(self):
        cfg = parse_config("; header\n[grid] # trailing\nnx = 32 ; inline\n\n")
        assert cfg.grid["nx"] == 32

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")


class TestModes:
    def test_gate(self, tmp_path):
        status, rep, _ = run_cli(tmp_path, "gate", GATE_CFG.read_text())
        assert status == 0
        gate = rep["result"]["gate"]
        assert gate["pass"]
        assert rep["result"]["params"]["M"] == 0.25
        assert rep["result"]["kappa"] < 1
        for c in ("condition_M_left", "condition_M_right", "condition_f0"):
            assert {"value", "threshold", "margin", "pass"} <= set(gate[c])
        assert rep["config"]["params"]["lambda0"] == 0.5

    def test_gate_failure_exit_and_force(self, tmp_path):
        text = SMALL + "[initial]\namplitude = 0.1\n"
        status, rep, _ = run_cli(tmp_path, "gate", text)
        assert status == 3 and not rep["result"]["gate"]["condition_f0"]["pass"]
        status, rep, _ = run_cli(tmp_path, "gate", text, "--force", out="forced")
        assert status == 0 and rep["result"]["forced"]

    def test_norms_seed_42(self, tmp_path):
        status, rep, _ = run_cli(tmp_path, "norms", SMALL, "--seed", "42")
        assert status == 0
        assert rep["result"]["failed"] == 0 and rep["result"]["checks"] > 1000
        assert rep["config"]["run"]["seed"] == 42

    def test_suite_failure_exit(self, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "norm_suite", lambda seed: [{"name": "x", "pass": False}])
        status, rep, _ = run_cli(tmp_path, "norms", SMALL)
        assert status == 5 and rep["result"]["failed"] == 1

    def test_simulate_x_constant_data_is_stationary(self, tmp_path):
        status, rep, out = run_cli(tmp_path, "simulate", SMALL + "[initial]\nepsilon = 0\n")
        assert status == 0
        res = rep["result"]
        assert res["energy_drift"] <= 1e-10
        assert res["max_change_from_initial"] <= 1e-10 * 4e-4
        assert res["max_principle"]["pass"]
        traj = import_binary(out / "trajectory.vbl")
        assert len(traj) == 6
        with open(out / "timeseries.csv") as fh:
            assert next(csv.reader(fh)) == ["t", "mass", "energy", "sup"]

    def test_picard(self, tmp_path):
        status, rep, out = run_cli(tmp_path, "picard", SMALL)
        assert status == 0 and rep["result"]["converged"]
        its = rep["result"]["iterations"]
        assert its[-1]["d_k"] < 1e-9 and its[0]["ratio"] is None
        assert (out / "picard_f.vbl").exists()

    def test_picard_non_convergence_is_numerical(self, tmp_path):
        text = SMALL + "[params]\nmax_iter = 1\npicard_tol = 1e-30\n"
        status, rep, _ = run_cli(tmp_path, "picard", text)
        assert status == 4 and "ratio history" in rep["error"]

    def test_contract(self, tmp_path):
        # the allowance coarsens by two in x, v and t, so start from 64 points and an even step count
        text = SMALL.replace("T = 0.005", "T = 0.004").replace("= 32", "= 64") + "[params]\npairs = 2\n"
        status, rep, _ = run_cli(tmp_path, "contract", text)
        assert status == 0 and len(rep["result"]["pairs"]) == 2
        assert all(p["measured"] <= p["bound"] + p["allowance"] for p in rep["result"]["pairs"])

    def test_euler_check(self, tmp_path):
        status, rep, out = run_cli(tmp_path, "euler-check", SMALL)
        assert status == 0 and rep["result"]["pass"]
        assert all(r["order"] >= 2 for r in rep["result"]["residuals"].values())
        assert (out / "euler_timeseries.csv").exists()

    def test_odd_step_count_in_contract_is_numerical(self, tmp_path):
        status, rep, _ = run_cli(tmp_path, "contract", SMALL + "[params]\npairs = 1\n")
        assert status == 4 and "even number" in rep["error"]

    def test_numerical_abort(self, tmp_path):
        # a velocity box this small violates the decay padding of f0
        status, rep, _ = run_cli(tmp_path, "simulate", SMALL.replace("[grid]", "[grid]\nV = 2"))
        assert status == 4 and "PaddingError" in rep["error"]

    def test_plot(self, tmp_path):
        run_cli(tmp_path, "simulate", SMALL, out="sim")
        text = SMALL + f"[run]\ninput = {tmp_path / 'sim' / 'final.csv'}\n"
        status, rep, out = run_cli(tmp_path, "plot", text, out="plot")
        assert status == 0
        dat = (out / "final.dat").read_text().splitlines()
        assert dat[1] == "# columns: x v value"
        assert "" in dat  # gnuplot block separators
        assert rep["result"]["rows"] == 32 * 32

    def test_plot_missing_input_is_config_error(self, tmp_path):
        status, _, _ = run_cli(tmp_path, "plot", SMALL + "[run]\ninput = /nonexistent.csv\n")
        assert status == 2

    def test_config_error_exit(self, tmp_path):
        status, rep, _ = run_cli(tmp_path, "gate", "[grid]\nnx = 3\n")
        assert status == 2 and rep is None

    def test_reports_are_byte_identical(self, tmp_path):
        cfg = write_cfg(tmp_path, SMALL)
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["norms", str(cfg), "--out", str(a), "--seed", "7"]) == 0
        assert cli.main(["norms", str(cfg), "--out", str(b), "--seed", "7"]) == 0
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()
        assert "wall_time" in json.loads((a / "meta.json").read_text())
