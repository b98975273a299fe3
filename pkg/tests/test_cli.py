import json
import os
from importlib import resources

import pytest

from mxl.cli import (
    EXIT_ERROR,
    EXIT_NO_CONVERGENCE,
    EXIT_OK,
    EXIT_VERIFY_FAILED,
    cmd_run,
    cmd_sweep,
    cmd_verify,
    load_config,
    main,
)

MAC_CFG = str(resources.files("mxl") / "configs" / "mac_quadratic.cfg")
EE_CFG = str(resources.files("mxl") / "configs" / "ee_2user_noise100.cfg")

os.environ.setdefault("MXL_WORKERS", "2")


def write_cfg(tmp_path, payload, name="scenario.cfg"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def mac_payload(**solver_overrides):
    solver = {
        "schedule": {"kind": "power_law", "gamma0": 1.0, "exponent": 0.5},
        "noise": {"kind": "none"},
        "max_iters": 4000,
        "stop_residual": 1e-6,
        "seed": 1,
        "log_every": 25,
    }
    solver.update(solver_overrides)
    return {"game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0}, "solver": solver,
            "experiment": {"mode": "run"}}


class TestRun:
    def test_bundled_mac_config_converges(self, tmp_path):
        out = tmp_path / "out"
        assert cmd_run(MAC_CFG, str(out), quiet=True) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "converged"
        assert summary["terminal_residual"] < 1e-6
        assert (out / "trace.csv").exists()
        assert (out / "utility_plot.csv").exists()
        assert (out / "residual_plot.csv").exists()
        header = (out / "trace.csv").read_text().splitlines()[0]
        assert header == "n,player,utility,nash_residual,kl_to_ref,step_size"

    def test_bundled_ee_noise100_converges(self, tmp_path):
        out = tmp_path / "out"
        assert cmd_run(EE_CFG, str(out), quiet=True) == EXIT_OK
        summary = json.loads((out / "summary.json").read_text())
        assert summary["status"] == "converged"
        assert summary["iterations"] <= 5000

    def test_byte_identical_reruns(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert cmd_run(MAC_CFG, str(out1), quiet=True) == EXIT_OK
        assert cmd_run(MAC_CFG, str(out2), quiet=True) == EXIT_OK
        for name in ("trace.csv", "summary.json", "utility_plot.csv", "residual_plot.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_seed_override_changes_noise_path(self, tmp_path):
        cfg = write_cfg(tmp_path, mac_payload(noise={"kind": "relative", "level": 0.5},
                                              stop_residual=0.0, max_iters=200))
        a, b = tmp_path / "a", tmp_path / "b"
        assert cmd_run(cfg, str(a), seed=5, quiet=True) in (EXIT_OK, EXIT_NO_CONVERGENCE)
        assert cmd_run(cfg, str(b), seed=6, quiet=True) in (EXIT_OK, EXIT_NO_CONVERGENCE)
        assert (a / "trace.csv").read_bytes() != (b / "trace.csv").read_bytes()
        echoed = json.loads((a / "summary.json").read_text())["config"]["solver"]["seed"]
        assert echoed == 5

    def test_non_convergence_exit_code(self, tmp_path):
        cfg = write_cfg(tmp_path, mac_payload(max_iters=10, stop_residual=1e-12))
        assert cmd_run(cfg, str(tmp_path / "out"), quiet=True) == EXIT_NO_CONVERGENCE

    def test_malformed_json_exits_1_no_outputs(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text('{"game": {"kind": "mac",\n   broken\n}')
        out = tmp_path / "out"
        assert cmd_run(str(bad), str(out), quiet=True) == EXIT_ERROR
        assert not out.exists()
        err = capsys.readouterr().err
        assert "bad.cfg:2" in err  # line-anchored message

    def test_unknown_key_rejected(self, tmp_path):
        payload = mac_payload()
        payload["game"]["mystery"] = 1
        cfg = write_cfg(tmp_path, payload)
        assert cmd_run(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR

    def test_unknown_game_kind_rejected(self, tmp_path):
        payload = mac_payload()
        payload["game"]["kind"] = "poker"
        cfg = write_cfg(tmp_path, payload)
        assert cmd_run(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR

    def test_mode_mismatch_rejected(self, tmp_path):
        payload = mac_payload()
        payload["experiment"] = {"mode": "stability"}
        cfg = write_cfg(tmp_path, payload)
        assert cmd_run(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR

    def test_async_section_drives_partial_updates(self, tmp_path):
        payload = mac_payload(max_iters=2000, stop_residual=1e-3)
        payload["async"] = {"probabilities": [0.5, 0.5], "delay_max": 3}
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        code = cmd_run(cfg, str(out), quiet=True)
        assert code in (EXIT_OK, EXIT_NO_CONVERGENCE)
        summary = json.loads((out / "summary.json").read_text())
        updates = summary["updates_per_player"]
        assert len(updates) == 2 and all(u < 2000 for u in updates)

    def test_async_probability_count_mismatch_rejected(self, tmp_path):
        payload = mac_payload()
        payload["async"] = {"probabilities": [1.0, 1.0, 1.0]}
        cfg = write_cfg(tmp_path, payload)
        assert cmd_run(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR

    def test_summary_echoes_resolved_defaults(self, tmp_path):
        cfg = write_cfg(tmp_path, {"game": {"kind": "mac"}, "experiment": {"mode": "run"}})
        out = tmp_path / "out"
        code = cmd_run(cfg, str(out), quiet=True)
        assert code in (EXIT_OK, EXIT_NO_CONVERGENCE)
        echoed = json.loads((out / "summary.json").read_text())["config"]
        assert echoed["game"]["players"] == 2
        assert echoed["solver"]["schedule"]["kind"] == "power_law"
        assert echoed["experiment"]["mode"] == "run"


class TestVerify:
    def test_stability_mode_on_mac(self, tmp_path):
        payload = {
            "game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0},
            "solver": {"seed": 3},
            "experiment": {"mode": "stability", "samples": 800, "vs_radius": 0.2},
        }
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        assert cmd_verify(cfg, str(out), quiet=True) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["passed"] is True
        assert report["monotonicity"]["violations"] == 0
        assert report["variational_stability"]["violations"] == 0
        assert report["hessian"]["hessian_max_quadform"] < 0

    def test_rate_mode_interior_instance(self, tmp_path):
        payload = {
            "game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0},
            "solver": {
                "schedule": {"kind": "optimized", "stability": 0.102089},
                "noise": {"kind": "gaussian", "sigma": 0.25},
                "max_iters": 5000,
                "seed": 21,
                "log_every": 100,
            },
            "experiment": {"mode": "rate", "seeds": 30,
                           "checkpoints": [50, 158, 500, 1581, 5000],
                           "metric": "nuclear_distance",
                           "slope_target": -0.5, "slope_tol": 0.15},
        }
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        assert cmd_verify(cfg, str(out), quiet=True) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert abs(report["rate_fit"]["slope"] + 0.5) <= 0.15

    def test_rate_mode_constant_step_negative_control(self, tmp_path):
        payload = {
            "game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0},
            "solver": {
                "schedule": {"kind": "constant", "gamma0": 0.5},
                "noise": {"kind": "gaussian", "sigma": 0.25},
                "max_iters": 5000,
                "seed": 21,
                "log_every": 100,
            },
            "experiment": {"mode": "rate", "seeds": 12,
                           "checkpoints": [50, 158, 500, 1581, 5000],
                           "metric": "nuclear_distance",
                           "slope_target": -0.5, "slope_tol": 0.15},
        }
        cfg = write_cfg(tmp_path, payload)
        assert cmd_verify(cfg, str(tmp_path / "out"), quiet=True) == EXIT_VERIFY_FAILED

    def test_wrong_mode_rejected(self, tmp_path):
        cfg = write_cfg(tmp_path, mac_payload())
        assert cmd_verify(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR


class TestSweep:
    def test_noise_level_sweep(self, tmp_path):
        payload = {
            "game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0},
            "solver": {
                "schedule": {"kind": "power_law", "gamma0": 1.0, "exponent": 0.6},
                "noise": {"kind": "relative", "level": 0.0},
                "max_iters": 5000,
                "seed": 2,
                "log_every": 50,
            },
            "experiment": {"mode": "sweep", "seeds": 6, "threshold": 1e-2,
                           "grid": {"solver.noise.level": [0.0, 0.5]}},
        }
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        assert cmd_sweep(cfg, str(out), quiet=True) == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "solver.noise.level,seeds,converged_fraction,median_iterations"
        assert len(lines) == 3
        fracs = [float(line.split(",")[2]) for line in lines[1:]]
        assert all(f >= 0.5 for f in fracs)
        assert fracs[0] >= fracs[1]  # convergence does not improve with noise

    def test_ee_noise_sweep_fraction_not_increasing(self, tmp_path):
        payload = {
            "game": {"kind": "ee", "users": 2, "tx_antennas": 2, "rx_antennas": 2,
                     "subcarriers": 2, "pmax": 2.0, "pc": 1.0, "pathloss_spread": 1.0,
                     "channel_seed": 8},
            "solver": {
                "schedule": {"kind": "power_law", "gamma0": 1.0, "exponent": 0.6},
                "noise": {"kind": "relative", "level": 0.0},
                "max_iters": 5000,
                "seed": 100,
                "log_every": 25,
            },
            "experiment": {"mode": "sweep", "seeds": 4, "threshold": 1e-2,
                           "grid": {"solver.noise.level": [0.0, 1.0]}},
        }
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        assert cmd_sweep(cfg, str(out), quiet=True) == EXIT_OK
        rows = (out / "sweep.csv").read_text().splitlines()[1:]
        fracs = [float(r.split(",")[2]) for r in rows]
        meds = [float(r.split(",")[3]) for r in rows]
        assert fracs[0] >= fracs[1]
        assert meds[0] <= meds[1]

    def test_step_exponent_sweep_all_converge(self, tmp_path):
        payload = {
            "game": {"kind": "mac", "players": 2, "b": 1.0, "c": 2.0},
            "solver": {
                "schedule": {"kind": "power_law", "gamma0": 2.0, "exponent": 0.5},
                "noise": {"kind": "none"},
                "max_iters": 5000,
                "seed": 2,
                "log_every": 50,
            },
            "experiment": {"mode": "sweep", "seeds": 3, "threshold": 1e-2,
                           "grid": {"solver.schedule.exponent": [0.5, 0.75, 1.0]}},
        }
        cfg = write_cfg(tmp_path, payload)
        out = tmp_path / "out"
        assert cmd_sweep(cfg, str(out), quiet=True) == EXIT_OK
        lines = (out / "sweep.csv").read_text().splitlines()[1:]
        assert len(lines) == 3
        assert all(float(line.split(",")[2]) == 1.0 for line in lines)

    def test_empty_grid_rejected(self, tmp_path):
        payload = mac_payload()
        payload["experiment"] = {"mode": "sweep", "grid": {}}
        cfg = write_cfg(tmp_path, payload)
        assert cmd_sweep(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR

    def test_bad_grid_path_rejected(self, tmp_path):
        payload = mac_payload()
        payload["experiment"] = {"mode": "sweep", "seeds": 2,
                                 "grid": {"solver.nope.level": [0.1]}}
        cfg = write_cfg(tmp_path, payload)
        assert cmd_sweep(cfg, str(tmp_path / "out"), quiet=True) == EXIT_ERROR


def test_load_config_strictness(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(json.dumps({"game": {"kind": "mac"}, "extra_section": {}}))
    with pytest.raises(Exception):
        load_config(cfg)


def test_main_dispatch(tmp_path):
    out = tmp_path / "out"
    code = main(["run", MAC_CFG, "--out", str(out), "--quiet"])
    assert code == EXIT_OK
