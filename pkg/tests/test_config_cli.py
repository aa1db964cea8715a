import json

import numpy as np
import pytest

from twoscale.cli import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, load, main
from twoscale.config import ConfigError, REQUIRED, bundled_config, load_config, parse_config, parse_shape


class TestConfig:
    @pytest.mark.parametrize("name", ["test1.cfg", "test2.cfg"])
    def test_bundled(self, name):
        cfg = load_config(bundled_config(name))
        assert cfg.n_steps == 25
        assert cfg.params.u_eq == 0.5

    def test_bundled_values(self):
        t1 = load_config(bundled_config("test1.cfg"))
        assert t1.macro_n == (40, 20) and t1.u_bc == {"corner_ll": 0.0} and not t1.flow
        t2 = load_config(bundled_config("test2.cfg"))
        assert t2.p_bc == {"left": 0.25, "right": 0.0} and t2.flow
        assert t2.macro_adapt == "bottom_row" and t2.h_min == 0.025

    def test_empty_lists_all_missing(self):
        with pytest.raises(ConfigError) as exc:
            parse_config("")
        assert len(exc.value.problems) == len(REQUIRED)
        for key in REQUIRED:
            assert any(repr(key) in p for p in exc.value.problems)

    def test_unknown_key_with_line(self):
        text = bundled_config("test1.cfg").read_text() + "\nbogus = 1\n"
        n = len(text.splitlines())
        with pytest.raises(ConfigError) as exc:
            parse_config(text, "x.cfg")
        assert exc.value.problems == [f"x.cfg:{n}: unknown key 'bogus'"]

    def test_bad_values_collected(self):
        text = bundled_config("test1.cfg").read_text() + "\ndt = -1\nC_c = 1.5\n"
        with pytest.raises(ConfigError) as exc:
            parse_config(text)
        msg = str(exc.value)
        assert "dt must be positive" in msg and "C_c" in msg

    def test_T_multiple_of_dt(self):
        cfg = load_config(bundled_config("test1.cfg"))
        with pytest.raises(ConfigError, match="multiple"):
            cfg.replace(T=0.015)

    def test_shapes(self):
        assert parse_shape("circle(0.5)") == ("circle", 0.5)
        assert parse_shape("rect(-0.4, 0.4, -0.3, 0.3)") == ("rect", (-0.4, 0.4, -0.3, 0.3))
        s = parse_shape("split(0.5; circle(0.3); rect(-0.1,0.1,-0.2,0.2))")
        assert s == ("split", 0.5, ("circle", 0.3), ("rect", (-0.1, 0.1, -0.2, 0.2)))
        for bad in ("circle(1.5)", "rect(1, 0, 0, 1)", "blob(1)", "split(0.5; circle(0.3))", "circle"):
            with pytest.raises(ValueError):
                parse_shape(bad)

    def test_overrides(self):
        cfg = load("test1.cfg", ["macro_n=4,2", "C_r = 0.05"])
        assert cfg.macro_n == (4, 2) and cfg.C_r == 0.05
        with pytest.raises(ConfigError):
            load("test1.cfg", ["macro_n"])


class TestCLI:
    def test_help_lists_subcommands(self, capsys):
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for cmd in ("run", "errors", "sweep", "cell"):
            assert cmd in out

    def test_run_zero_steps(self, tmp_path, capsys):
        code = main(["run", "test1.cfg", "--set", "T=0", "--set", "macro_n=2,1", "--out", str(tmp_path)])
        assert code == EXIT_OK
        assert "0 steps" in capsys.readouterr().out
        assert (tmp_path / "steps.csv").read_text().strip().count("\n") == 0
        assert (tmp_path / "macro_0000.vtk").exists()

    def test_run_writes_outputs(self, tmp_path):
        code = main(["run", "test1.cfg", "--set", "T=0.01", "--set", "macro_n=2,1", "--set", "micro_n=6",
                     "--out", str(tmp_path), "--snapshot-every", "1"])
        assert code == EXIT_OK
        for name in ("steps.csv", "convergence.csv", "tensors.csv", "profile.csv", "activity.csv", "macro_0001.vtk"):
            assert (tmp_path / name).exists()

    def test_config_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("dt = 0.01\nwhat = 3\n")
        assert main(["run", str(bad)]) == EXIT_CONFIG
        err = capsys.readouterr().err
        assert "unknown key 'what'" in err and "missing required key 'T'" in err
        assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG

    def test_solver_error_exit(self, tmp_path, capsys):
        code = main(["run", "test1.cfg", "--set", "T=0.01", "--set", "macro_n=2,1", "--set", "micro_n=6",
                     "--set", "max_coupling_iters=1", "--set", "tol_M=1e-12", "--set", "tol_mu=1e-13",
                     "--out", str(tmp_path)])
        assert code == EXIT_SOLVER
        assert "eps_M history" in capsys.readouterr().err

    def test_cell_tensors(self, capsys):
        assert main(["cell", "test2.cfg", "--set", "micro_n=10", "--set", "h_min=0.05"]) == EXIT_OK
        rows = json.loads(capsys.readouterr().out)
        assert len(rows) == 2
        K_left, K_right = np.array(rows[0]["K"]), np.array(rows[1]["K"])
        assert K_left[0, 0] > K_left[1, 1]
        assert K_right[0, 0] < K_right[1, 1]

    def test_cell_theta_needs_single_shape(self):
        assert main(["cell", "test2.cfg", "--theta", "2"]) == EXIT_CONFIG
