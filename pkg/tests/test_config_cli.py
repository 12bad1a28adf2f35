import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfosc.cli import EXIT_OK, EXIT_VALIDATION, EXIT_VERIFICATION, emit_plot_script, main
from mfosc.config import (
    ConfigError,
    RunConfig,
    config_echo,
    parse_config,
    serialize_config,
)


def test_empty_input_gives_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.model.a == pytest.approx(1.0 / 3.0)
    assert cfg.model.b == 1.0
    assert cfg.model.c == 10.0
    assert cfg.model.ratio1 == 0.2
    assert cfg.model.delta == 0.05


def test_round_trip_of_defaults_and_modified():
    cfg = RunConfig()
    assert parse_config(serialize_config(cfg)) == cfg
    cfg.model.delta = 0.025
    cfg.orbit.z0 = [1.0, -0.25]
    cfg.output.emit_plots = False
    cfg.particles.n = 77
    assert parse_config(serialize_config(cfg)) == cfg


@given(
    st.floats(0.0, 0.5),
    st.integers(1, 64),
    st.floats(1e-4, 0.5),
    st.booleans(),
)
@settings(max_examples=40, deadline=None)
def test_round_trip_random_fields(delta, n, dt, plots):
    cfg = RunConfig()
    cfg.model.delta = delta
    cfg.particles.n = n
    cfg.solver.dt = dt
    cfg.output.emit_plots = plots
    assert parse_config(serialize_config(cfg)) == cfg


def test_unknown_key_suggests_nearest():
    with pytest.raises(ConfigError, match="sigma"):
        parse_config("[model]\nsigma2 = 1.0\n")
    with pytest.raises(ConfigError, match="delta"):
        parse_config("[model]\ndelt = 0.1\n")
    with pytest.raises(ConfigError, match="solver"):
        parse_config("[solvr]\ndt = 0.1\n")


def test_type_mismatches_rejected():
    with pytest.raises(ConfigError, match="integer"):
        parse_config("[particles]\nn = 2.5\n")
    with pytest.raises(ConfigError, match="number"):
        parse_config('[model]\ndelta = "big"\n')
    with pytest.raises(ConfigError, match="array"):
        parse_config("[model]\nk = 1.0\n")


def test_invariant_validation():
    with pytest.raises(ConfigError, match="delta"):
        parse_config("[model]\ndelta = -1.0\n")
    with pytest.raises(ConfigError, match="positive"):
        parse_config("[solver]\ndt = 0.0\n")


def test_config_echo_is_single_line():
    echo = config_echo(RunConfig())
    assert "\n" not in echo
    assert "model.delta=0.05" in echo


def test_cli_reduced_and_artifacts(tmp_path):
    rc = main(["--out-dir", str(tmp_path), "reduced", "--horizon", "2.0"])
    assert rc == EXIT_OK
    csv = (tmp_path / "reduced_trajectory.csv").read_text()
    assert csv.splitlines()[1] == "t,m_1,m_2"
    assert (tmp_path / "plot_reduced_trajectory.py").exists()


def test_cli_pde_smoke(tmp_path):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text("[solver]\ntrunc = 6\ndt = 0.05\n")
    rc = main(["--config", str(cfgfile), "--out-dir", str(tmp_path), "pde", "--horizon", "1.0"])
    assert rc == EXIT_OK
    text = (tmp_path / "pde_trajectory.csv").read_text()
    header = next(ln for ln in text.splitlines() if not ln.startswith("#"))
    assert header == "t,m_1,m_2,mass,dualnorm_p_minus_rho"
    from mfosc.pde import checkpoint_load

    state, sc = checkpoint_load((tmp_path / "pde_checkpoint.csv").read_text())
    assert state.t == pytest.approx(1.0, abs=1e-12)
    assert sc.basis.nmax == 6


def test_cli_particles_smoke(tmp_path):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text("[particles]\nn = 40\nhorizon = 0.5\n")
    rc = main(["--config", str(cfgfile), "--out-dir", str(tmp_path), "particles"])
    assert rc == EXIT_OK
    meta = json.loads((tmp_path / "particles_metadata.json").read_text())
    assert meta["N"] == 40


def test_cli_cycle_reports_absence_with_success(tmp_path, capsys):
    rc = main(["--out-dir", str(tmp_path), "cycle", "--space", "reduced", "--ratio1", "0.0"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "no cycle" in out
    assert not (tmp_path / "cycle_reduced.csv").exists()


def test_cli_bad_config_exits_validation(tmp_path):
    cfgfile = tmp_path / "bad.toml"
    cfgfile.write_text("[model]\ndelta = -3.0\n")
    rc = main(["--config", str(cfgfile), "--out-dir", str(tmp_path), "reduced"])
    assert rc == EXIT_VALIDATION


def test_cli_verify_subset(tmp_path, capsys):
    rc = main(["--out-dir", str(tmp_path), "verify", "--criteria", "1"])
    assert rc == EXIT_OK
    out = capsys.readouterr().out
    assert "[PASS] criterion 1" in out
    report = json.loads((tmp_path / "verification_report.json").read_text())
    assert report["all_passed"] is True
    assert report["criteria"][0]["number"] == 1


def test_verify_exit_code_on_failure(tmp_path, monkeypatch):
    # force one criterion to fail and confirm the verification exit code
    from mfosc import verify as V

    def broken(self):
        from mfosc.verify import CriterionResult

        return CriterionResult(1, "effective-drift-oracle", False, 0.0, {})

    broken._criterion = 1
    monkeypatch.setattr(V.VerificationSuite, "criterion_1", broken)
    rc = main(["--out-dir", str(tmp_path), "verify", "--criteria", "1"])
    assert rc == EXIT_VERIFICATION


def test_plot_scripts_reference_only_artifacts():
    for kind, name in [
        ("trajectory", "x.csv"),
        ("floquet", "floquet_reduced.json"),
        ("isochron", "grid.csv"),
        ("compare", "compare.csv"),
    ]:
        script = emit_plot_script(kind, name)
        assert name in script
        assert "matplotlib" in script
        compile(script, "<plot>", "exec")  # syntactically valid


def test_cli_threads_flag_accepted(tmp_path):
    rc = main(["--threads", "1", "--out-dir", str(tmp_path), "reduced", "--horizon", "0.5"])
    assert rc == EXIT_OK


def test_cli_reproducibility(tmp_path):
    cfgfile = tmp_path / "run.toml"
    cfgfile.write_text("[particles]\nn = 60\nhorizon = 0.3\nseed = 5\n")
    d1, d2 = tmp_path / "a", tmp_path / "b"
    for d in (d1, d2):
        assert main(["--config", str(cfgfile), "--out-dir", str(d), "particles"]) == EXIT_OK
    assert (d1 / "particles_trajectory.csv").read_bytes() == (d2 / "particles_trajectory.csv").read_bytes()
