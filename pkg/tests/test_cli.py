# tests/test_cli.py

import numpy as np
import pytest

import cli
from equilibria import EquilibriumSetApprox
from scenarios import load_scenario, save_scenario
from utils import read_csv_array, read_json


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """One complete toy1d run shared by the read-only checks below."""
    out = tmp_path_factory.mktemp("toy_run")
    messages = []
    logger = cli.AppLogger(messages.append)
    code = cli.run_scenario(load_scenario("toy1d"), out, logger)
    return out, code, messages


def test_run_writes_complete_outputs(toy_run):
    """K impulses give K*spp + 1 trajectory rows, K jump rows and K + 1 discrete rows."""
    out, code, messages = toy_run
    assert code == cli.EXIT_OK
    header, trajectory = read_csv_array(out / "run_000" / "trajectory.csv")
    assert header == ["t", "x_1"]
    assert trajectory.shape == (20 * 20 + 1, 2)
    jump_header, jumps = read_csv_array(out / "run_000" / "jumps.csv")
    assert jump_header == ["k", "t", "u_1", "x_pre_1", "x_post_1"]
    assert jumps.shape == (20, 5)
    assert np.allclose(jumps[:, 0], np.arange(20))
    _, discrete = read_csv_array(out / "run_000" / "discrete.csv")
    assert discrete.shape == (21, 4)
    assert np.isnan(discrete[-1, 3])
    for name in ("stability.json", "mpc_history.json", "violations.json"):
        assert (out / "run_000" / name).exists()
    assert any("--- Closed loop ---" in m for m in messages)


def test_run_converges_to_the_origin(toy_run):
    out, _, _ = toy_run
    _, trajectory = read_csv_array(out / "run_000" / "trajectory.csv")
    assert abs(trajectory[-1, 1]) < 1e-3
    assert read_json(out / "run_000" / "violations.json") == []


def test_manifest_records_the_run(toy_run):
    out, _, _ = toy_run
    manifest = read_json(out / "manifest.json")
    assert manifest["status"] == "complete"
    assert manifest["failure"] is None
    assert manifest["scenario"]["name"] == "toy1d"
    assert "numpy" in manifest["packages"]
    assert manifest["runs"][0]["dir"] == "run_000"
    assert manifest["runs"][0]["converged"]
    assert manifest["runs"][0]["violations"] == 0


def test_oracle_comparison_agrees(toy_run):
    """N*m = 2 with a single stored pair triggers the brute-force comparison."""
    out, _, _ = toy_run
    rows = read_json(out / "oracle.json")
    assert len(rows) == 1 + cli.config.ORACLE_RANDOM_STATES
    assert all(row["agrees"] for row in rows)


def test_report_summarises_a_run(toy_run, captured_logger):
    out, _, _ = toy_run
    assert cli.report_run(out, captured_logger) == cli.EXIT_OK
    text = "\n".join(captured_logger.messages)
    assert "toy1d (complete" in text
    assert "run_000" in text
    assert "oracle: 21/21" in text


def test_plot_verb_writes_svg(toy_run):
    """A 1-D run has a time series figure and no projection."""
    out, _, _ = toy_run
    assert cli.main(["plot", str(out)]) == cli.EXIT_OK
    assert (out / "plots" / "run_000_timeseries.svg").exists()
    assert not (out / "plots" / "run_000_projection.svg").exists()


def test_runs_are_reproducible(toy_run, tmp_path):
    out, _, _ = toy_run
    code = cli.run_scenario(load_scenario("toy1d"), tmp_path, cli.AppLogger(lambda m: None))
    assert code == cli.EXIT_OK
    first = (out / "run_000" / "trajectory.csv").read_bytes()
    assert (tmp_path / "run_000" / "trajectory.csv").read_bytes() == first


def test_validate_builtin_and_file(tmp_path, capsys):
    assert cli.main(["validate", "toy1d"]) == cli.EXIT_OK
    assert "toy1d: model=linear n=1 m=1" in capsys.readouterr().err
    path = save_scenario(load_scenario("lithium"), tmp_path / "lithium.json")
    assert cli.main(["validate", str(path)]) == cli.EXIT_OK


def test_validate_bad_scenario(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"model": "lithium", "sim": {"K": 0}}')
    assert cli.main(["validate", str(path)]) == cli.EXIT_BAD_INPUT
    assert "sim.K" in capsys.readouterr().err


def test_empty_target_fails_fast(tmp_path, mocker, captured_logger):
    """An empty target set stops the run after the sets are written."""
    mocker.patch(
        "cli.find_target_equilibria",
        return_value=EquilibriumSetApprox([], np.zeros((0, 11, 1)), 10),
    )
    code = cli.run_scenario(load_scenario("toy1d"), tmp_path, captured_logger)
    assert code == cli.EXIT_FAILED
    assert (tmp_path / "feasible_set.json").exists()
    assert (tmp_path / "equilibria.json").exists()
    assert not (tmp_path / "run_000").exists()
    manifest = read_json(tmp_path / "manifest.json")
    assert manifest["status"] == "failed"
    assert "empty" in manifest["failure"]
    assert any("[FATAL]" in m for m in captured_logger.messages)


def test_stage_failure_names_the_stage(tmp_path, mocker, captured_logger):
    mocker.patch("cli.run_closed_loops", side_effect=RuntimeError("solver exploded"))
    code = cli.run_scenario(load_scenario("toy1d"), tmp_path, captured_logger)
    assert code == cli.EXIT_FAILED
    fatal = [m for m in captured_logger.messages if "[FATAL]" in m]
    assert len(fatal) == 1
    assert "Closed loop" in fatal[0]
    assert "solver exploded" in fatal[0]


def test_unconverged_solve_gives_failure_code(tmp_path, mocker):
    mocker.patch.object(cli.RunResult, "converged", new_callable=mocker.PropertyMock,
                        return_value=False)
    code = cli.run_scenario(load_scenario("toy1d"), tmp_path, cli.AppLogger(lambda m: None))
    assert code == cli.EXIT_FAILED
    assert read_json(tmp_path / "manifest.json")["status"] == "complete"


def test_sets_verb_writes_sets(tmp_path):
    assert cli.main(["sets", "toy1d", "-o", str(tmp_path)]) == cli.EXIT_OK
    target = EquilibriumSetApprox.from_dict(read_json(tmp_path / "equilibria.json"))
    assert len(target) == 1
    assert np.allclose(target.pairs[0].x_s, 0.0)
    assert (tmp_path / "lipschitz.json").exists()


def test_report_of_missing_directory(tmp_path, capsys):
    assert cli.main(["report", str(tmp_path / "nothing")]) == cli.EXIT_FAILED
    assert "[FATAL]" in capsys.readouterr().err


def test_debug_flag_forces_debug_level(monkeypatch, tmp_path):
    monkeypatch.delenv(cli.config.LOG_LEVEL_ENV, raising=False)
    logger = cli.make_logger(debug=True, log_file=tmp_path / "run.log")
    assert logger.level == "Debug"
    logger.info("hello")
    assert "hello" in (tmp_path / "run.log").read_text()


def test_log_file_is_not_held_open(monkeypatch, tmp_path):
    """Removing run.log between messages starts a fresh file with only the later message."""
    monkeypatch.delenv(cli.config.LOG_LEVEL_ENV, raising=False)
    path = tmp_path / "logs" / "run.log"
    logger = cli.make_logger(log_file=path)
    logger.info("first")
    path.unlink()
    logger.info("second")
    assert path.read_text() == "second\n"


def test_converged_ignores_early_statuses():
    """Solves before the first converged one do not count against the run."""
    controller = type("Stub", (), {})()
    controller.status_history = ["infeasible", "converged", "converged"]
    result = cli.RunResult(0, np.zeros(1), None, controller)
    assert result.converged
    controller.status_history = ["converged", "max_iter", "converged"]
    assert not result.converged
    controller.status_history = ["infeasible"]
    assert not result.converged


@pytest.mark.slow
def test_lithium_closed_loop_reaches_the_window(tmp_path):
    """Inputs stay in U, no state leaves X and the tail of the run sits in X*."""
    scenario = load_scenario("lithium")
    code = cli.run_scenario(scenario, tmp_path, cli.AppLogger(lambda m: None), jobs=2)
    assert code == cli.EXIT_OK
    for index in range(len(scenario.x0_list)):
        run = tmp_path / f"run_{index:03d}"
        assert read_json(run / "violations.json") == []
        _, jumps = read_csv_array(run / "jumps.csv")
        assert np.all(jumps[:, 2] >= scenario.U.lower[0] - 1e-9)
        assert np.all(jumps[:, 2] <= scenario.U.upper[0] + 1e-9)
        _, trajectory = read_csv_array(run / "trajectory.csv")
        tail = trajectory[int(0.7 * len(trajectory)):, 1:]
        assert np.all(tail >= scenario.Xstar.lower - 1e-3)
        assert np.all(tail <= scenario.Xstar.upper + 1e-3)
        verdicts = read_json(run / "stability.json")["verdicts"]
        assert verdicts["orbit_inequality_holds"]
        assert verdicts["beam_bound_holds"]


@pytest.mark.slow
def test_hiv_window_above_the_healthy_level_has_no_target(tmp_path, captured_logger):
    """No HIV control equilibrium keeps T_c within [900, 1000]; the run stops early."""
    code = cli.run_scenario(load_scenario("hiv"), tmp_path, captured_logger)
    assert code == cli.EXIT_FAILED
    assert read_json(tmp_path / "manifest.json")["status"] == "failed"
    assert any("[FATAL]" in m for m in captured_logger.messages)


@pytest.mark.slow
def test_hiv_healthy_closed_loop_settles_in_the_window(tmp_path):
    """After 20 untreated days and 200 treated ones the last 20 days sit in X* with z < 50."""
    scenario = load_scenario("hiv_healthy")
    code = cli.run_scenario(scenario, tmp_path, cli.AppLogger(lambda m: None))
    assert code == cli.EXIT_OK
    run = tmp_path / "run_000"
    _, trajectory = read_csv_array(run / "trajectory.csv")
    assert trajectory[-1, 0] == pytest.approx(220.0)
    tail = trajectory[trajectory[:, 0] >= trajectory[-1, 0] - 20.0, 1:]
    slack = 1e-2 * (scenario.X.upper - scenario.X.lower)
    assert np.all(tail >= scenario.Xstar.lower - slack)
    assert np.all(tail <= scenario.Xstar.upper + slack)
    assert np.all(tail[:, 2] < 50.0)
    assert read_json(run / "violations.json") == []
    verdicts = read_json(run / "stability.json")["verdicts"]
    assert verdicts["orbit_inequality_holds"]
    assert verdicts["beam_bound_holds"]
