# tests/test_plotting.py

import numpy as np
import pytest

from plotting import PlotError, plot_run, plot_timeseries
from scenarios import load_scenario
from utils import write_csv, write_json


@pytest.fixture
def lithium_run_dir(tmp_path):
    """A hand-made lithium run directory with two short arcs and one jump."""
    scenario = load_scenario("lithium")
    write_json(tmp_path / "manifest.json", {"scenario": scenario.to_dict(), "runs": []})
    write_json(tmp_path / "feasible_set.json", {
        "method": "box",
        "region": {"type": "box", "lower": [0.0, 0.0, 0.0], "upper": [2.0, 1.2, 1.2]},
        "certificate": [],
        "diagnostics": {},
    })
    orbit = np.tile([0.5, 0.7, 0.6], (4, 1))
    write_json(tmp_path / "equilibria.json", {"orbits": [orbit.tolist()]})
    run = tmp_path / "run_000"
    run.mkdir()
    t = np.linspace(0.0, 6.0, 7)
    states = np.column_stack([np.linspace(1.0, 0.5, 7), np.full(7, 0.7), np.full(7, 0.6)])
    write_csv(run / "trajectory.csv", ["t", "x_1", "x_2", "x_3"],
              np.column_stack([t, states]))
    write_csv(run / "jumps.csv", ["k", "t", "u_1", "x_pre_1", "x_pre_2", "x_pre_3",
                                  "x_post_1", "x_post_2", "x_post_3"],
              [[0, 0.0, 0.4, 0.7, 0.7, 0.6, 1.0, 0.7, 0.6],
               [1, 3.0, 0.3, 0.5, 0.7, 0.6, 0.75, 0.7, 0.6]])
    return tmp_path


def test_plot_run_writes_both_figures(lithium_run_dir, captured_logger):
    written = plot_run(lithium_run_dir, captured_logger)
    names = sorted(p.name for p in written)
    assert names == ["run_000_projection.svg", "run_000_timeseries.svg"]
    for path in written:
        assert path.read_text().lstrip().startswith("<?xml")
    assert any("Plotted run_000" in m for m in captured_logger.messages)


def test_plot_run_without_runs(lithium_run_dir):
    (lithium_run_dir / "run_000" / "trajectory.csv").unlink()
    (lithium_run_dir / "run_000" / "jumps.csv").unlink()
    (lithium_run_dir / "run_000").rmdir()
    with pytest.raises(PlotError):
        plot_run(lithium_run_dir)


def test_plot_run_missing_sets(lithium_run_dir):
    (lithium_run_dir / "equilibria.json").unlink()
    with pytest.raises(PlotError, match="equilibria.json"):
        plot_run(lithium_run_dir)


def test_empty_trajectory_is_refused(tmp_path):
    with pytest.raises(PlotError):
        plot_timeseries(np.zeros((0, 2)), np.zeros((0, 5)), ["t", "x_1"], 1, 1,
                        {"lower": [0.0], "upper": [0.0]}, tmp_path / "x.svg")
