# tests/test_scenarios.py

import json

import numpy as np
import pytest

from scenarios import (
    BUILTINS,
    HIV_PARAMS,
    ScenarioError,
    build_system,
    hiv_endemic_equilibrium,
    hiv_field,
    hiv_healthy_equilibrium,
    hiv_r0,
    load_scenario,
    mpc_config,
    save_scenario,
    scenario_from_dict,
)


def test_hiv_parameter_arithmetic():
    """mu c / (beta k) is the untreated T_c level 240 and R0 exceeds one."""
    p = HIV_PARAMS
    assert p["mu"] * p["c"] / (p["beta"] * p["k"]) == pytest.approx(240.0)
    assert hiv_r0(p) == pytest.approx(2.0833, rel=1e-4)
    assert hiv_r0(p) > 1.0


def test_hiv_equilibria_are_rest_points():
    """The healthy and endemic states are zeros of the untreated field."""
    field = hiv_field(HIV_PARAMS)
    healthy = hiv_healthy_equilibrium(HIV_PARAMS)
    endemic = hiv_endemic_equilibrium(HIV_PARAMS)
    assert np.allclose(healthy, [500.0, 0.0, 0.0, 0.0])
    assert np.allclose(endemic[0], 240.0)
    assert np.allclose(field.evaluate(healthy), 0.0, atol=1e-9)
    assert np.allclose(field.evaluate(endemic), 0.0, atol=1e-9)


def test_hiv_jacobian_matches_finite_differences():
    field = hiv_field(HIV_PARAMS)
    x = np.array([400.0, 20.0, 800.0, 30.0])
    h = 1e-4
    numeric = np.column_stack([
        (field.evaluate(x + h * e) - field.evaluate(x - h * e)) / (2 * h) for e in np.eye(4)
    ])
    assert np.allclose(field.jac(x), numeric, rtol=1e-5, atol=1e-8)


def test_lithium_builtin_expands():
    scenario = load_scenario("lithium")
    assert scenario.T == 3.0
    assert np.allclose(scenario.X.upper, [2.0, 1.2, 1.2])
    assert np.allclose(scenario.U.upper, [5.95])
    assert np.allclose(scenario.Xstar.lower, [0.4, 0.6, 0.5])
    cfg = mpc_config(scenario)
    assert cfg.N == 5 and cfg.gamma == 100.0
    assert np.allclose(cfg.Q, np.eye(3))
    assert np.allclose(cfg.R, [[2.0]])
    sys = build_system(scenario)
    assert np.allclose(sys.B[:, 0], [10.9, 0.0, 0.0])


def test_hiv_builtin_expands():
    scenario = load_scenario("hiv")
    cfg = mpc_config(scenario)
    assert np.allclose(cfg.Q, 5.0 * np.eye(4))
    assert cfg.gamma == 5e6 and cfg.N == 10
    assert np.allclose(scenario.x0_list[0], [240.0, 63.33, 2639.0, 0.0])
    sys = build_system(scenario)
    assert np.allclose(sys.B[:, 0], [0.0, 0.0, 0.0, 1.0])
    assert sys.integrator.method == "rk4"


def test_builtins_round_trip(tmp_path):
    """Every built-in survives save and load unchanged."""
    for name in BUILTINS:
        scenario = load_scenario(name)
        path = save_scenario(scenario, tmp_path / f"{name}.json")
        assert load_scenario(path).to_dict() == scenario.to_dict()


def test_manifest_is_a_scenario_source(tmp_path):
    scenario = load_scenario("toy1d")
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"app": "x", "scenario": scenario.to_dict()}))
    assert load_scenario(path).to_dict() == scenario.to_dict()


def test_override_of_builtin():
    scenario = scenario_from_dict({"model": "lithium", "mpc": {"N": 3}, "sim": {"K": 12}})
    assert scenario.mpc["N"] == 3
    assert scenario.mpc["gamma"] == 100.0
    assert scenario.sim["K"] == 12
    assert scenario.sim["samples_per_period"] == 50


def test_window_outside_x_names_the_field():
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"model": "lithium", "Xstar": {"lower": [0.4, 0.6, 0.5],
                                                          "upper": [0.6, 1.5, 0.8]}})
    assert info.value.field == "Xstar"
    assert "Xstar" in str(info.value)


def test_initial_state_outside_x():
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"model": "lithium", "x0_list": [[3.0, 0.0, 0.0]]})
    assert info.value.field == "x0_list"


def test_bad_resolution_and_unknown_model():
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"model": "lithium", "sim": {"K": 0}})
    assert info.value.field == "sim.K"
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"model": "pendulum"})
    assert info.value.field == "model"


def test_bad_mpc_weights_name_the_section():
    with pytest.raises(ScenarioError) as info:
        scenario_from_dict({"model": "lithium", "mpc": {"Q": [1.0, -1.0, 1.0]}})
    assert info.value.field == "mpc"


def test_parse_error_reports_line(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "model": "lithium",\n  "T": ,\n}\n')
    with pytest.raises(ScenarioError) as info:
        load_scenario(path)
    assert info.value.line == 3


def test_missing_file():
    with pytest.raises(ScenarioError):
        load_scenario("no_such_scenario.json")
