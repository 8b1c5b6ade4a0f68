# scenarios.py
#
# Scenario files and the built-in case studies. A scenario is a JSON object;
# it may name a built-in model ("model": "lithium") and override any of its
# fields. Run manifests embed the scenario under "scenario" and load back
# unchanged.

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import config
from dynamics import IntegratorConfig, VectorField
from geometry import Box, ImpulsiveControlError
from impulsive import ImpulsiveSystem
from mpc import MpcConfig
from utils import to_jsonable, write_json

SET_METHODS = ("mesh_hull", "lipschitz_ball", "box")


class ScenarioError(ImpulsiveControlError, ValueError):
    """A scenario could not be parsed or is inconsistent."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.field = field
        self.line = line


# --- Built-in models ---

LITHIUM_A = [
    [-0.6137, 0.1835, 0.2406],
    [1.2644, -0.8, 0.0],
    [0.2054, 0.0, -0.19],
]

HIV_PARAMS = {
    "s": 10.0,
    "delta": 0.02,
    "beta": 2.4e-5,
    "mu": 0.24,
    "k": 100.0,
    "c": 2.4,
    "Kw": 5.3,
    "w50": 50.0,
}


def hiv_field(params: dict) -> VectorField:
    """
    Healthy CD4 cells T_c, infected cells y, free virus z and drug amount w;
    the drug scales virus production by w50 / (w + w50).
    """
    s, delta, beta = params["s"], params["delta"], params["beta"]
    mu, k, c = params["mu"], params["k"], params["c"]
    kw, w50 = params["Kw"], params["w50"]

    def func(x):
        tc, y, z, w = x[0], x[1], x[2], x[3]
        infection = beta * tc * z
        return np.stack([
            s - delta * tc - infection,
            infection - mu * y,
            w50 / (w + w50) * k * y - c * z,
            -kw * w,
        ])

    def jacobian(x):
        tc, y, z, w = x
        damp = w50 / (w + w50)
        return np.array([
            [-delta - beta * z, 0.0, -beta * tc, 0.0],
            [beta * z, -mu, beta * tc, 0.0],
            [0.0, k * damp, -c, -k * y * w50 / (w + w50) ** 2],
            [0.0, 0.0, 0.0, -kw],
        ])

    return VectorField(dim=4, func=func, jacobian=jacobian, name="hiv")


def hiv_r0(params: dict) -> float:
    """Basic reproduction number beta k s / (mu c delta)."""
    return params["beta"] * params["k"] * params["s"] / (params["mu"] * params["c"] * params["delta"])


def hiv_healthy_equilibrium(params: dict) -> np.ndarray:
    return np.array([params["s"] / params["delta"], 0.0, 0.0, 0.0])


def hiv_endemic_equilibrium(params: dict) -> np.ndarray:
    """Untreated endemic state; exists when R0 > 1."""
    tc = params["mu"] * params["c"] / (params["beta"] * params["k"])
    y = (params["s"] - params["delta"] * tc) / params["mu"]
    z = params["k"] * y / params["c"]
    return np.array([tc, y, z, 0.0])


BUILTINS: dict[str, dict] = {
    "lithium": {
        "name": "lithium",
        "model": "lithium",
        "params": {"A": LITHIUM_A, "B": [[10.9], [0.0], [0.0]]},
        "T": 3.0,
        "X": {"lower": [0.0, 0.0, 0.0], "upper": [2.0, 1.2, 1.2]},
        "U": {"lower": [0.0], "upper": [5.95]},
        "Xstar": {"lower": [0.4, 0.6, 0.5], "upper": [0.6, 0.9, 0.8]},
        "x0_list": [[0.2, 0.0, 0.0], [1.579, 0.0, 0.0]],
        "mpc": {"N": 5, "Q": [1.0, 1.0, 1.0], "R": 2.0, "gamma": 100.0},
        "sim": {"K": 60, "samples_per_period": 50, "warmup_time": 0.0,
                "first_jump_at_zero": True},
        "set_construction": {"method": "mesh_hull", "mesh_per_dim": 20, "m": 30,
                             "grid_per_dim": 15, "orbit_resolution": 30,
                             "include_initial_states": True},
        "integrator": {"method": "rk45"},
        "analysis": {"eps": 0.05, "settle_fraction": 0.3},
        "seed": 0,
    },
    "hiv": {
        "name": "hiv",
        "model": "hiv",
        "params": dict(HIV_PARAMS),
        "T": 0.5,
        "X": {"lower": [0.0, 0.0, 0.0, 0.0], "upper": [1200.0, 100.0, 3000.0, 1000.0]},
        "U": {"lower": [0.0], "upper": [610.0]},
        "Xstar": {"lower": [900.0, 0.0, 0.0, 0.0], "upper": [1000.0, 5.0, 250.0, 650.0]},
        "x0_list": [[240.0, 63.33, 2639.0, 0.0]],
        "mpc": {"N": 10, "Q": 5.0, "R": 1.0, "gamma": 5e6, "multistart": 4,
                "max_iter": 60, "max_outer": 4},
        "sim": {"K": 400, "samples_per_period": 10, "warmup_time": 20.0,
                "first_jump_at_zero": True},
        "set_construction": {"method": "mesh_hull", "mesh_per_dim": 6, "m": 10,
                             "grid_per_dim": 8, "orbit_resolution": 20,
                             "include_initial_states": True},
        "integrator": {"method": "rk4", "max_step": 0.05},
        "analysis": {"eps": 50.0, "settle_fraction": 0.1},
        "seed": 0,
    },
    "toy1d": {
        "name": "toy1d",
        "model": "linear",
        "params": {"A": [[-1.0]], "B": [[1.0]]},
        "T": float(np.log(2.0)),
        "X": {"lower": [-10.0], "upper": [10.0]},
        "U": {"lower": [-10.0], "upper": [10.0]},
        "Xstar": {"lower": [0.0], "upper": [0.0]},
        "x0_list": [[1.0]],
        "mpc": {"N": 2, "Q": 1.0, "R": 1.0, "gamma": 1000.0},
        "sim": {"K": 20, "samples_per_period": 20, "warmup_time": 0.0,
                "first_jump_at_zero": True},
        "set_construction": {"method": "box", "m": 20, "grid_per_dim": 1,
                             "orbit_resolution": 10, "include_initial_states": False},
        "integrator": {"method": "rk45"},
        "analysis": {"eps": 0.05, "settle_fraction": 0.3},
        "seed": 0,
    },
}

# Same dynamics as "hiv" with the T_c floor of the target window lowered to
# 450: orbits with T_c above s/delta = 500 always lose T_c, so the "hiv"
# window [900, 1000] holds no control equilibrium.
BUILTINS["hiv_healthy"] = copy.deepcopy(BUILTINS["hiv"])
BUILTINS["hiv_healthy"].update({
    "name": "hiv_healthy",
    "model": "hiv",
    "Xstar": {"lower": [450.0, 0.0, 0.0, 0.0], "upper": [1000.0, 5.0, 250.0, 650.0]},
})


@dataclass
class Scenario:
    name: str
    model: str
    params: dict
    T: float
    X: Box
    U: Box
    Xstar: Box
    x0_list: list[np.ndarray]
    mpc: dict
    sim: dict
    set_construction: dict
    integrator: dict = field(default_factory=dict)
    analysis: dict = field(default_factory=dict)
    seed: int = 0

    @property
    def n(self) -> int:
        return self.X.dim

    @property
    def m(self) -> int:
        return self.U.dim

    def to_dict(self) -> dict:
        return to_jsonable({
            "name": self.name,
            "model": self.model,
            "params": self.params,
            "T": self.T,
            "X": {"lower": self.X.lower, "upper": self.X.upper},
            "U": {"lower": self.U.lower, "upper": self.U.upper},
            "Xstar": {"lower": self.Xstar.lower, "upper": self.Xstar.upper},
            "x0_list": self.x0_list,
            "mpc": self.mpc,
            "sim": self.sim,
            "set_construction": self.set_construction,
            "integrator": self.integrator,
            "analysis": self.analysis,
            "seed": self.seed,
        })


def _merge(base: dict, overrides: dict) -> dict:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict) and key != "params":
            merged[key] = _merge(merged[key], value)
        elif isinstance(value, dict) and key == "params" and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _box(raw, name: str) -> Box:
    try:
        return Box(raw["lower"], raw["upper"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"invalid box: {exc}", field=name) from None


def _positive_int(section: dict, key: str, where: str) -> None:
    if key in section and (not isinstance(section[key], int) or section[key] < 1):
        raise ScenarioError("must be a positive integer", field=f"{where}.{key}")


def scenario_from_dict(raw: dict) -> Scenario:
    """Expands a built-in reference, applies overrides and validates."""
    if not isinstance(raw, dict):
        raise ScenarioError("scenario must be a JSON object")
    model = raw.get("model")
    if model in BUILTINS:
        data = _merge(BUILTINS[model], raw)
        data["model"] = BUILTINS[model]["model"]
    else:
        data = copy.deepcopy(raw)
    if data.get("model") not in ("lithium", "hiv", "linear"):
        raise ScenarioError(f"unknown model {data.get('model')!r}", field="model")

    required = ("T", "X", "U", "Xstar", "x0_list", "mpc", "sim", "set_construction")
    for key in required:
        if key not in data:
            raise ScenarioError("missing", field=key)
    params = data.get("params", {})
    if data["model"] in ("lithium", "linear"):
        for key in ("A", "B"):
            if key not in params:
                raise ScenarioError("linear models need A and B", field=f"params.{key}")
    else:
        missing = [k for k in HIV_PARAMS if k not in params]
        if missing:
            raise ScenarioError(f"missing {missing}", field="params")

    try:
        T = float(data["T"])
    except (TypeError, ValueError):
        raise ScenarioError("must be a number", field="T") from None
    if T <= 0:
        raise ScenarioError("must be positive", field="T")

    X = _box(data["X"], "X")
    U = _box(data["U"], "U")
    Xstar = _box(data["Xstar"], "Xstar")
    if Xstar.dim != X.dim:
        raise ScenarioError("dimension differs from X", field="Xstar")
    if not X.contains_box(Xstar, config.MEMBERSHIP_TOL):
        raise ScenarioError("must lie inside X", field="Xstar")

    x0_list = []
    for i, x0 in enumerate(data["x0_list"]):
        arr = np.asarray(x0, dtype=float)
        if arr.shape != (X.dim,):
            raise ScenarioError(f"entry {i} has shape {arr.shape}", field="x0_list")
        if np.any(arr < X.lower - config.MEMBERSHIP_TOL) or np.any(arr > X.upper + config.MEMBERSHIP_TOL):
            raise ScenarioError(f"entry {i} lies outside X", field="x0_list")
        x0_list.append(arr)

    sets = data["set_construction"]
    if sets.get("method", "mesh_hull") not in SET_METHODS:
        raise ScenarioError(f"must be one of {SET_METHODS}", field="set_construction.method")
    for key in ("mesh_per_dim", "m", "grid_per_dim", "orbit_resolution"):
        _positive_int(sets, key, "set_construction")
    _positive_int(data["sim"], "K", "sim")
    _positive_int(data["sim"], "samples_per_period", "sim")
    for key in ("N", "gamma", "Q", "R"):
        if key not in data["mpc"]:
            raise ScenarioError("missing", field=f"mpc.{key}")
    _positive_int(data["mpc"], "N", "mpc")

    scenario = Scenario(
        name=str(data.get("name", data["model"])),
        model=data["model"],
        params=params,
        T=T,
        X=X,
        U=U,
        Xstar=Xstar,
        x0_list=x0_list,
        mpc=data["mpc"],
        sim=data["sim"],
        set_construction=sets,
        integrator=data.get("integrator", {}),
        analysis=data.get("analysis", {}),
        seed=int(data.get("seed", 0)),
    )
    try:
        system = build_system(scenario)
        mpc_config(scenario)
    except ScenarioError:
        raise
    except TypeError as exc:
        raise ScenarioError(str(exc), field="integrator") from None
    except ValueError as exc:
        raise ScenarioError(str(exc), field="params") from None
    if system.m != U.dim:
        raise ScenarioError("input dimension differs from B", field="U")
    return scenario


def load_scenario(source: str | Path) -> Scenario:
    """A built-in name, a scenario JSON file or a run manifest."""
    if isinstance(source, str) and source in BUILTINS:
        return scenario_from_dict({"model": source})
    path = Path(source)
    if not path.exists():
        raise ScenarioError(f"no built-in scenario or file named {source!r}")
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path.name}: {exc.msg} at column {exc.colno}", line=exc.lineno) from None
    if isinstance(raw, dict) and "scenario" in raw:
        raw = raw["scenario"]
    return scenario_from_dict(raw)


def save_scenario(scenario: Scenario, path: str | Path) -> Path:
    return write_json(Path(path), scenario.to_dict())


def build_field(scenario: Scenario) -> VectorField:
    if scenario.model == "hiv":
        return hiv_field(scenario.params)
    return VectorField.linear(scenario.params["A"], name=scenario.name)


def build_system(scenario: Scenario) -> ImpulsiveSystem:
    field_ = build_field(scenario)
    if field_.dim != scenario.n:
        raise ScenarioError(f"model has dimension {field_.dim}, X has {scenario.n}", field="X")
    if scenario.model == "hiv":
        B = np.array([[0.0], [0.0], [0.0], [1.0]])
    else:
        B = np.asarray(scenario.params["B"], dtype=float)
    integrator = IntegratorConfig(**scenario.integrator)
    return ImpulsiveSystem(field_, B, scenario.T, scenario.X, scenario.U,
                           integrator=integrator, name=scenario.name)


def mpc_config(scenario: Scenario) -> MpcConfig:
    values = dict(scenario.mpc)
    values.setdefault("seed", scenario.seed)
    try:
        return MpcConfig.from_mapping(values, scenario.n, scenario.m)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc), field="mpc") from None
