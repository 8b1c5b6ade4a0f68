# cli.py
#
# Command-line front end. `run` builds X_d and the target equilibria, runs
# the MPC closed loop from every initial state and writes CSV/JSON outputs
# into a run directory; the other verbs validate scenarios, build the sets
# alone, plot or summarise a run directory and sweep rings of initial states.

import argparse
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable

import numpy as np

import config
from analysis import StabilityReport, build_stability_report, empirical_delta_table
from dynamics import LipschitzEstimate, flow_lipschitz_bounds
from equilibria import (
    EMPTY_TARGET_MESSAGE,
    EquilibriumSetApprox,
    FeasibleSetResult,
    build_xd_lipschitz_ball,
    build_xd_mesh_hull,
    find_target_equilibria,
)
from geometry import ImpulsiveControlError, sample_region
from impulsive import (
    DiscreteTrajectory,
    HybridTrajectory,
    ImpulsiveSystem,
    concatenate,
    feasible_mask,
    simulate_closed_loop,
)
from logger import AppLogger
from mpc import (
    EmptyTargetError,
    MpcController,
    MpcProblem,
    brute_force_solve,
    kappa_mpc,
    solve,
)
from plotting import plot_run
from scenarios import Scenario, ScenarioError, build_system, load_scenario, mpc_config
from utils import package_versions, read_json, write_csv, write_json
from version import __version__

TrajectoryPair = tuple[HybridTrajectory, DiscreteTrajectory]

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_BAD_INPUT = 2


class StageError(ImpulsiveControlError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def make_logger(debug: bool = False, log_file: Path | None = None) -> AppLogger:
    """
    Logger writing to stderr and, when given, appending to log_file, which is
    opened for each message and closed again. The level comes from the
    environment unless --debug forces it.
    """
    lock = threading.Lock()
    if log_file is not None:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)

    def callback(message: str) -> None:
        with lock:
            print(message, file=sys.stderr, flush=True)
            if log_file is not None:
                with open(log_file, "a", encoding="utf-8") as handle:
                    handle.write(message + "\n")

    logger = AppLogger.from_env(callback)
    if debug:
        logger.level = "Debug"
    return logger


def _stage(name: str, logger: AppLogger, func: Callable, *args, **kwargs):
    logger.info(f"\n--- {name} ---")
    try:
        return func(*args, **kwargs)
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class SetsResult:
    system: ImpulsiveSystem
    lipschitz: LipschitzEstimate
    feasible: FeasibleSetResult
    target: EquilibriumSetApprox


@dataclass
class RunResult:
    index: int
    x0: np.ndarray
    trajectory: TrajectoryPair
    controller: MpcController
    report: StabilityReport | None = None

    @property
    def converged(self) -> bool:
        """True iff every solve from the first converged one onwards converged."""
        history = self.controller.status_history
        if "converged" not in history:
            return False
        first = history.index("converged")
        return all(status == "converged" for status in history[first:])


def _zero_input(m: int) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: np.zeros(m)


def warm_up(scenario: Scenario, system: ImpulsiveSystem,
            logger: AppLogger) -> list[TrajectoryPair | None]:
    """Open-loop (u = 0) pre-treatment phase for every initial state."""
    sim = scenario.sim
    warmup = sim.get("warmup_time", sim.get("warmup_days", 0.0))
    periods = int(round(float(warmup) / system.T))
    if periods <= 0:
        return [None] * len(scenario.x0_list)
    spp = scenario.sim.get("samples_per_period", config.SAMPLES_PER_PERIOD)
    logger.info(f"  > {periods} open-loop periods before the controller engages")
    return [
        simulate_closed_loop(system, _zero_input(system.m), x0, periods, spp, logger=logger)
        for x0 in scenario.x0_list
    ]


def build_feasible_set(scenario: Scenario, system: ImpulsiveSystem,
                       lipschitz: LipschitzEstimate, extra_points: np.ndarray | None,
                       logger: AppLogger) -> FeasibleSetResult:
    sets = scenario.set_construction
    method = sets.get("method", "mesh_hull")
    m = sets.get("m", config.ORBIT_RESOLUTION)
    if method == "mesh_hull":
        return build_xd_mesh_hull(
            system, sets.get("mesh_per_dim", 20), m, extra_points=extra_points,
            seed=scenario.seed, logger=logger,
        )
    if method == "lipschitz_ball":
        x_star = np.asarray(sets.get("x_star", scenario.Xstar.center), dtype=float)
        return build_xd_lipschitz_ball(
            system, x_star, lipschitz.c_phi_used, m, seed=scenario.seed, logger=logger
        )
    # "box": the whole of X, for systems whose orbits never leave it
    rng = np.random.default_rng(scenario.seed)
    points = sample_region(system.X, config.HULL_CHECK_POINTS, rng)
    passed = feasible_mask(system, points, m)
    if not passed.all():
        logger.warning(f"X_d box: {int((~passed).sum())} sampled points leave X along their orbit")
    return FeasibleSetResult(
        region=system.X,
        method="box",
        certificate=points[passed],
        diagnostics={"m": m, "certificate_failures": int((~passed).sum())},
    )


def build_sets(scenario: Scenario, logger: AppLogger,
               warmups: list[TrajectoryPair | None] | None = None) -> SetsResult:
    """Lipschitz bounds, X_d and the target equilibria of a scenario."""
    system = build_system(scenario)
    lipschitz = flow_lipschitz_bounds(system.field, system.T, system.X)
    logger.info(
        f"  > C_f = {lipschitz.c_f:.4g}, e^(T C_f) = {lipschitz.c_phi_exp:.4g}, "
        f"C_phi used = {lipschitz.c_phi_used:.4g}"
    )

    extra = None
    if scenario.set_construction.get("include_initial_states", False):
        points = list(scenario.x0_list)
        points += [pair[0].final_state for pair in (warmups or []) if pair is not None]
        extra = np.vstack(points)
    feasible = build_feasible_set(scenario, system, lipschitz, extra, logger)

    sets = scenario.set_construction
    target = find_target_equilibria(
        system,
        scenario.Xstar,
        grid_per_dim=sets.get("grid_per_dim", config.TARGET_GRID_PER_DIM),
        orbit_resolution=sets.get("orbit_resolution", config.ORBIT_RESOLUTION),
        logger=logger,
    )
    return SetsResult(system.with_xd(feasible.region), lipschitz, feasible, target)


def _closed_loop(prob: MpcProblem, scenario: Scenario, index: int, x0: np.ndarray,
                 warm: TrajectoryPair | None, logger: AppLogger) -> RunResult:
    sim = scenario.sim
    controller = kappa_mpc(prob, logger)
    start, t0 = x0, 0.0
    if warm is not None:
        start, t0 = warm[0].final_state, warm[0].final_time
    trajectory = simulate_closed_loop(
        prob.sys,
        controller,
        start,
        sim["K"],
        sim.get("samples_per_period", config.SAMPLES_PER_PERIOD),
        first_jump_at_zero=sim.get("first_jump_at_zero", True),
        t0=t0,
        logger=logger,
    )
    if warm is not None:
        trajectory = concatenate(warm, trajectory)
    logger.info(
        f"  > run {index}: {len(controller.solutions)} solves, "
        f"{len(trajectory[0].violations)} constraint violations"
    )
    return RunResult(index, x0, trajectory, controller)


def run_closed_loops(prob: MpcProblem, scenario: Scenario,
                     warmups: list[TrajectoryPair | None], jobs: int,
                     logger: AppLogger) -> list[RunResult]:
    """One fresh controller per initial state; runs in parallel when jobs > 1."""
    items = list(enumerate(zip(scenario.x0_list, warmups)))

    def run(item):
        index, (x0, warm) = item
        return _closed_loop(prob, scenario, index, x0, warm, logger)

    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(run, items))
    return [run(item) for item in items]


def oracle_comparison(prob: MpcProblem, scenario: Scenario, logger: AppLogger) -> list[dict]:
    """solve against brute_force_solve on the initial states and a few random ones."""
    rng = np.random.default_rng(scenario.seed)
    lower = np.maximum(scenario.X.lower, -5.0)
    upper = np.minimum(scenario.X.upper, 5.0)
    states = list(scenario.x0_list) + list(
        rng.uniform(lower, upper, size=(config.ORACLE_RANDOM_STATES, scenario.n))
    )
    rows = []
    for x in states:
        fast = solve(prob, x, logger=logger)
        exact = brute_force_solve(prob, x, config.ORACLE_GRID_PER_INPUT,
                                  zoom_levels=config.ORACLE_ZOOM_LEVELS)
        gap = fast.cost - exact.cost
        rows.append({
            "x": x,
            "solve_cost": fast.cost,
            "solve_status": fast.status,
            "brute_force_cost": exact.cost,
            "gap": gap,
            "agrees": bool(abs(gap) <= config.ORACLE_TOL * max(1.0, abs(exact.cost))),
        })
        logger.info(f"  > x={np.array2string(np.asarray(x), precision=3)}: "
                    f"solve {fast.cost:.6g} vs brute force {exact.cost:.6g}")
    return rows


def _numbered(prefix: str, count: int) -> list[str]:
    return [f"{prefix}_{i + 1}" for i in range(count)]


def write_run_outputs(run_dir: Path, result: RunResult, n: int, m: int) -> None:
    hybrid, discrete = result.trajectory
    times, states = hybrid.samples()
    write_csv(
        run_dir / "trajectory.csv",
        ["t"] + _numbered("x", n),
        (np.concatenate([[t], x]) for t, x in zip(times, states)),
    )
    write_csv(
        run_dir / "jumps.csv",
        ["k", "t"] + _numbered("u", m) + _numbered("x_pre", n) + _numbered("x_post", n),
        ([k, jump.t, *jump.u, *jump.x_pre, *jump.x_post] for k, jump in enumerate(hybrid.jumps)),
    )
    blank = [float("nan")] * m
    write_csv(
        run_dir / "discrete.csv",
        ["k", "t"] + _numbered("x", n) + _numbered("u", m),
        (
            [k, t, *x, *(discrete.inputs[k] if k < len(discrete.inputs) else blank)]
            for k, (t, x) in enumerate(zip(discrete.times, discrete.states))
        ),
    )
    if result.report is not None:
        write_json(run_dir / "stability.json", result.report.to_dict())
    write_json(run_dir / "mpc_history.json", [s.summary() for s in result.controller.solutions])
    write_json(
        run_dir / "violations.json", [v.to_dict() for v in hybrid.violations]
    )


def write_manifest(out_dir: Path, scenario: Scenario, status: str, started: float,
                   lipschitz: LipschitzEstimate | None = None,
                   runs: list[RunResult] | None = None, failure: str | None = None) -> Path:
    entries = []
    for run in runs or []:
        entries.append({
            "index": run.index,
            "x0": run.x0,
            "dir": f"run_{run.index:03d}",
            "converged": run.converged,
            "violations": len(run.trajectory[0].violations),
            "verdicts": run.report.verdicts if run.report else {},
        })
    return write_json(out_dir / "manifest.json", {
        "app": config.APP_NAME,
        "version": __version__,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "status": status,
        "failure": failure,
        "wall_time": round(time.perf_counter() - started, 3),
        "scenario": scenario.to_dict(),
        "packages": package_versions(),
        "lipschitz": lipschitz.to_dict() if lipschitz else None,
        "runs": entries,
    })


def run_scenario(scenario: Scenario, out_dir: Path, logger: AppLogger, jobs: int = 1,
                 plot: bool = False) -> int:
    """
    The full pipeline. Each stage failure is logged as fatal with its stage
    name; outputs already written stay in out_dir. Returns the exit code.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    logger.info(f"--- Starting {config.APP_NAME} run of '{scenario.name}' ---")
    write_manifest(out_dir, scenario, "running", started)
    sets: SetsResult | None = None
    results: list[RunResult] = []

    try:
        system = _stage("Building system", logger, build_system, scenario)
        warmups = _stage("Warm-up", logger, warm_up, scenario, system, logger)
        sets = _stage("Building X_d and target equilibria", logger, build_sets,
                      scenario, logger, warmups)
        write_json(out_dir / "feasible_set.json", sets.feasible.to_dict())
        write_json(out_dir / "equilibria.json", sets.target.to_dict())
        if sets.target.is_empty:
            raise StageError("Building X_d and target equilibria",
                             EmptyTargetError(EMPTY_TARGET_MESSAGE))

        prob = _stage("Setting up MPC", logger, MpcProblem, sets.system,
                      mpc_config(scenario), sets.target, sets.feasible)
        results = _stage("Closed loop", logger, run_closed_loops,
                         prob, scenario, warmups, jobs, logger)

        analysis = scenario.analysis
        spp = scenario.sim.get("samples_per_period", config.SAMPLES_PER_PERIOD)

        def analyse():
            for result in results:
                result.report = build_stability_report(
                    result.trajectory,
                    sets.target,
                    sets.lipschitz.c_phi_used,
                    analysis.get("eps", config.DEFAULT_EPS),
                    analysis.get("settle_fraction", config.DEFAULT_SETTLE_FRACTION),
                    spp,
                )
                logger.info(f"  > run {result.index}: {result.report.summary_line()}")

        _stage("Stability analysis", logger, analyse)

        def write_outputs():
            for result in results:
                write_run_outputs(out_dir / f"run_{result.index:03d}", result,
                                  scenario.n, scenario.m)

        _stage("Writing outputs", logger, write_outputs)

        if prob.cfg.N * scenario.m <= 3 and len(sets.target) == 1:
            rows = _stage("Oracle comparison", logger, oracle_comparison, prob, scenario, logger)
            write_json(out_dir / "oracle.json", rows)

        if plot:
            _stage("Plotting", logger, plot_run, out_dir, logger)

    except StageError as exc:
        logger.fatal(str(exc))
        lipschitz = sets.lipschitz if sets else None
        write_manifest(out_dir, scenario, "failed", started, lipschitz, results, str(exc))
        return EXIT_FAILED

    write_manifest(out_dir, scenario, "complete", started, sets.lipschitz, results)
    converged = all(result.converged for result in results)
    if not converged:
        logger.error("At least one run had an MPC solve that did not converge.")
    logger.info(f"\n--- Run complete in {time.perf_counter() - started:.1f}s: {out_dir} ---")
    return EXIT_OK if converged else EXIT_FAILED


def report_run(out_dir: Path, logger: AppLogger) -> int:
    """Prints one line per run from the manifest and its stability reports."""
    out_dir = Path(out_dir)
    manifest = read_json(out_dir / "manifest.json")
    logger.info(
        f"{manifest['scenario']['name']} ({manifest['status']}, "
        f"{manifest['wall_time']}s, version {manifest['version']})"
    )
    if manifest.get("failure"):
        logger.info(f"  failure: {manifest['failure']}")
    for entry in manifest["runs"]:
        stability_path = out_dir / entry["dir"] / "stability.json"
        line = f"  {entry['dir']} x0={entry['x0']} converged={entry['converged']}"
        if stability_path.exists():
            report = read_json(stability_path)
            beam = report["dist_to_beam"]
            margins = report["orbit_inequality_margin"]
            line += f" final_dist_to_beam={beam[-1]:.3g}" if beam else ""
            line += f" min_margin={min(margins):.3g}" if margins else ""
            line += "".join(
                f" {key}={'yes' if value else 'no'}" for key, value in report["verdicts"].items()
            )
        logger.info(line)
    oracle_path = out_dir / "oracle.json"
    if oracle_path.exists():
        rows = read_json(oracle_path)
        agreeing = sum(1 for row in rows if row["agrees"])
        logger.info(f"  oracle: {agreeing}/{len(rows)} states agree with brute force")
    return EXIT_OK if manifest["status"] == "complete" else EXIT_FAILED


def sweep(scenario: Scenario, out_dir: Path, radii: list[float], eps_values: list[float],
          directions: int, K: int | None, jobs: int, logger: AppLogger) -> int:
    """Empirical delta(eps) table over rings of initial states around a stored pair."""
    started = time.perf_counter()
    try:
        sets = _stage("Building X_d and target equilibria", logger, build_sets, scenario, logger)
        if sets.target.is_empty:
            raise StageError("Building X_d and target equilibria",
                             EmptyTargetError(EMPTY_TARGET_MESSAGE))
        prob = _stage("Setting up MPC", logger, MpcProblem, sets.system,
                      mpc_config(scenario), sets.target, sets.feasible)
        rows = _stage(
            "Sweep", logger, empirical_delta_table,
            sets.system, lambda: kappa_mpc(prob), sets.target, radii, eps_values,
            K or scenario.sim["K"],
            directions=directions,
            samples_per_period=scenario.sim.get("samples_per_period", config.SAMPLES_PER_PERIOD),
            seed=scenario.seed,
            jobs=jobs,
            logger=logger,
        )
    except StageError as exc:
        logger.fatal(str(exc))
        return EXIT_FAILED
    write_json(Path(out_dir) / "sweep.json", {
        "scenario": scenario.to_dict(),
        "directions": directions,
        "wall_time": round(time.perf_counter() - started, 3),
        "rows": rows,
    })
    return EXIT_OK


def sets_only(scenario: Scenario, out_dir: Path, logger: AppLogger) -> int:
    try:
        sets = _stage("Building X_d and target equilibria", logger, build_sets, scenario, logger)
    except StageError as exc:
        logger.fatal(str(exc))
        return EXIT_FAILED
    out_dir = Path(out_dir)
    write_json(out_dir / "feasible_set.json", sets.feasible.to_dict())
    write_json(out_dir / "equilibria.json", sets.target.to_dict())
    write_json(out_dir / "lipschitz.json", sets.lipschitz.to_dict())
    logger.info(f"  > X_d ({sets.feasible.method}): {sets.feasible.diagnostics}")
    logger.info(f"  > {len(sets.target)} target equilibrium pairs")
    if sets.target.is_empty:
        logger.error(EMPTY_TARGET_MESSAGE)
        return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog=config.APP_NAME,
        description="Zone MPC for impulsive control systems.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--debug", action="store_true", help="Debug-level logging.")
    verbs = parser.add_subparsers(dest="verb", required=True)

    validate = verbs.add_parser("validate", help="Check a scenario file or built-in name.")
    validate.add_argument("scenario")

    sets = verbs.add_parser("sets", help="Build X_d and the target equilibria only.")
    sets.add_argument("scenario")
    sets.add_argument("-o", "--out", type=Path, default=Path("."))

    run = verbs.add_parser("run", help="Run the full closed-loop pipeline.")
    run.add_argument("scenario")
    run.add_argument("-o", "--out", type=Path, required=True)
    run.add_argument("--jobs", type=int, default=1, help="Initial states run in parallel.")
    run.add_argument("--plot", action="store_true", help="Also write the SVG figures.")

    plot = verbs.add_parser("plot", help="Write SVG figures for a run directory.")
    plot.add_argument("run_dir", type=Path)

    report = verbs.add_parser("report", help="Summarise a run directory.")
    report.add_argument("run_dir", type=Path)

    sweep_ = verbs.add_parser("sweep", help="Empirical delta(eps) table.")
    sweep_.add_argument("scenario")
    sweep_.add_argument("-o", "--out", type=Path, required=True)
    sweep_.add_argument("--radii", type=float, nargs="+", required=True)
    sweep_.add_argument("--eps", type=float, nargs="+", required=True)
    sweep_.add_argument("--directions", type=int, default=8)
    sweep_.add_argument("--K", type=int, default=None, help="Impulses per run.")
    sweep_.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = getattr(args, "out", None) or getattr(args, "run_dir", None)
    log_file = Path(out) / "run.log" if args.verb in ("run", "sweep") else None
    logger = make_logger(args.debug, log_file)

    if args.verb in ("plot", "report"):
        try:
            if args.verb == "plot":
                for path in plot_run(args.run_dir, logger):
                    logger.info(f"  > {path}")
                return EXIT_OK
            return report_run(args.run_dir, logger)
        except (ImpulsiveControlError, OSError, KeyError, ValueError) as exc:
            logger.fatal(f"cannot {args.verb} {args.run_dir}: {exc}")
            return EXIT_FAILED

    try:
        scenario = load_scenario(args.scenario)
    except ScenarioError as exc:
        logger.error(f"invalid scenario: {exc}")
        return EXIT_BAD_INPUT

    if args.verb == "validate":
        logger.info(
            f"{scenario.name}: model={scenario.model} n={scenario.n} m={scenario.m} "
            f"T={scenario.T:g} initial states={len(scenario.x0_list)} - OK"
        )
        return EXIT_OK
    if args.verb == "sets":
        return sets_only(scenario, args.out, logger)
    if args.verb == "sweep":
        return sweep(scenario, args.out, args.radii, args.eps, args.directions, args.K,
                     args.jobs, logger)
    return run_scenario(scenario, args.out, logger, args.jobs, args.plot)


if __name__ == "__main__":
    sys.exit(main())
