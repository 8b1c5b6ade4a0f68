# analysis.py
#
# Empirical stability checks for closed-loop runs: distances to the target
# equilibria and to their beam of orbits, the one-period Lipschitz
# inequality linking the two, and (strong) attractivity verdicts.

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

import config
from equilibria import EquilibriumSetApprox
from geometry import PointCloud, contains, hausdorff_distance
from impulsive import (
    Controller,
    DiscreteTrajectory,
    HybridTrajectory,
    ImpulsiveSystem,
    simulate_closed_loop,
)
from logger import AppLogger, silent_logger

MIN_PERIODS = 10

TrajectoryPair = tuple[HybridTrajectory, DiscreteTrajectory]


@dataclass
class StabilityReport:
    times: np.ndarray
    dist_to_beam: np.ndarray
    impulse_times: np.ndarray
    dist_to_set: np.ndarray
    orbit_inequality_margin: np.ndarray
    hausdorff_to_limit: np.ndarray | None
    limit_pair: int
    sampling_slack: float
    c_phi: float
    eps: float
    settle_fraction: float
    verdicts: dict = field(default_factory=dict)
    resolution: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "c_phi": self.c_phi,
            "eps": self.eps,
            "settle_fraction": self.settle_fraction,
            "sampling_slack": self.sampling_slack,
            "limit_pair": self.limit_pair,
            "verdicts": self.verdicts,
            "resolution": self.resolution,
            "times": self.times.tolist(),
            "dist_to_beam": self.dist_to_beam.tolist(),
            "impulse_times": self.impulse_times.tolist(),
            "dist_to_set": self.dist_to_set.tolist(),
            "orbit_inequality_margin": self.orbit_inequality_margin.tolist(),
            "hausdorff_to_limit": (
                None if self.hausdorff_to_limit is None else self.hausdorff_to_limit.tolist()
            ),
        }

    def summary_line(self) -> str:
        flags = " ".join(f"{k}={'yes' if v else 'no'}" for k, v in self.verdicts.items())
        tail = self.dist_to_beam[-1] if self.dist_to_beam.size else float("nan")
        return f"final dist_to_beam={tail:.3g} min_margin={self.min_margin:.3g} {flags}"

    @property
    def min_margin(self) -> float:
        return float(self.orbit_inequality_margin.min()) if self.orbit_inequality_margin.size else float("nan")


def sampling_slack(target: EquilibriumSetApprox) -> float:
    """Largest gap between consecutive samples along any stored orbit."""
    if target.orbits.shape[1] < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(target.orbits, axis=1), axis=2).max())


def distance_to_beam(traj: HybridTrajectory, target: EquilibriumSetApprox) -> np.ndarray:
    """inf-distance from every hybrid sample (terminal state included) to the beam."""
    _, states = traj.samples()
    return target.beam_samples.nearest(states)[0]


def distance_to_set(discrete: DiscreteTrajectory, target: EquilibriumSetApprox) -> np.ndarray:
    """inf-distance from every discrete state to the stored equilibrium states."""
    states, _ = discrete.as_arrays()
    return target.xs_cloud.nearest(states)[0]


def _arc_clouds(traj: HybridTrajectory) -> list[np.ndarray]:
    """Samples of phi(x(k), tau) for tau in [0, T], one array per period."""
    return [np.vstack([arc.states, arc.end_state[None, :]]) for arc in traj.arcs]


def verify_orbit_inequality(traj_pair: TrajectoryPair, target: EquilibriumSetApprox,
                         c_phi: float) -> np.ndarray:
    """
    Per period k, C_phi d(x(k), X_S^*) minus the largest distance from the
    arc phi(x(k), .) to the orbit of the pair nearest x(k). The bound
    d(phi(x, t), O_s) <= C_phi |x - x_s| makes every margin nonnegative up
    to the orbit sampling slack.
    """
    hybrid, discrete = traj_pair
    arcs = _arc_clouds(hybrid)
    states = discrete.states[: len(arcs)]
    margins = np.empty(len(states))
    for k, (x, arc) in enumerate(zip(states, arcs)):
        idx = target.nearest_pair(x)
        d_set = float(np.linalg.norm(x - target.pairs[idx].x_s))
        d_arc = PointCloud(target.orbits[idx]).nearest(arc)[0].max()
        margins[k] = c_phi * d_set - d_arc
    return margins


def last_impulse_state(traj_pair: TrajectoryPair) -> np.ndarray:
    """The post-jump state that starts the final arc."""
    hybrid, discrete = traj_pair
    return discrete.states[max(len(hybrid.arcs), 1) - 1]


def attractivity_verdict(dist_to_beam: np.ndarray, eps: float, settle_fraction: float,
                         periods: int) -> bool:
    """True iff every sample in the trailing settle_fraction of the run is within eps of the beam."""
    if periods < MIN_PERIODS:
        raise ValueError(f"attractivity needs at least {MIN_PERIODS} periods, got {periods}")
    if not 0 < settle_fraction < 1:
        raise ValueError("settle_fraction must lie in (0, 1)")
    series = np.asarray(dist_to_beam, dtype=float)
    start = int(np.floor((1.0 - settle_fraction) * series.size))
    return bool(np.all(series[start:] < eps))


def hausdorff_to_orbit(traj: HybridTrajectory, orbit: np.ndarray) -> np.ndarray:
    limit = PointCloud(orbit)
    return np.array([hausdorff_distance(PointCloud(arc), limit) for arc in _arc_clouds(traj)])


def strong_attractivity_verdict(traj_pair: TrajectoryPair, target: EquilibriumSetApprox,
                                eps: float,
                                settle_fraction: float = config.DEFAULT_SETTLE_FRACTION
                                ) -> tuple[bool, int]:
    """
    The limit pair is the stored pair nearest the last post-jump state. The
    verdict holds iff every trailing period's arc is within Hausdorff
    distance eps of that pair's orbit.
    """
    hybrid, _ = traj_pair
    periods = len(hybrid.arcs)
    if periods < MIN_PERIODS:
        raise ValueError(f"strong attractivity needs at least {MIN_PERIODS} periods, got {periods}")
    idx = target.nearest_pair(last_impulse_state(traj_pair))
    series = hausdorff_to_orbit(hybrid, target.orbits[idx])
    start = int(np.floor((1.0 - settle_fraction) * series.size))
    return bool(np.all(series[start:] < eps)), idx


def build_stability_report(
    traj_pair: TrajectoryPair,
    target: EquilibriumSetApprox,
    c_phi: float,
    eps: float = config.DEFAULT_EPS,
    settle_fraction: float = config.DEFAULT_SETTLE_FRACTION,
    samples_per_period: int | None = None,
) -> StabilityReport:
    hybrid, discrete = traj_pair
    times, _ = hybrid.samples()
    beam = distance_to_beam(hybrid, target)
    to_set = distance_to_set(discrete, target)
    margins = verify_orbit_inequality(traj_pair, target, c_phi)
    slack = sampling_slack(target)
    periods = len(hybrid.arcs)

    verdicts = {"feasible_throughout": hybrid.feasible}
    hausdorff = None
    limit = target.nearest_pair(last_impulse_state(traj_pair))
    if periods >= MIN_PERIODS:
        verdicts["attractive_at_eps"] = attractivity_verdict(beam, eps, settle_fraction, periods)
        strong, limit = strong_attractivity_verdict(traj_pair, target, eps, settle_fraction)
        verdicts["strongly_attractive_at_eps"] = strong
        hausdorff = hausdorff_to_orbit(hybrid, target.orbits[limit])
    verdicts["orbit_inequality_holds"] = bool(np.all(margins >= -slack))

    per_period = samples_per_period or (hybrid.arcs[0].times.size if hybrid.arcs else 1)
    worst = [
        beam[k * per_period:(k + 1) * per_period].max() for k in range(periods)
    ]
    verdicts["beam_bound_holds"] = bool(
        all(w <= c_phi * to_set[k] + slack for k, w in enumerate(worst))
    )
    return StabilityReport(
        times=times,
        dist_to_beam=beam,
        impulse_times=np.asarray(discrete.times, dtype=float),
        dist_to_set=to_set,
        orbit_inequality_margin=margins,
        hausdorff_to_limit=hausdorff,
        limit_pair=limit,
        sampling_slack=slack,
        c_phi=c_phi,
        eps=eps,
        settle_fraction=settle_fraction,
        verdicts=verdicts,
        resolution={
            "samples_per_period": per_period,
            "orbit_resolution": target.orbit_resolution,
            "pairs": len(target),
        },
    )


def ring_states(center: np.ndarray, radius: float, directions: int,
                rng: np.random.Generator) -> np.ndarray:
    """Points at the given distance from center along random unit directions."""
    dirs = rng.normal(size=(directions, center.size))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return center + radius * dirs


def empirical_delta_table(
    sys: ImpulsiveSystem,
    controller_factory: Callable[[], Controller],
    target: EquilibriumSetApprox,
    radii: list[float],
    eps_values: list[float],
    K: int,
    center_index: int = 0,
    directions: int = 8,
    samples_per_period: int = config.SAMPLES_PER_PERIOD,
    seed: int = 0,
    jobs: int = 1,
    logger: AppLogger | None = None,
) -> list[dict]:
    """
    Closed loops from rings of initial states around a stored x_s. For each
    eps, delta is the largest tested radius such that every run from that
    radius and all smaller ones keeps dist_to_beam below eps, the initial
    state before the jump at t0 included. Only the tested rings are
    covered; this is a sampled check, not a proof.
    """
    logger = logger or silent_logger()
    rng = np.random.default_rng(seed)
    center = target.pairs[center_index].x_s
    radii = sorted(float(r) for r in radii)
    jobs_list = []
    for r in radii:
        for x0 in ring_states(center, r, directions, rng):
            if contains(sys.X, x0, config.MEMBERSHIP_TOL):
                jobs_list.append((r, x0))

    def run(item):
        r, x0 = item
        hybrid, _ = simulate_closed_loop(
            sys, controller_factory(), x0, K, samples_per_period, logger=logger
        )
        start = target.beam_samples.nearest(x0)[0][0]
        return r, float(max(distance_to_beam(hybrid, target).max(), start))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run, jobs_list))
    else:
        results = [run(item) for item in jobs_list]

    worst = {r: 0.0 for r in radii}
    tested = {r: 0 for r in radii}
    for r, value in results:
        worst[r] = max(worst[r], value)
        tested[r] += 1

    rows = []
    for eps in sorted(eps_values):
        delta = 0.0
        for r in radii:
            if tested[r] == 0:
                continue
            if worst[r] >= eps:
                break
            delta = r
        rows.append({
            "eps": eps,
            "delta": delta,
            "radii": radii,
            "runs_per_radius": [tested[r] for r in radii],
            "worst_dist_to_beam": [worst[r] for r in radii],
        })
        logger.info(f"eps={eps:.4g}: empirical delta={delta:.4g}")
    return rows
