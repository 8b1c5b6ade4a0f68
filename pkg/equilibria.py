# equilibria.py
#
# Control equilibria (states whose orbit closes up after one impulse), the
# target equilibrium set inside a window X*, and two constructions of a
# discrete feasible set X_d whose points keep their whole orbit inside X.

from dataclasses import dataclass, field

import numpy as np

import config
from dynamics import propagate, sample_orbit
from geometry import (
    Ball,
    BallBoxRegion,
    Box,
    ConvexHullRegion,
    ImpulsiveControlError,
    MAX_HULL_DIM,
    PointCloud,
    Region,
    RegionError,
    convex_hull,
    max_radius_in_box,
    region_from_dict,
    sample_region,
)
from impulsive import ImpulsiveSystem, feasible_mask
from logger import AppLogger, silent_logger

EMPTY_TARGET_MESSAGE = (
    "target equilibrium set X_S^* is empty: no control equilibrium orbit fits "
    "inside the target window X*, so the MPC tracking problem is not posed"
)


class OrbitInteriorityError(ImpulsiveControlError):
    """The orbit of the ball center touches the boundary of X."""


class EmptyFeasibleSetError(ImpulsiveControlError):
    """No mesh point keeps its orbit inside X; F_X may be empty for this T."""


@dataclass(frozen=True)
class EquilibriumPair:
    x_s: np.ndarray
    u_s: np.ndarray
    residual: float

    def to_dict(self) -> dict:
        return {"x_s": self.x_s.tolist(), "u_s": self.u_s.tolist(), "residual": self.residual}


@dataclass
class EquilibriumSetApprox:
    """
    Finite approximation of X_S^* with its inputs U_S^*. `orbits[i]` holds
    the orbit_resolution+1 samples of the orbit of pairs[i].x_s.
    """

    pairs: list[EquilibriumPair]
    orbits: np.ndarray
    orbit_resolution: int
    _clouds: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def is_empty(self) -> bool:
        return not self.pairs

    def __len__(self) -> int:
        return len(self.pairs)

    def _cloud(self, key: str, build) -> PointCloud:
        if self.is_empty:
            raise RegionError(EMPTY_TARGET_MESSAGE)
        if key not in self._clouds:
            self._clouds[key] = PointCloud(build())
        return self._clouds[key]

    @property
    def xs_cloud(self) -> PointCloud:
        return self._cloud("xs", lambda: np.vstack([p.x_s for p in self.pairs]))

    @property
    def us_cloud(self) -> PointCloud:
        return self._cloud("us", lambda: np.vstack([p.u_s for p in self.pairs]))

    @property
    def beam_samples(self) -> PointCloud:
        return self._cloud("beam", lambda: self.orbits.reshape(-1, self.orbits.shape[-1]))

    def nearest_pair(self, x: np.ndarray) -> int:
        """Index of the pair whose x_s is closest to x; ties go to the lowest index."""
        dist = np.linalg.norm(self.xs_cloud.points - np.asarray(x, dtype=float), axis=1)
        return int(np.argmin(dist))

    def to_dict(self) -> dict:
        return {
            "orbit_resolution": self.orbit_resolution,
            "pairs": [p.to_dict() for p in self.pairs],
            "orbits": self.orbits.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "EquilibriumSetApprox":
        pairs = [
            EquilibriumPair(np.asarray(p["x_s"], float), np.asarray(p["u_s"], float), p["residual"])
            for p in payload["pairs"]
        ]
        return cls(pairs, np.asarray(payload["orbits"], dtype=float), payload["orbit_resolution"])


@dataclass
class FeasibleSetResult:
    region: Region
    method: str
    certificate: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "region": self.region.to_dict(),
            "certificate": self.certificate.tolist(),
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "FeasibleSetResult":
        return cls(
            region=region_from_dict(payload["region"]),
            method=payload["method"],
            certificate=np.asarray(payload["certificate"], dtype=float),
            diagnostics=payload.get("diagnostics", {}),
        )


def equilibrium_input_for(sys: ImpulsiveSystem, x: np.ndarray) -> tuple[np.ndarray, float]:
    """
    Least-squares u with B u = x - phi(x, T), and the residual of that fit.
    x is a control equilibrium iff the residual vanishes and u lies in U.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    gap = x - sys.flow(x, sys.T)
    u = sys.B_pinv @ gap
    return u, float(np.linalg.norm(gap - sys.B @ u))


def _projected_residuals(sys: ImpulsiveSystem, xs: np.ndarray, proj: np.ndarray) -> np.ndarray:
    return proj @ (xs - sys.flow(xs, sys.T))


def _flow_jacobians(sys: ImpulsiveSystem, xs: np.ndarray) -> np.ndarray:
    """d phi(x, T)/dx at every column of xs, shape (k, n, n)."""
    n, k = xs.shape
    if sys.field.is_linear and sys.integrator.exact_linear:
        return np.broadcast_to(sys.field.exp(sys.T), (k, n, n))
    h = config.FD_JACOBIAN_STEP * np.maximum(1.0, np.abs(xs))
    shifted = [xs]
    for i in range(n):
        step = np.zeros_like(xs)
        step[i] = h[i]
        shifted.append(xs + step)
    ends = propagate(sys.field, np.hstack(shifted), [sys.T], sys.integrator)[-1]
    base = ends[:, :k]
    out = np.empty((k, n, n))
    for i in range(n):
        out[:, :, i] = ((ends[:, (i + 1) * k:(i + 2) * k] - base) / h[i]).T
    return out


def _refine(sys: ImpulsiveSystem, seeds: np.ndarray, tol: float, max_iter: int = 30,
            max_halvings: int = 12) -> tuple[np.ndarray, np.ndarray]:
    """
    Damped Gauss-Newton on r(x) = (I - B B^+)(x - phi(x, T)) for every seed
    column at once. Iterates are kept inside X.
    """
    n = sys.n
    proj = np.eye(n) - sys.B @ sys.B_pinv
    eye = np.eye(n)
    xs = seeds.copy()
    res = _projected_residuals(sys, xs, proj)
    norms = np.linalg.norm(res, axis=0)
    active = norms > tol

    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        jacs = proj @ (eye - _flow_jacobians(sys, xs[:, idx]))
        steps = np.stack(
            [np.linalg.lstsq(jacs[j], -res[:, c], rcond=None)[0] for j, c in enumerate(idx)],
            axis=1,
        )
        alpha = np.ones(idx.size)
        accepted = np.zeros(idx.size, dtype=bool)
        for _ in range(max_halvings):
            todo = np.flatnonzero(~accepted)
            if todo.size == 0:
                break
            cols = idx[todo]
            trial = np.clip(
                xs[:, cols] + alpha[todo] * steps[:, todo],
                sys.X.lower[:, None], sys.X.upper[:, None],
            )
            trial_res = _projected_residuals(sys, trial, proj)
            trial_norm = np.linalg.norm(trial_res, axis=0)
            better = trial_norm < (1.0 - 1e-4 * alpha[todo]) * norms[cols]
            good = cols[better]
            xs[:, good] = trial[:, better]
            res[:, good] = trial_res[:, better]
            norms[good] = trial_norm[better]
            accepted[todo[better]] = True
            alpha[todo[~better]] *= 0.5
        active[idx[~accepted]] = False
        active &= norms > tol
    return xs, norms


def _dedupe(points: np.ndarray, radius: float) -> np.ndarray:
    """Indices of a greedy subset with pairwise distances above radius."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=int)
    order = np.lexsort(points.T[::-1])
    kept = [int(order[0])]
    for i in order[1:]:
        if np.linalg.norm(points[kept] - points[i], axis=1).min() > radius:
            kept.append(int(i))
    return np.asarray(kept, dtype=int)


def find_target_equilibria(
    sys: ImpulsiveSystem,
    Xstar: Box,
    grid_per_dim: int = config.TARGET_GRID_PER_DIM,
    refine: bool = True,
    orbit_resolution: int = config.ORBIT_RESOLUTION,
    capture_factor: float = config.CAPTURE_FACTOR,
    tol: float = config.EQUILIBRIUM_TOL,
    max_seeds: int = 2000,
    dedupe_fraction: float = 1e-3,
    logger: AppLogger | None = None,
) -> EquilibriumSetApprox:
    """
    Finite sampling of X_S^* = {x_s : x_s is a control equilibrium and its
    orbit stays in X*}. Grid points of X* whose projected residual is within
    the capture radius seed a Newton refinement; survivors need residual
    <= tol, input in U and an orbit inside X*. An empty result is returned
    (and logged) rather than raised.
    """
    logger = logger or silent_logger()
    if not sys.X.contains_box(Xstar, config.MEMBERSHIP_TOL):
        raise ValueError("Xstar must be contained in X")

    grid = Xstar.grid(grid_per_dim)
    proj = np.eye(sys.n) - sys.B @ sys.B_pinv
    norms = np.linalg.norm(_projected_residuals(sys, grid.T, proj), axis=0)
    capture = max(capture_factor * float(np.linalg.norm(Xstar.grid_spacing(grid_per_dim))), tol)

    candidates = grid[norms <= tol]
    if refine:
        seed_idx = np.flatnonzero(norms <= capture)
        seed_idx = seed_idx[np.argsort(norms[seed_idx], kind="stable")][:max_seeds]
        logger.debug(f"equilibria: {seed_idx.size} of {grid.shape[0]} grid points seeded")
        if seed_idx.size:
            refined, final = _refine(sys, grid[seed_idx].T, tol)
            candidates = np.vstack([candidates, refined[:, final <= tol].T])

    pairs: list[EquilibriumPair] = []
    orbits = np.zeros((0, orbit_resolution + 1, sys.n))
    if candidates.shape[0]:
        gaps = candidates.T - sys.flow(candidates.T, sys.T)
        inputs = sys.B_pinv @ gaps
        residuals = np.linalg.norm(gaps - sys.B @ inputs, axis=0)
        tol_in = config.MEMBERSHIP_TOL
        in_u = np.all(sys.U.constraint_values(inputs.T) <= tol_in, axis=1)
        samples = sample_orbit(sys.field, candidates.T, sys.T, orbit_resolution, sys.integrator)
        lower = Xstar.lower[None, :, None] - tol_in
        upper = Xstar.upper[None, :, None] + tol_in
        in_window = np.all((samples >= lower) & (samples <= upper), axis=(0, 1))
        ok = np.flatnonzero((residuals <= tol) & in_u & in_window)

        radius = max(dedupe_fraction * Xstar.diameter, 1e-12)
        keep = ok[_dedupe(candidates[ok], radius)]
        keep = keep[np.lexsort(candidates[keep].T[::-1])]
        pairs = [
            EquilibriumPair(candidates[i].copy(), inputs[:, i].copy(), float(residuals[i]))
            for i in keep
        ]
        orbits = np.transpose(samples[:, :, keep], (2, 0, 1))

    if not pairs:
        logger.warning(EMPTY_TARGET_MESSAGE)
    else:
        logger.info(f"Found {len(pairs)} target equilibrium pairs inside X*.")
    return EquilibriumSetApprox(pairs, orbits, orbit_resolution)


def build_xd_lipschitz_ball(
    sys: ImpulsiveSystem,
    x_star: np.ndarray,
    c_phi: float,
    m: int,
    n_certificate: int = 100,
    seed: int = 0,
    logger: AppLogger | None = None,
) -> FeasibleSetResult:
    """
    X_d = B(x_*, r_*/C_phi) ∩ X, where r_* is the smallest distance from the
    sampled orbit of x_* to the boundary of X.
    """
    logger = logger or silent_logger()
    if c_phi <= 0:
        raise ValueError("c_phi must be positive")
    x_star = np.asarray(x_star, dtype=float).reshape(-1)
    samples = sample_orbit(sys.field, x_star, sys.T, m, sys.integrator)
    try:
        radii = np.array([max_radius_in_box(p, sys.X) for p in samples])
    except RegionError as exc:
        raise OrbitInteriorityError(f"orbit of {x_star} leaves X: {exc}") from exc
    r_star = float(radii.min())
    if r_star <= 0:
        raise OrbitInteriorityError(f"orbit of {x_star} touches the boundary of X")

    region = BallBoxRegion(Ball(x_star, r_star / c_phi), sys.X)
    rng = np.random.default_rng(seed)
    points = sample_region(region, n_certificate, rng)
    passed = feasible_mask(sys, points, m)
    if not passed.all():
        logger.warning(f"lipschitz ball: {int((~passed).sum())} certificate points failed")
    logger.info(f"X_d ball: r_* = {r_star:.4g}, radius = {r_star / c_phi:.4g}")
    return FeasibleSetResult(
        region=region,
        method="lipschitz_ball",
        certificate=points[passed],
        diagnostics={
            "r_star": r_star,
            "radius": r_star / c_phi,
            "c_phi": c_phi,
            "m": m,
            "certificate_failures": int((~passed).sum()),
        },
    )


def build_xd_mesh_hull(
    sys: ImpulsiveSystem,
    mesh_per_dim: int,
    m: int,
    extra_points: np.ndarray | None = None,
    n_check: int = config.HULL_CHECK_POINTS,
    shrink: float = config.HULL_SHRINK_FACTOR,
    max_rounds: int = config.HULL_SHRINK_ROUNDS,
    seed: int = 0,
    logger: AppLogger | None = None,
) -> FeasibleSetResult:
    """
    Mesh X, keep the points whose sampled orbit stays in X and take their
    convex hull. The hull of a linear flow is feasible by convexity; for
    nonlinear flows random hull points are checked and the hull is shrunk
    toward its centroid until every check passes.
    """
    logger = logger or silent_logger()
    if sys.n > MAX_HULL_DIM:
        raise RegionError(f"mesh hull supports dimension <= {MAX_HULL_DIM}, got {sys.n}")
    mesh = sys.X.grid(mesh_per_dim)
    if extra_points is not None:
        mesh = np.vstack([mesh, np.atleast_2d(np.asarray(extra_points, dtype=float))])
    kept = mesh[feasible_mask(sys, mesh, m)]
    logger.info(f"X_d mesh: {kept.shape[0]} of {mesh.shape[0]} mesh points are feasible.")
    if kept.shape[0] == 0:
        raise EmptyFeasibleSetError(
            "no mesh point keeps its orbit inside X; F_X may be empty for this T"
        )

    base = convex_hull(PointCloud(kept))
    hull: ConvexHullRegion = base
    rng = np.random.default_rng(seed)
    rounds = 0
    points = sample_region(hull, n_check, rng)
    passed = feasible_mask(sys, points, m)
    if not sys.field.is_linear:
        while not passed.all() and rounds < max_rounds:
            rounds += 1
            hull = base.scaled(shrink ** rounds)
            points = sample_region(hull, n_check, rng)
            passed = feasible_mask(sys, points, m)
            logger.debug(f"hull shrink round {rounds}: {int((~passed).sum())} failures")
    if not passed.all():
        logger.warning(f"mesh hull: {int((~passed).sum())} of {n_check} checks still fail")

    return FeasibleSetResult(
        region=hull,
        method="mesh_hull",
        certificate=points[passed],
        diagnostics={
            "mesh_points": int(mesh.shape[0]),
            "feasible_mesh_points": int(kept.shape[0]),
            "vertices": int(hull.vertices.shape[0]),
            "shrink_rounds": rounds,
            "scale": shrink ** rounds,
            "m": m,
            "certificate_failures": int((~passed).sum()),
        },
    )
