# impulsive.py
#
# The impulsive control system x' = f(x) between impulse times t_k = t0 + kT,
# x(t_k) = x(t_k^-) + B u_k at each impulse, and simulators for its hybrid
# and sampled (discrete-time) trajectories. The state stored at t_k is the
# post-jump state.

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

import config
from dynamics import IntegratorConfig, VectorField, flow, sample_orbit
from geometry import (
    Box,
    ConvexHullRegion,
    DimensionMismatchError,
    PointCloud,
    Region,
    contains,
)
from logger import AppLogger, silent_logger

Controller = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ImpulsiveSystem:
    field: VectorField
    B: np.ndarray
    T: float
    X: Box
    U: Box
    Xd: Region | None = None
    integrator: IntegratorConfig = IntegratorConfig()
    name: str = "system"

    def __post_init__(self):
        b = np.asarray(self.B, dtype=float)
        if b.ndim == 1:
            b = b[:, None]
        object.__setattr__(self, "B", b)
        if b.shape[0] != self.field.dim:
            raise DimensionMismatchError(
                f"B has {b.shape[0]} rows but the state dimension is {self.field.dim}"
            )
        if self.T <= 0:
            raise ValueError(f"T must be positive, got {self.T}")
        if self.X.dim != self.field.dim:
            raise DimensionMismatchError("X does not match the state dimension")
        if self.U.dim != b.shape[1]:
            raise DimensionMismatchError("U does not match the number of inputs")
        smallest = np.linalg.svd(b, compute_uv=False).min()
        if smallest <= 1e-10:
            raise ValueError(f"B must have full column rank (smallest singular value {smallest:.3g})")
        if self.Xd is not None and not self._xd_inside_x(self.Xd):
            raise ValueError("Xd must be contained in X")

    def _xd_inside_x(self, region: Region) -> bool:
        tol = config.MEMBERSHIP_TOL
        if isinstance(region, Box):
            return self.X.contains_box(region, tol)
        if isinstance(region, ConvexHullRegion):
            return all(contains(self.X, v, tol) for v in region.vertices)
        return self.X.contains_box(region.bounding_box(), tol)

    @property
    def n(self) -> int:
        return self.field.dim

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def B_pinv(self) -> np.ndarray:
        return np.linalg.pinv(self.B)

    def with_xd(self, xd: Region) -> "ImpulsiveSystem":
        return ImpulsiveSystem(
            self.field, self.B, self.T, self.X, self.U, xd, self.integrator, self.name
        )

    def flow(self, x: np.ndarray, t: float) -> np.ndarray:
        return flow(self.field, x, t, self.integrator)

    def jump(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + self.B @ np.asarray(u, dtype=float)


def discrete_step(sys: ImpulsiveSystem, x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """
    phi(x, T) + B u. Accepts a single state (n,) with input (m,), or a batch
    (n, k) with inputs (m, k).
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[0] != sys.n or u.shape[0] != sys.m:
        raise DimensionMismatchError(
            f"{sys.name}: state {x.shape} / input {u.shape} do not match n={sys.n}, m={sys.m}"
        )
    return sys.flow(x, sys.T) + sys.B @ u


@dataclass(frozen=True)
class Arc:
    """Samples of one flow period [t_k, t_{k+1})."""

    times: np.ndarray
    states: np.ndarray
    end_state: np.ndarray


@dataclass(frozen=True)
class JumpEvent:
    k: int
    t: float
    x_pre: np.ndarray
    u: np.ndarray
    x_post: np.ndarray


@dataclass(frozen=True)
class Violation:
    kind: str
    k: int
    t: float
    amount: float

    def to_dict(self) -> dict:
        return {"kind": self.kind, "k": self.k, "t": self.t, "amount": self.amount}


@dataclass
class HybridTrajectory:
    arcs: list[Arc] = field(default_factory=list)
    jumps: list[JumpEvent] = field(default_factory=list)
    violations: list[Violation] = field(default_factory=list)
    final_time: float = 0.0
    final_state: np.ndarray | None = None

    def samples(self) -> tuple[np.ndarray, np.ndarray]:
        """
        All continuous samples as (times, states), with the terminal state at
        final_time appended last.
        """
        times = [arc.times for arc in self.arcs]
        states = [arc.states for arc in self.arcs]
        if self.final_state is not None:
            times.append(np.array([self.final_time]))
            states.append(self.final_state[None, :])
        if not times:
            return np.zeros(0), np.zeros((0, 0))
        return np.concatenate(times), np.vstack(states)

    @property
    def feasible(self) -> bool:
        return not self.violations


@dataclass
class DiscreteTrajectory:
    states: list[np.ndarray] = field(default_factory=list)
    inputs: list[np.ndarray] = field(default_factory=list)
    times: list[float] = field(default_factory=list)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        states = np.vstack(self.states) if self.states else np.zeros((0, 0))
        inputs = np.vstack(self.inputs) if self.inputs else np.zeros((0, 0))
        return states, inputs


def _box_excess(box: Box, points: np.ndarray) -> np.ndarray:
    """Per point, the largest amount by which it leaves the box (0 inside)."""
    return np.maximum(box.constraint_values(points).max(axis=1), 0.0)


def simulate_closed_loop(
    sys: ImpulsiveSystem,
    controller: Controller,
    x0: np.ndarray,
    K: int,
    samples_per_period: int = config.SAMPLES_PER_PERIOD,
    first_jump_at_zero: bool = True,
    t0: float = 0.0,
    logger: AppLogger | None = None,
) -> tuple[HybridTrajectory, DiscreteTrajectory]:
    """
    Simulates K impulses at t_k = t0 + kT, k = 0..K-1, each followed by one
    free arc. The first jump is applied to x0 itself: x(0) = x0 + B u(0).
    Afterwards u(k+1) = controller(x(k)), so the loop follows
    x(k+1) = phi(x(k), T) + B u(k+1).

    With first_jump_at_zero, u(0) comes from `controller.initial_input(x0)`
    when the controller has one and from `controller(x0)` otherwise; without
    it u(0) is zero. The discrete trajectory holds the post-jump states
    x(0)..x(K-1) followed by the state at t0 + KT, where no jump happens,
    and the K inputs in jump order. Input and state constraint violations
    are recorded on the hybrid trajectory and never clipped. K = 0
    simulates one free arc with no jump.
    """
    logger = logger or silent_logger()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise DimensionMismatchError(f"x0 has dimension {x0.shape[0]}, expected {sys.n}")
    if K < 0:
        raise ValueError("K must be nonnegative")
    if samples_per_period < 1:
        raise ValueError("samples_per_period must be positive")
    if not contains(sys.X, x0, config.MEMBERSHIP_TOL):
        raise ValueError(f"x0 = {x0} lies outside X")

    hybrid = HybridTrajectory()
    discrete = DiscreteTrajectory()
    tol = config.MEMBERSHIP_TOL
    taus = np.linspace(0.0, sys.T, samples_per_period + 1)

    def record_arc(x_start: np.ndarray, k: int, t_start: float) -> np.ndarray:
        samples = sample_orbit(sys.field, x_start, sys.T, samples_per_period, sys.integrator)
        arc = Arc(t_start + taus[:-1], samples[:-1], samples[-1])
        hybrid.arcs.append(arc)
        excess = _box_excess(sys.X, samples[:-1])
        if np.any(excess > tol):
            worst = int(np.argmax(excess))
            hybrid.violations.append(
                Violation("state", k, float(arc.times[worst]), float(excess[worst]))
            )
            logger.warning(
                f"{sys.name}: state leaves X by {excess[worst]:.3g} at t={arc.times[worst]:.4g}"
            )
        return samples[-1]

    def command(k: int, decide, x: np.ndarray) -> np.ndarray:
        u = np.asarray(decide(x), dtype=float).reshape(sys.m)
        over = float(_box_excess(sys.U, u[None, :])[0])
        if over > tol:
            hybrid.violations.append(Violation("input", k, t0 + k * sys.T, over))
            logger.warning(f"{sys.name}: input {u} leaves U by {over:.3g} at k={k}")
        return u

    if K == 0:
        hybrid.final_state = record_arc(x0, 0, t0)
        hybrid.final_time = t0 + sys.T
        discrete.states.append(x0)
        discrete.times.append(t0)
        return hybrid, discrete

    if first_jump_at_zero:
        u = command(0, getattr(controller, "initial_input", controller), x0)
    else:
        u = np.zeros(sys.m)
    x_pre = x0
    for k in range(K):
        t_k = t0 + k * sys.T
        x = sys.jump(x_pre, u)
        hybrid.jumps.append(JumpEvent(k, t_k, x_pre, u, x))
        discrete.states.append(x)
        discrete.inputs.append(u)
        discrete.times.append(t_k)
        logger.debug(f"k={k} t={t_k:.4g} u={np.array2string(u, precision=4)}")
        if k + 1 < K:
            u = command(k + 1, controller, x)
        x_pre = record_arc(x, k, t_k)

    hybrid.final_time = t0 + K * sys.T
    hybrid.final_state = x_pre
    discrete.states.append(x_pre)
    discrete.times.append(hybrid.final_time)
    excess = float(_box_excess(sys.X, x_pre[None, :])[0])
    if excess > tol:
        hybrid.violations.append(Violation("state", K, hybrid.final_time, excess))
        logger.warning(f"{sys.name}: final state leaves X by {excess:.3g}")
    return hybrid, discrete


def concatenate(
    first: tuple[HybridTrajectory, DiscreteTrajectory],
    second: tuple[HybridTrajectory, DiscreteTrajectory],
) -> tuple[HybridTrajectory, DiscreteTrajectory]:
    """
    Joins a trajectory with its continuation started from first's final
    state. The join appears once in the discrete sequence, as the
    continuation's first (post-jump) state.
    """
    h1, d1 = first
    h2, d2 = second
    hybrid = HybridTrajectory(
        arcs=h1.arcs + h2.arcs,
        jumps=h1.jumps + h2.jumps,
        violations=h1.violations + h2.violations,
        final_time=h2.final_time,
        final_state=h2.final_state,
    )
    discrete = DiscreteTrajectory(
        states=d1.states[:-1] + d2.states,
        inputs=d1.inputs + d2.inputs,
        times=d1.times[:-1] + d2.times,
    )
    return hybrid, discrete


def orbit_of(sys: ImpulsiveSystem, x: np.ndarray, m: int) -> PointCloud:
    return PointCloud(sample_orbit(sys.field, x, sys.T, m, sys.integrator))


def feasible_mask(sys: ImpulsiveSystem, points: np.ndarray, m: int,
                  tol: float = config.MEMBERSHIP_TOL) -> np.ndarray:
    """check_feasible_point for every row of points at once."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    inside = np.all(sys.X.constraint_values(points) <= tol, axis=1)
    mask = np.zeros(points.shape[0], dtype=bool)
    if not np.any(inside):
        return mask
    candidates = points[inside]
    samples = sample_orbit(sys.field, candidates.T, sys.T, m, sys.integrator)
    # samples: (m+1, n, k)
    lower = sys.X.lower[None, :, None] - tol
    upper = sys.X.upper[None, :, None] + tol
    ok = np.all((samples >= lower) & (samples <= upper), axis=(0, 1))
    mask[np.flatnonzero(inside)] = ok
    return mask


def check_feasible_point(sys: ImpulsiveSystem, x: np.ndarray, m: int,
                         tol: float = config.MEMBERSHIP_TOL) -> bool:
    """True iff all m+1 orbit samples of x lie in X."""
    if m < 2:
        raise ValueError(f"m must be at least 2, got {m}")
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != sys.n:
        raise DimensionMismatchError(f"x has dimension {x.shape[0]}, expected {sys.n}")
    return bool(feasible_mask(sys, x[None, :], m, tol)[0])
