# mpc.py
#
# Zone MPC with an artificial equilibrium pair (x_s, u_s):
#
#   min  sum_j |x_j - x_s|_Q^2 + |u_j - u_s|_R^2 + gamma (d(x_s, X_S^*) + d(u_s, U_S^*))
#   s.t. x_{j+1} = phi(x_j, T) + B u_j,  u_j in U,  x_j in X_d (j < N),
#        x_s = phi(x_s, T) + B u_s,  u_s in U,  orbit of x_s in X,  x_N = x_s.
#
# Solved by single shooting: the inputs and the pair are the decision
# variables, box constraints are handled by L-BFGS-B bounds and everything
# else by an augmented Lagrangian outer loop.

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

import config
from dynamics import FlowDivergenceError, FlowStiffnessError, sample_orbit
from equilibria import EMPTY_TARGET_MESSAGE, EquilibriumSetApprox, FeasibleSetResult
from geometry import ConvexHullRegion, ImpulsiveControlError, Region, RegionError
from impulsive import ImpulsiveSystem, discrete_step
from logger import AppLogger, silent_logger
from utils import to_jsonable

STATUSES = ("converged", "max_iter", "infeasible")


class EmptyTargetError(ImpulsiveControlError):
    """The target equilibrium set is empty, so the MPC problem is ill-posed."""


def _as_weight(value, size: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = float(arr) * np.eye(size)
    elif arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (size, size):
        raise ValueError(f"{name} must be {size}x{size}, got {arr.shape}")
    return arr


@dataclass
class MpcConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    gamma: float
    solver_tol: float = config.SOLVER_TOL
    max_iter: int = config.SOLVER_MAX_ITER
    penalty_init: float = config.PENALTY_INIT
    penalty_growth: float = config.PENALTY_GROWTH
    max_outer: int = config.MAX_OUTER_ROUNDS
    fd_step: float = config.FD_GRADIENT_STEP
    distance_smoothing: float = config.DISTANCE_SMOOTHING
    orbit_samples: int = config.ORBIT_PENALTY_SAMPLES
    multistart: int = 1
    polish: bool = True
    seed: int = 0

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if self.N < 1:
            raise ValueError(f"N must be at least 1, got {self.N}")
        for name in ("Q", "R"):
            mat = getattr(self, name)
            if mat.shape[0] != mat.shape[1] or not np.allclose(mat, mat.T):
                raise ValueError(f"{name} must be a symmetric square matrix")
            try:
                np.linalg.cholesky(mat)
            except np.linalg.LinAlgError:
                raise ValueError(f"{name} must be positive definite") from None
        if self.gamma < 0:
            raise ValueError(f"gamma must be nonnegative, got {self.gamma}")
        for name in ("solver_tol", "penalty_init", "fd_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.penalty_growth <= 1:
            raise ValueError("penalty_growth must exceed 1")
        if self.max_iter < 1 or self.max_outer < 1 or self.multistart < 1:
            raise ValueError("max_iter, max_outer and multistart must be positive")
        if self.orbit_samples < 1:
            raise ValueError("orbit_samples must be positive")

    @classmethod
    def from_mapping(cls, mapping: dict, n: int, m: int) -> "MpcConfig":
        """Builds a config from scenario values; scalar Q and R mean scalar * identity."""
        values = dict(mapping)
        values["Q"] = _as_weight(values["Q"], n, "Q")
        values["R"] = _as_weight(values["R"], m, "R")
        return cls(**values)

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "Q": self.Q.tolist(),
            "R": self.R.tolist(),
            "gamma": self.gamma,
            "solver_tol": self.solver_tol,
            "max_iter": self.max_iter,
            "penalty_init": self.penalty_init,
            "penalty_growth": self.penalty_growth,
            "max_outer": self.max_outer,
            "fd_step": self.fd_step,
            "distance_smoothing": self.distance_smoothing,
            "orbit_samples": self.orbit_samples,
            "multistart": self.multistart,
            "polish": self.polish,
            "seed": self.seed,
        }


@dataclass
class MpcProblem:
    sys: ImpulsiveSystem
    cfg: MpcConfig
    target: EquilibriumSetApprox
    xd: FeasibleSetResult

    def __post_init__(self):
        if self.target.is_empty:
            raise EmptyTargetError(EMPTY_TARGET_MESSAGE)
        if self.cfg.Q.shape != (self.sys.n, self.sys.n):
            raise ValueError(f"Q must be {self.sys.n}x{self.sys.n}")
        if self.cfg.R.shape != (self.sys.m, self.sys.m):
            raise ValueError(f"R must be {self.sys.m}x{self.sys.m}")
        region = self.xd.region
        if isinstance(region, ConvexHullRegion) and region.equations is None:
            raise RegionError("X_d hull has no facet equations; the solver needs them")

    @property
    def region(self) -> Region:
        return self.xd.region

    @property
    def precondition_tol(self) -> float:
        return max(config.MEMBERSHIP_TOL, 10.0 * self.cfg.solver_tol)


@dataclass
class MpcSolution:
    u_seq: np.ndarray
    x_pred: np.ndarray
    x_s: np.ndarray
    u_s: np.ndarray
    cost: float
    status: str
    constraint_residuals: dict = field(default_factory=dict)
    iterations: int = 0
    outer_rounds: int = 0
    source: str = "optimizer"
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def summary(self) -> dict:
        return to_jsonable({
            "status": self.status,
            "cost": self.cost,
            "source": self.source,
            "iterations": self.iterations,
            "outer_rounds": self.outer_rounds,
            "u0": self.u_seq[0],
            "x_s": self.x_s,
            "u_s": self.u_s,
            "constraint_residuals": self.constraint_residuals,
            "message": self.message,
        })


def rollout(prob: MpcProblem, x: np.ndarray, u_seq: np.ndarray,
            jump_first: bool = False) -> np.ndarray:
    """
    Predicted states x_0..x_N, shape (N+1, n). With jump_first, x is the state
    before a jump at the current instant, so x_1 = x + B u_0.
    """
    u_seq = np.asarray(u_seq, dtype=float).reshape(prob.cfg.N, prob.sys.m)
    states = [np.asarray(x, dtype=float).reshape(-1)]
    for j, u in enumerate(u_seq):
        if jump_first and j == 0:
            states.append(states[-1] + prob.sys.B @ u)
        else:
            states.append(discrete_step(prob.sys, states[-1], u))
    return np.vstack(states)


def cost_eval(prob: MpcProblem, x: np.ndarray, u_seq, x_s, u_s,
              jump_first: bool = False) -> float:
    """J_N(x; u, x_s, u_s) with exact Euclidean distances to the stored pairs."""
    cfg = prob.cfg
    x_s = np.asarray(x_s, dtype=float).reshape(-1)
    u_s = np.asarray(u_s, dtype=float).reshape(-1)
    u_seq = np.asarray(u_seq, dtype=float).reshape(cfg.N, prob.sys.m)
    states = rollout(prob, x, u_seq, jump_first)[:-1]
    dx = states - x_s
    du = u_seq - u_s
    stage = np.einsum("ji,ik,jk->", dx, cfg.Q, dx) + np.einsum("ji,ik,jk->", du, cfg.R, du)
    d_x = prob.target.xs_cloud.nearest(x_s)[0][0]
    d_u = prob.target.us_cloud.nearest(u_s)[0][0]
    return float(stage + cfg.gamma * (d_x + d_u))


class _Layout:
    """
    Decision vector [u_0..u_{N-1}, x_s, u_s] mapped to [0, 1] per component.
    Components outside `free` are held at `fixed`.
    """

    def __init__(self, prob: MpcProblem, free: np.ndarray, fixed: np.ndarray):
        sys, N = prob.sys, prob.cfg.N
        self.N, self.n, self.m = N, sys.n, sys.m
        self.lower = np.concatenate([np.tile(sys.U.lower, N), sys.X.lower, sys.U.lower])
        self.upper = np.concatenate([np.tile(sys.U.upper, N), sys.X.upper, sys.U.upper])
        width = self.upper - self.lower
        self.width = np.where(width > 0, width, 1.0)
        self.free = free
        self.fixed = fixed

    @property
    def size(self) -> int:
        return int(self.free.sum())

    def to_full(self, z: np.ndarray) -> np.ndarray:
        """Scaled free columns (d, k) to full unscaled columns (D, k)."""
        k = z.shape[1]
        full = np.repeat(self.fixed[:, None], k, axis=1)
        full[self.free] = self.lower[self.free, None] + z * self.width[self.free, None]
        return full

    def to_scaled(self, full: np.ndarray) -> np.ndarray:
        z = (full[self.free] - self.lower[self.free]) / self.width[self.free]
        return np.clip(z, 0.0, 1.0)

    def split(self, full: np.ndarray):
        nm = self.N * self.m
        u = full[:nm].reshape(self.N, self.m, -1)
        x_s = full[nm:nm + self.n]
        u_s = full[nm + self.n:]
        return u, x_s, u_s

    def pack(self, u_seq: np.ndarray, x_s: np.ndarray, u_s: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(u_seq, float).reshape(-1), x_s, u_s])


def _huber(d: np.ndarray, width: float) -> np.ndarray:
    if width <= 0:
        return d
    return np.where(d <= width, 0.5 * d * d / width, d - 0.5 * width)


class _Evaluator:
    """Cost and constraint values for a batch of decision columns."""

    def __init__(self, prob: MpcProblem, x: np.ndarray, layout: _Layout,
                 jump_first: bool = False):
        self.prob = prob
        self.x = x
        self.layout = layout
        self.jump_first = jump_first
        sys = prob.sys
        self.width_x = prob.cfg.distance_smoothing * sys.X.diameter
        self.width_u = prob.cfg.distance_smoothing * sys.U.diameter

    def __call__(self, full: np.ndarray) -> dict:
        prob, cfg, sys = self.prob, self.prob.cfg, self.prob.sys
        u, x_s, u_s = self.layout.split(full)
        k = full.shape[1]
        states = [np.repeat(self.x[:, None], k, axis=1)]
        for j in range(cfg.N):
            if self.jump_first and j == 0:
                states.append(states[-1] + sys.B @ u[0])
            else:
                states.append(discrete_step(sys, states[-1], u[j]))
        traj = np.stack(states)  # (N+1, n, k)

        dx = traj[:-1] - x_s[None]
        du = u - u_s[None]
        stage = (np.einsum("jik,il,jlk->k", dx, cfg.Q, dx)
                 + np.einsum("jik,il,jlk->k", du, cfg.R, du))

        orbit = sample_orbit(sys.field, x_s, sys.T, cfg.orbit_samples, sys.integrator)
        h_eq = x_s - orbit[-1] - sys.B @ u_s
        h_term = traj[-1] - x_s

        if cfg.N > 1:
            inner = np.transpose(traj[1:-1], (2, 0, 1)).reshape(-1, sys.n)
            g_xd = prob.region.constraint_values(inner).reshape(k, -1)
        else:
            g_xd = np.zeros((k, 0))
        orbit_pts = np.transpose(orbit, (2, 0, 1)).reshape(-1, sys.n)
        g_orb = sys.X.constraint_values(orbit_pts).reshape(k, -1)

        d_x = prob.target.xs_cloud.nearest(x_s.T)[0]
        d_u = prob.target.us_cloud.nearest(u_s.T)[0]
        return {
            "traj": traj,
            "stage": stage,
            "d_x": d_x,
            "d_u": d_u,
            "smooth": stage + cfg.gamma * (_huber(d_x, self.width_x) + _huber(d_u, self.width_u)),
            "exact": stage + cfg.gamma * (d_x + d_u),
            "eq": np.vstack([h_eq, h_term]).T,  # (k, 2n)
            "ineq": np.hstack([g_xd, g_orb]),  # (k, c)
            "h_eq": h_eq,
            "h_term": h_term,
            "g_xd": g_xd,
            "g_orb": g_orb,
        }


def _residuals(parts: dict, col: int, layout: _Layout, full: np.ndarray) -> dict:
    over_u = np.maximum(
        np.maximum(layout.lower - full[:, col], full[:, col] - layout.upper), 0.0
    )
    return {
        "equilibrium": float(np.abs(parts["h_eq"][:, col]).max()),
        "terminal": float(np.linalg.norm(parts["h_term"][:, col])),
        "xd": float(np.maximum(parts["g_xd"][col], 0.0).max(initial=0.0)),
        "orbit": float(np.maximum(parts["g_orb"][col], 0.0).max(initial=0.0)),
        "bounds": float(over_u.max(initial=0.0)),
    }


def _make_solution(prob: MpcProblem, layout: _Layout, evaluator: _Evaluator,
                   full_col: np.ndarray, status_hint: str, source: str,
                   iterations: int = 0, outer: int = 0) -> MpcSolution:
    full = full_col[:, None]
    parts = evaluator(full)
    residuals = _residuals(parts, 0, layout, full)
    tol = prob.cfg.solver_tol
    ok = all(v <= tol for v in residuals.values())
    if status_hint == "infeasible":
        status = "infeasible"
    else:
        status = "converged" if ok else "max_iter"
    u, x_s, u_s = layout.split(full)
    return MpcSolution(
        u_seq=u[:, :, 0].copy(),
        x_pred=parts["traj"][:, :, 0].copy(),
        x_s=x_s[:, 0].copy(),
        u_s=u_s[:, 0].copy(),
        cost=float(parts["exact"][0]),
        status=status,
        constraint_residuals=residuals,
        iterations=iterations,
        outer_rounds=outer,
        source=source,
    )


def _augmented_lagrangian(prob: MpcProblem, evaluator: _Evaluator, layout: _Layout,
                          start_full: np.ndarray) -> tuple[np.ndarray, int, int]:
    """
    Outer loop of multiplier and penalty updates around L-BFGS-B. Returns the
    final full decision vector, the inner iteration count and the outer
    round count.
    """
    cfg = prob.cfg
    z = layout.to_scaled(start_full)
    d = z.size
    base = evaluator(layout.to_full(z[:, None]))
    scale = 1.0 + float(base["smooth"][0])
    lam = np.zeros(base["eq"].shape[1])
    mu = np.zeros(base["ineq"].shape[1])
    rho = cfg.penalty_init
    prev_violation = np.inf
    iterations = 0
    rounds = 0

    def lagrangian(parts: dict) -> np.ndarray:
        eq = parts["eq"]
        ineq = parts["ineq"]
        value = parts["smooth"] / scale + eq @ lam + 0.5 * rho * np.sum(eq * eq, axis=1)
        if ineq.shape[1]:
            shifted = np.maximum(0.0, mu + rho * ineq)
            value = value + (np.sum(shifted * shifted, axis=1) - np.sum(mu * mu)) / (2.0 * rho)
        return value

    def fun(zv: np.ndarray):
        h = cfg.fd_step * np.maximum(1.0, np.abs(zv))
        direction = np.where(zv + h <= 1.0, 1.0, -1.0)
        cols = np.repeat(zv[:, None], d + 1, axis=1)
        cols[np.arange(d), np.arange(1, d + 1)] += direction * h
        values = lagrangian(evaluator(layout.to_full(cols)))
        grad = (values[1:] - values[0]) / (direction * h)
        return float(values[0]), grad

    for rounds in range(1, cfg.max_outer + 1):
        res = minimize(
            fun, z, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * d,
            options={"maxiter": cfg.max_iter, "ftol": config.INNER_FTOL,
                     "gtol": config.INNER_GTOL},
        )
        z = np.clip(res.x, 0.0, 1.0)
        iterations += int(res.nit)
        parts = evaluator(layout.to_full(z[:, None]))
        eq = parts["eq"][0]
        ineq = parts["ineq"][0]
        violation = max(np.abs(eq).max(initial=0.0), np.maximum(ineq, 0.0).max(initial=0.0))
        if violation <= cfg.solver_tol:
            break
        if violation <= 0.25 * prev_violation:
            lam = lam + rho * eq
            mu = np.maximum(0.0, mu + rho * ineq)
        else:
            rho *= cfg.penalty_growth
        prev_violation = violation
    final = project_equalities(prob, evaluator, layout, layout.to_full(z[:, None])[:, 0])
    return final, iterations, rounds


def _violation(parts: dict) -> float:
    eq = parts["eq"][0]
    ineq = parts["ineq"][0]
    return float(max(np.abs(eq).max(initial=0.0), np.maximum(ineq, 0.0).max(initial=0.0)))


def project_equalities(prob: MpcProblem, evaluator: _Evaluator, layout: _Layout,
                       full_col: np.ndarray, sweeps: int = config.PROJECTION_SWEEPS
                       ) -> np.ndarray:
    """
    Gauss-Newton sweeps that drive the equilibrium and terminal equalities to
    zero. Inequalities within solver_tol of activity are held at or below zero
    to first order; components sitting on a bound stay there. A sweep is kept
    only when it lowers the largest violation.
    """
    tol = prob.cfg.solver_tol
    full = np.asarray(full_col, dtype=float).copy()
    best = _violation(evaluator(full[:, None]))
    for _ in range(sweeps):
        if best <= config.PROJECTION_TARGET:
            break
        h_all = prob.cfg.fd_step * np.maximum(1.0, np.abs(full))
        movable = layout.free & (full > layout.lower) & (full + h_all <= layout.upper)
        idx = np.flatnonzero(movable)
        if idx.size == 0:
            break
        h = h_all[idx]
        cols = np.repeat(full[:, None], idx.size + 1, axis=1)
        cols[idx, np.arange(1, idx.size + 1)] += h
        batch = evaluator(cols)
        active = batch["ineq"][0] > -tol
        rows = np.hstack([batch["eq"], batch["ineq"][:, active]])
        jac = ((rows[1:] - rows[0]) / h[:, None]).T
        target = np.concatenate([batch["eq"][0], np.maximum(batch["ineq"][0, active], 0.0)])
        step = np.linalg.lstsq(jac, -target, rcond=None)[0]
        trial = full.copy()
        trial[idx] = np.clip(full[idx] + step, layout.lower[idx], layout.upper[idx])
        value = _violation(evaluator(trial[:, None]))
        if not value < best:
            break
        full, best = trial, value
    return full


def _initial_guess(prob: MpcProblem, x: np.ndarray, warm: MpcSolution | None) -> np.ndarray:
    """Shifted warm start when available, otherwise the nearest stored pair held constant."""
    N = prob.cfg.N
    if warm is not None:
        u_seq = np.vstack([warm.u_seq[1:], warm.u_s[None, :]])
        return np.concatenate([u_seq.reshape(-1), warm.x_s, warm.u_s])
    pair = prob.target.pairs[prob.target.nearest_pair(x)]
    return np.concatenate([np.tile(pair.u_s, N), pair.x_s, pair.u_s])


def _random_start(prob: MpcProblem, rng: np.random.Generator) -> np.ndarray:
    sys, N = prob.sys, prob.cfg.N
    pair = prob.target.pairs[int(rng.integers(len(prob.target)))]
    u_seq = rng.uniform(sys.U.lower, sys.U.upper, size=(N, sys.m))
    return np.concatenate([u_seq.reshape(-1), pair.x_s, pair.u_s])


def _pick_best(candidates: list[MpcSolution]) -> MpcSolution:
    converged = [c for c in candidates if c.converged]
    pool = converged or candidates
    return min(pool, key=lambda c: (c.cost if np.isfinite(c.cost) else np.inf))


def solve(prob: MpcProblem, x: np.ndarray, warm: MpcSolution | None = None,
          logger: AppLogger | None = None, jump_first: bool = False) -> MpcSolution:
    """
    Solves the finite-horizon problem from state x. Outside X_d the best
    effort iterate is still returned, with status `infeasible`.

    Random multistarts run only without a warm start. With jump_first, x is
    the state just before a jump at the current instant (see `rollout`).
    """
    logger = logger or silent_logger()
    cfg = prob.cfg
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != prob.sys.n:
        raise ValueError(f"x has dimension {x.shape[0]}, expected {prob.sys.n}")
    started = time.perf_counter()

    outside = float(np.max(prob.region.constraint_values(x[None, :]), initial=0.0))
    status_hint = "infeasible" if outside > prob.precondition_tol else "ok"
    if status_hint == "infeasible":
        logger.warning(f"MPC: state {x} lies outside X_d by {outside:.3g}")

    size = cfg.N * prob.sys.m + prob.sys.n + prob.sys.m
    full_layout = _Layout(prob, np.ones(size, dtype=bool), np.zeros(size))
    evaluator = _Evaluator(prob, x, full_layout, jump_first)

    try:
        start = _initial_guess(prob, x, warm)
        first = _make_solution(prob, full_layout, evaluator, start, status_hint, "initial")
        if not first.converged and warm is not None:
            start = project_equalities(prob, evaluator, full_layout, start)
            first = _make_solution(prob, full_layout, evaluator, start, status_hint, "initial")
        if first.converged and first.cost <= cfg.solver_tol:
            return _finish(first, started, logger)

        rng = np.random.default_rng(cfg.seed)
        extra = cfg.multistart - 1 if warm is None else 0
        starts = [start] + [_random_start(prob, rng) for _ in range(extra)]

        def run(start_full: np.ndarray) -> MpcSolution:
            final, iters, rounds = _augmented_lagrangian(prob, evaluator, full_layout, start_full)
            return _make_solution(prob, full_layout, evaluator, final, status_hint,
                                  "optimizer", iters, rounds)

        if len(starts) == 1:
            results = [run(starts[0])]
        else:
            with ThreadPoolExecutor(max_workers=len(starts)) as pool:
                results = list(pool.map(run, starts))
        candidates = results + [first]
        best = _pick_best(candidates)

        if cfg.polish and not _on_stored_pair(best, evaluator):
            polished = _polish(prob, x, best, status_hint, jump_first)
            if polished is not None:
                candidates.append(polished)
                best = _pick_best(candidates)
    except (FlowDivergenceError, FlowStiffnessError) as exc:
        logger.error(f"MPC rollout failed: {exc}")
        pair = prob.target.pairs[prob.target.nearest_pair(x)]
        solution = MpcSolution(
            u_seq=np.tile(pair.u_s, (cfg.N, 1)),
            x_pred=np.tile(x, (cfg.N + 1, 1)),
            x_s=pair.x_s.copy(),
            u_s=pair.u_s.copy(),
            cost=float("inf"),
            status="infeasible",
            source="fallback",
            message=str(exc),
        )
        return _finish(solution, started, logger)

    if status_hint == "infeasible":
        best.message = f"x outside X_d by {outside:.3g}"
    return _finish(best, started, logger)


def _on_stored_pair(solution: MpcSolution, evaluator: _Evaluator) -> bool:
    """Converged with the artificial pair inside the smoothing width of a stored pair."""
    if not solution.converged:
        return False
    target = evaluator.prob.target
    d_x = target.xs_cloud.nearest(solution.x_s)[0][0]
    d_u = target.us_cloud.nearest(solution.u_s)[0][0]
    return d_x <= evaluator.width_x and d_u <= evaluator.width_u


def _polish(prob: MpcProblem, x: np.ndarray, best: MpcSolution, status_hint: str,
            jump_first: bool = False) -> MpcSolution | None:
    """
    Re-solves with (x_s, u_s) pinned to the stored pair nearest the optimizer's
    artificial pair; with a large gamma the optimum sits on a stored pair.
    """
    cfg = prob.cfg
    pair = prob.target.pairs[prob.target.nearest_pair(best.x_s)]
    if np.allclose(pair.x_s, best.x_s) and np.allclose(pair.u_s, best.u_s):
        return None
    size = cfg.N * prob.sys.m + prob.sys.n + prob.sys.m
    free = np.zeros(size, dtype=bool)
    free[: cfg.N * prob.sys.m] = True
    start = np.concatenate([best.u_seq.reshape(-1), pair.x_s, pair.u_s])
    layout = _Layout(prob, free, start)
    evaluator = _Evaluator(prob, x, layout, jump_first)
    final, iters, rounds = _augmented_lagrangian(prob, evaluator, layout, start)
    return _make_solution(prob, layout, evaluator, final, status_hint, "polished", iters, rounds)


def _finish(solution: MpcSolution, started: float, logger: AppLogger) -> MpcSolution:
    logger.debug(
        f"MPC solve ({time.perf_counter() - started:.3f}s): {json.dumps(solution.summary())}"
    )
    return solution


def brute_force_solve(
    prob: MpcProblem,
    x: np.ndarray,
    grid_per_input: int = 2001,
    terminal_slack: float | None = None,
    zoom_levels: int = 2,
    chunk: int = 500_000,
) -> MpcSolution:
    """
    Exhaustive grid search over input sequences with (x_s, u_s) fixed to the
    single stored pair. Sequences must keep x_j in X_d for j < N and end
    within terminal_slack of x_s (default ten times the grid resolution
    ||B|| du / 2). Each zoom level repeats the search on a finer grid around
    the previous winner.
    """
    cfg, sys = prob.cfg, prob.sys
    dims = cfg.N * sys.m
    if dims > 3:
        raise ValueError(f"brute force needs N*m <= 3, got {dims}")
    if len(prob.target) != 1:
        raise ValueError("brute force needs a target with a single stored pair")
    if grid_per_input < 2:
        raise ValueError("grid_per_input must be at least 2")
    x = np.asarray(x, dtype=float).reshape(-1)
    pair = prob.target.pairs[0]
    size = dims + sys.n + sys.m
    free = np.zeros(size, dtype=bool)
    free[:dims] = True
    fixed = np.concatenate([np.zeros(dims), pair.x_s, pair.u_s])
    layout = _Layout(prob, free, fixed)
    evaluator = _Evaluator(prob, x, layout)

    b_norm = float(np.linalg.norm(sys.B, 2))
    b_min = float(np.linalg.svd(sys.B, compute_uv=False).min())
    lower = layout.lower[:dims].copy()
    upper = layout.upper[:dims].copy()
    best_u = None
    best_cost = np.inf
    slack_used = 0.0

    for level in range(zoom_levels + 1):
        axes = [np.linspace(lo, hi, grid_per_input) for lo, hi in zip(lower, upper)]
        spacing = float(max(ax[1] - ax[0] for ax in axes))
        slack = terminal_slack if terminal_slack is not None else 10.0 * b_norm * spacing / 2.0
        mesh = np.stack([g.ravel() for g in np.meshgrid(*axes, indexing="ij")])
        level_cost = np.inf
        level_u = None
        for begin in range(0, mesh.shape[1], chunk):
            cols = mesh[:, begin:begin + chunk]
            full = np.repeat(fixed[:, None], cols.shape[1], axis=1)
            full[:dims] = cols
            parts = evaluator(full)
            feasible = np.linalg.norm(parts["h_term"], axis=0) <= slack
            if parts["g_xd"].shape[1]:
                feasible &= parts["g_xd"].max(axis=1) <= config.MEMBERSHIP_TOL
            if not feasible.any():
                continue
            costs = np.where(feasible, parts["exact"], np.inf)
            i = int(np.argmin(costs))
            if costs[i] < level_cost:
                level_cost, level_u = float(costs[i]), cols[:, i].copy()
        if level_u is None:
            if best_u is None:
                return MpcSolution(
                    u_seq=np.zeros((cfg.N, sys.m)),
                    x_pred=np.tile(x, (cfg.N + 1, 1)),
                    x_s=pair.x_s.copy(),
                    u_s=pair.u_s.copy(),
                    cost=float("inf"),
                    status="infeasible",
                    source="brute_force",
                    message="no grid sequence meets the terminal constraint",
                )
            break
        best_u, best_cost, slack_used = level_u, level_cost, slack
        half = 2.0 * slack / b_min + 2.0 * spacing
        lower = np.maximum(layout.lower[:dims], best_u - half)
        upper = np.minimum(layout.upper[:dims], best_u + half)

    u_seq = best_u.reshape(cfg.N, sys.m)
    return MpcSolution(
        u_seq=u_seq,
        x_pred=rollout(prob, x, u_seq),
        x_s=pair.x_s.copy(),
        u_s=pair.u_s.copy(),
        cost=best_cost,
        status="converged",
        constraint_residuals={"terminal_slack": slack_used},
        source="brute_force",
    )


class MpcController:
    """
    The receding-horizon law kappa_MPC: each call solves from the given state
    and returns the first input. The previous solution warm-starts the next
    call while it is usable.
    """

    def __init__(self, prob: MpcProblem, logger: AppLogger | None = None):
        self.prob = prob
        self.logger = logger or silent_logger()
        self.last: MpcSolution | None = None
        self.solutions: list[MpcSolution] = []
        self.status_history: list[str] = []

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self._record(solve(self.prob, x, self.last, self.logger))

    def initial_input(self, x: np.ndarray) -> np.ndarray:
        """Input for a jump applied to x at the current instant, before any free arc."""
        return self._record(solve(self.prob, x, self.last, self.logger, jump_first=True))

    def _record(self, solution: MpcSolution) -> np.ndarray:
        self.solutions.append(solution)
        self.status_history.append(solution.status)
        self.last = solution if solution.status != "infeasible" else None
        return solution.u_seq[0].copy()

    def reset(self) -> None:
        self.last = None
        self.solutions.clear()
        self.status_history.clear()

    @property
    def costs(self) -> list[float]:
        return [s.cost for s in self.solutions]


def kappa_mpc(prob: MpcProblem, logger: AppLogger | None = None) -> MpcController:
    return MpcController(prob, logger)
