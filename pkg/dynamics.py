# dynamics.py
#
# Vector fields, the flow map phi(x, t) and Lipschitz bounds for the flow.
# A single state is a 1-D array of length n; a batch of states is an (n, k)
# array with one state per column, integrated as one stacked system.

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

import config
from geometry import Box, DimensionMismatchError, ImpulsiveControlError

METHODS = ("rk45", "rk4")


class FlowDivergenceError(ImpulsiveControlError):
    """The state became non-finite during integration."""

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


class FlowStiffnessError(ImpulsiveControlError):
    """The adaptive integrator could not keep its step size above machine limits."""

    def __init__(self, message: str, last_time: float):
        super().__init__(message)
        self.last_time = last_time


@dataclass(frozen=True)
class VectorField:
    """
    Autonomous dynamics x' = f(x).

    `func` must accept either a state of shape (n,) or a batch of shape
    (n, k) and return an array of the same shape. `jacobian`, when given,
    maps a single state to an (n, n) matrix.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None
    linear_part: np.ndarray | None = None
    name: str = "field"
    _expm_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be positive, got {self.dim}")
        if self.linear_part is not None:
            a = np.atleast_2d(np.asarray(self.linear_part, dtype=float))
            if a.shape != (self.dim, self.dim):
                raise DimensionMismatchError(
                    f"linear_part must be {self.dim}x{self.dim}, got {a.shape}"
                )
            object.__setattr__(self, "linear_part", a)

    @classmethod
    def linear(cls, matrix, name: str = "linear") -> "VectorField":
        a = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(
            dim=a.shape[0],
            func=lambda x: a @ x,
            jacobian=lambda x: a.copy(),
            linear_part=a,
            name=name,
        )

    @classmethod
    def zero(cls, dim: int) -> "VectorField":
        return cls.linear(np.zeros((dim, dim)), name="zero")

    @property
    def is_linear(self) -> bool:
        return self.linear_part is not None

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.dim:
            raise DimensionMismatchError(
                f"{self.name}: expected state of dimension {self.dim}, got {x.shape}"
            )
        out = np.asarray(self.func(x), dtype=float)
        if out.shape == x.shape:
            return out
        if x.ndim == 2 and out.shape == (self.dim,):
            return np.repeat(out[:, None], x.shape[1], axis=1)
        raise DimensionMismatchError(
            f"{self.name}: field returned shape {out.shape} for input {x.shape}"
        )

    def _fd_steps(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(
            config.FD_JACOBIAN_STEP,
            config.FD_JACOBIAN_STEP * np.linalg.norm(x, axis=0),
        )

    def jac(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float).reshape(self.dim)
        if self.jacobian is not None:
            return np.asarray(self.jacobian(x), dtype=float).reshape(self.dim, self.dim)
        return self.jac_batch(x[:, None])[0]

    def jac_batch(self, xs: np.ndarray) -> np.ndarray:
        """Jacobians at every column of xs, shape (k, n, n)."""
        xs = np.asarray(xs, dtype=float)
        if self.jacobian is not None:
            return np.stack([self.jac(col) for col in xs.T])
        n, k = xs.shape
        h = self._fd_steps(xs)
        out = np.empty((k, n, n))
        for i in range(n):
            step = np.zeros((n, k))
            step[i] = h
            diff = self.evaluate(xs + step) - self.evaluate(xs - step)
            out[:, :, i] = (diff / (2.0 * h)).T
        return out

    def exp(self, t: float) -> np.ndarray:
        """e^{tA} for linear fields, cached per time value."""
        if self.linear_part is None:
            raise TypeError(f"{self.name} has no linear part")
        key = float(t)
        if key not in self._expm_cache:
            self._expm_cache[key] = expm(key * self.linear_part)
        return self._expm_cache[key]


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = config.DEFAULT_ABS_TOL
    rel_tol: float = config.DEFAULT_REL_TOL
    max_step: float = config.DEFAULT_MAX_STEP
    method: str = config.DEFAULT_METHOD
    exact_linear: bool = True

    def __post_init__(self):
        for name in ("abs_tol", "rel_tol", "max_step"):
            value = getattr(self, name)
            if not value > 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def halved(self) -> "IntegratorConfig":
        return IntegratorConfig(
            self.abs_tol / 2, self.rel_tol / 2, self.max_step, self.method, self.exact_linear
        )

    def to_dict(self) -> dict:
        return {
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "max_step": self.max_step,
            "method": self.method,
            "exact_linear": self.exact_linear,
        }


@dataclass(frozen=True)
class LipschitzEstimate:
    T: float
    c_f: float
    c_phi_exp: float
    c_phi_used: float
    c_phi_linear: float | None = None
    c_phi_endpoint: float | None = None

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "c_f": self.c_f,
            "c_phi_exp": self.c_phi_exp,
            "c_phi_linear": self.c_phi_linear,
            "c_phi_endpoint": self.c_phi_endpoint,
            "c_phi_used": self.c_phi_used,
        }


class _NonFinite(Exception):
    def __init__(self, time: float):
        self.time = time


def _propagate_rk45(field_: VectorField, xs: np.ndarray, times: np.ndarray,
                    cfg: IntegratorConfig) -> np.ndarray:
    n, k = xs.shape
    last_ok = [0.0]

    def rhs(t, y):
        dy = field_.evaluate(y.reshape(n, k)).reshape(-1)
        if not np.all(np.isfinite(dy)) or not np.all(np.isfinite(y)):
            raise _NonFinite(last_ok[0])
        last_ok[0] = t
        return dy

    try:
        sol = solve_ivp(
            rhs, (0.0, float(times[-1])), xs.reshape(-1), method="RK45",
            t_eval=times, rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step,
        )
    except _NonFinite as exc:
        raise FlowDivergenceError(
            f"{field_.name}: non-finite state after t={exc.time:.6g}", exc.time
        ) from None
    if sol.status == -1:
        t_fail = float(sol.t[-1]) if len(sol.t) else 0.0
        if "step size" in sol.message.lower():
            raise FlowStiffnessError(f"{field_.name}: {sol.message}", t_fail)
        raise FlowDivergenceError(f"{field_.name}: {sol.message}", t_fail)
    out = sol.y.T.reshape(len(times), n, k)
    if not np.all(np.isfinite(out)):
        raise FlowDivergenceError(f"{field_.name}: non-finite state", last_ok[0])
    return out


def _propagate_rk4(field_: VectorField, xs: np.ndarray, times: np.ndarray,
                   cfg: IntegratorConfig) -> np.ndarray:
    out = np.empty((len(times),) + xs.shape)
    y = xs.copy()
    t = 0.0
    for i, target in enumerate(times):
        span = float(target) - t
        if span > 0:
            steps = int(np.ceil(span / cfg.max_step - 1e-12))
            h = span / steps
            for _ in range(steps):
                k1 = field_.evaluate(y)
                k2 = field_.evaluate(y + 0.5 * h * k1)
                k3 = field_.evaluate(y + 0.5 * h * k2)
                k4 = field_.evaluate(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
                if not np.all(np.isfinite(y)):
                    raise FlowDivergenceError(
                        f"{field_.name}: non-finite state after t={t:.6g}", t
                    )
                t += h
            t = float(target)
        out[i] = y
    return out


def propagate(field_: VectorField, xs: np.ndarray, times, cfg: IntegratorConfig | None = None
              ) -> np.ndarray:
    """
    States phi(x, t) for every column of xs and every t in the nondecreasing
    array `times`; returns shape (len(times), n, k).
    """
    cfg = cfg or IntegratorConfig()
    xs = np.asarray(xs, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if xs.ndim != 2 or xs.shape[0] != field_.dim:
        raise DimensionMismatchError(
            f"{field_.name}: expected states of shape ({field_.dim}, k), got {xs.shape}"
        )
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ValueError("times must be nonnegative and nondecreasing")

    if field_.is_linear and cfg.exact_linear:
        return np.stack([field_.exp(t) @ xs for t in times])
    if times[-1] == 0.0:
        return np.repeat(xs[None], len(times), axis=0)
    if cfg.method == "rk4":
        return _propagate_rk4(field_, xs, times, cfg)
    return _propagate_rk45(field_, xs, times, cfg)


def flow(field_: VectorField, x0: np.ndarray, t: float, cfg: IntegratorConfig | None = None
         ) -> np.ndarray:
    """phi(x0, t) for a state (n,) or a batch (n, k)."""
    if t < 0:
        raise ValueError(f"flow time must be nonnegative, got {t}")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    xs = x0[:, None] if single else x0
    out = propagate(field_, xs, [float(t)], cfg)[-1]
    return out[:, 0] if single else out


def sample_orbit(field_: VectorField, x0: np.ndarray, T: float, m: int,
                 cfg: IntegratorConfig | None = None) -> np.ndarray:
    """
    [phi(x0, jT/m)] for j = 0..m. Shape (m+1, n) for a single state and
    (m+1, n, k) for a batch; the first sample is x0 itself.
    """
    if m < 1:
        raise ValueError(f"m must be at least 1, got {m}")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    x0 = np.asarray(x0, dtype=float)
    single = x0.ndim == 1
    xs = x0[:, None] if single else x0
    samples = propagate(field_, xs, np.linspace(0.0, T, m + 1), cfg)
    samples[0] = xs
    return samples[:, :, 0] if single else samples


def estimate_field_lipschitz(
    field_: VectorField,
    domain: Box,
    grid_per_dim: int = config.LIPSCHITZ_GRID_PER_DIM,
    max_evaluations: int = config.LIPSCHITZ_MAX_EVALUATIONS,
    seed: int = 0,
    chunk: int = 20_000,
) -> float:
    """
    Max of the spectral norm ||Jf(x)||_2 over a regular grid of the domain,
    or over a Monte Carlo sample of the same budget when the grid is larger.
    """
    if field_.dim != domain.dim:
        raise DimensionMismatchError("field and domain dimensions differ")
    if field_.is_linear:
        return float(np.linalg.norm(field_.linear_part, 2))
    if grid_per_dim ** domain.dim <= max_evaluations:
        points = domain.grid(grid_per_dim)
    else:
        rng = np.random.default_rng(seed)
        points = rng.uniform(domain.lower, domain.upper, size=(max_evaluations, domain.dim))

    best = 0.0
    for start in range(0, points.shape[0], chunk):
        jacs = field_.jac_batch(points[start:start + chunk].T)
        best = max(best, float(np.linalg.norm(jacs, ord=2, axis=(1, 2)).max()))
    return best


def flow_lipschitz_bounds(
    field_: VectorField,
    T: float,
    domain: Box,
    grid_per_dim: int = config.LIPSCHITZ_GRID_PER_DIM,
    time_samples: int = config.LIPSCHITZ_TIME_SAMPLES,
) -> LipschitzEstimate:
    """
    Bounds on the Lipschitz constant of x -> phi(x, t), t in [0, T]. The
    generic bound is e^{T c_f}. For linear fields the sharper bound is the
    largest ||e^{tA}||_2 over a time grid on [0, T]; its endpoint value
    ||e^{TA}||_2 is reported alongside.
    """
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")
    c_f = estimate_field_lipschitz(field_, domain, grid_per_dim)
    c_phi_exp = float(np.exp(T * c_f))
    if not field_.is_linear:
        return LipschitzEstimate(T=T, c_f=c_f, c_phi_exp=c_phi_exp, c_phi_used=c_phi_exp)

    norms = [np.linalg.norm(expm(t * field_.linear_part), 2)
             for t in np.linspace(0.0, T, max(time_samples, 2))]
    c_phi_linear = float(max(norms))
    return LipschitzEstimate(
        T=T,
        c_f=c_f,
        c_phi_exp=c_phi_exp,
        c_phi_used=min(c_phi_exp, c_phi_linear),
        c_phi_linear=c_phi_linear,
        c_phi_endpoint=float(norms[-1]),
    )


def empirical_flow_ratio(
    field_: VectorField,
    T: float,
    domain: Box,
    pairs: int = 100,
    times: int = 10,
    cfg: IntegratorConfig | None = None,
    seed: int = 0,
) -> float:
    """
    Largest observed ||phi(x,t) - phi(y,t)|| / ||x - y|| over random pairs
    in the domain and random times in [0, T].
    """
    rng = np.random.default_rng(seed)
    xs = rng.uniform(domain.lower, domain.upper, size=(pairs, domain.dim)).T
    ys = rng.uniform(domain.lower, domain.upper, size=(pairs, domain.dim)).T
    ts = np.sort(rng.uniform(0.0, T, size=times))
    both = propagate(field_, np.hstack([xs, ys]), ts, cfg)
    gaps = np.linalg.norm(both[:, :, :pairs] - both[:, :, pairs:], axis=1)
    base = np.linalg.norm(xs - ys, axis=0)
    return float((gaps / base).max())
