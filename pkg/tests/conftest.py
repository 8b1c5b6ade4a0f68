# tests/conftest.py

import numpy as np
import pytest

from dynamics import VectorField, sample_orbit
from equilibria import EquilibriumPair, EquilibriumSetApprox, FeasibleSetResult
from geometry import Box
from impulsive import ImpulsiveSystem
from logger import AppLogger
from mpc import MpcConfig, MpcProblem
from scenarios import LITHIUM_A


@pytest.fixture
def captured_logger():
    """An AppLogger at Debug level whose messages are collected in a list."""
    messages = []
    logger = AppLogger(messages.append, "Debug")
    logger.messages = messages
    return logger


@pytest.fixture
def lithium_system():
    """The three-compartment lithium model with its constraints."""
    return ImpulsiveSystem(
        VectorField.linear(LITHIUM_A, name="lithium"),
        np.array([[10.9], [0.0], [0.0]]),
        3.0,
        Box([0.0, 0.0, 0.0], [2.0, 1.2, 1.2]),
        Box([0.0], [5.95]),
        name="lithium",
    )


@pytest.fixture
def lithium_window():
    return Box([0.4, 0.6, 0.5], [0.6, 0.9, 0.8])


@pytest.fixture
def static_system():
    """x' = 0 on [0, 2]^3 with B = I: every state is an equilibrium with u = 0."""
    return ImpulsiveSystem(
        VectorField.zero(3), np.eye(3), 1.0,
        Box([0.0] * 3, [2.0] * 3), Box([-2.0] * 3, [2.0] * 3), name="static",
    )


def _single_pair_target(sys: ImpulsiveSystem, x_s, u_s, resolution: int = 10
                        ) -> EquilibriumSetApprox:
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    u_s = np.atleast_1d(np.asarray(u_s, dtype=float))
    orbit = sample_orbit(sys.field, x_s, sys.T, resolution, sys.integrator)
    return EquilibriumSetApprox([EquilibriumPair(x_s, u_s, 0.0)], orbit[None], resolution)


@pytest.fixture
def pair_target():
    """Builds a target holding one stored pair and its sampled orbit."""
    return _single_pair_target


@pytest.fixture
def halving_system():
    """x' = -x over T = ln 2, so phi(x, T) = x / 2, with B = 1 on [-10, 10]."""
    box = Box([-10.0], [10.0])
    return ImpulsiveSystem(
        VectorField.linear([[-1.0]]), np.array([[1.0]]), float(np.log(2.0)),
        box, Box([-10.0], [10.0]), Xd=box, name="halving",
    )


@pytest.fixture
def halving_problem(halving_system):
    """Two-step MPC on the halving system with the single pair (0, 0)."""
    target = _single_pair_target(halving_system, [0.0], [0.0])
    xd = FeasibleSetResult(halving_system.X, "box", np.zeros((0, 1)))
    cfg = MpcConfig(N=2, Q=np.eye(1), R=np.eye(1), gamma=1000.0)
    return MpcProblem(halving_system, cfg, target, xd)
