# tests/test_impulsive.py

import numpy as np
import pytest

from dynamics import VectorField
from geometry import Box, DimensionMismatchError
from impulsive import (
    ImpulsiveSystem,
    check_feasible_point,
    concatenate,
    discrete_step,
    feasible_mask,
    orbit_of,
    simulate_closed_loop,
)


def constant_input(value):
    return lambda x: np.atleast_1d(np.asarray(value, dtype=float))


def test_system_promotes_vector_b_to_column():
    sys = ImpulsiveSystem(VectorField.zero(2), np.array([1.0, 0.0]), 1.0,
                          Box([0, 0], [1, 1]), Box([0], [1]))
    assert sys.B.shape == (2, 1)
    assert sys.m == 1


def test_system_validation():
    """Rank-deficient B, a wrong-sized U and X_d outside X are refused."""
    X = Box([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        ImpulsiveSystem(VectorField.zero(2), np.zeros((2, 1)), 1.0, X, Box([0], [1]))
    with pytest.raises(DimensionMismatchError):
        ImpulsiveSystem(VectorField.zero(2), np.eye(2), 1.0, X, Box([0], [1]))
    with pytest.raises(ValueError):
        ImpulsiveSystem(VectorField.zero(2), np.eye(2), 1.0, X, Box([0, 0], [1, 1]),
                        Xd=Box([0, 0], [2, 2]))
    with pytest.raises(ValueError):
        ImpulsiveSystem(VectorField.zero(2), np.eye(2), 0.0, X, Box([0, 0], [1, 1]))


def test_discrete_step_lithium(lithium_system):
    """phi(x, T) + B u for a single state and for a batch of states."""
    x = np.array([0.5, 0.7, 0.6])
    u = np.array([0.3])
    expected = lithium_system.field.exp(3.0) @ x + lithium_system.B @ u
    assert np.allclose(discrete_step(lithium_system, x, u), expected)
    batch = discrete_step(lithium_system, np.column_stack([x, x]), np.array([[0.3, 0.3]]))
    assert np.allclose(batch[:, 1], expected)


def test_closed_loop_timing_and_sample_counts(static_system):
    """K impulses give K*spp + 1 hybrid samples and jumps at t0 + kT, the first on x0."""
    K, spp = 4, 5
    hybrid, discrete = simulate_closed_loop(
        static_system, constant_input([0.1, 0.0, 0.0]), np.ones(3), K, spp, t0=2.0
    )
    times, states = hybrid.samples()
    assert times.shape == (K * spp + 1,)
    assert states.shape == (K * spp + 1, 3)
    assert [jump.t for jump in hybrid.jumps] == pytest.approx([2.0, 3.0, 4.0, 5.0])
    assert np.allclose(hybrid.jumps[0].x_pre, 1.0)
    assert np.allclose(hybrid.jumps[0].x_post, [1.1, 1.0, 1.0])
    assert discrete.times == pytest.approx([2.0, 3.0, 4.0, 5.0, 6.0])
    assert np.allclose(discrete.states[0], [1.1, 1.0, 1.0])
    assert np.allclose(discrete.states[-1], [1.4, 1.0, 1.0])
    assert np.array_equal(discrete.states[-1], hybrid.final_state)
    assert len(discrete.inputs) == K
    assert hybrid.final_time == pytest.approx(6.0)
    assert hybrid.feasible


def test_first_jump_without_control(static_system):
    """With first_jump_at_zero=False the jump at t0 carries a null input."""
    calls = []

    def controller(x):
        calls.append(x.copy())
        return np.array([0.1, 0.0, 0.0])

    _, discrete = simulate_closed_loop(
        static_system, controller, np.ones(3), 3, 4, first_jump_at_zero=False
    )
    assert np.allclose(discrete.inputs[0], 0.0)
    assert np.allclose(discrete.states[0], 1.0)
    assert len(calls) == 2
    assert np.allclose(discrete.states[-1], [1.2, 1.0, 1.0])


def test_first_jump_prefers_initial_input(static_system):
    """A controller with initial_input decides the jump at t0 from the pre-jump state."""

    class Dosing:
        def __init__(self):
            self.seen = []

        def initial_input(self, x):
            self.seen.append(("initial", x.copy()))
            return np.array([0.3, 0.0, 0.0])

        def __call__(self, x):
            self.seen.append(("step", x.copy()))
            return np.array([0.1, 0.0, 0.0])

    controller = Dosing()
    hybrid, discrete = simulate_closed_loop(static_system, controller, np.ones(3), 3, 4)
    assert [kind for kind, _ in controller.seen] == ["initial", "step", "step"]
    assert np.allclose(controller.seen[0][1], 1.0)
    assert np.allclose(controller.seen[1][1], [1.3, 1.0, 1.0])
    assert np.allclose([jump.u[0] for jump in hybrid.jumps], [0.3, 0.1, 0.1])
    assert np.allclose(discrete.states[-1], [1.5, 1.0, 1.0])


def test_violations_are_recorded_not_clipped(static_system, captured_logger):
    """An input outside U and the state it produces both land in the violation log."""
    hybrid, discrete = simulate_closed_loop(
        static_system, constant_input([3.0, 0.0, 0.0]), np.ones(3), 1, 4,
        logger=captured_logger,
    )
    assert {v.kind for v in hybrid.violations} == {"input", "state"}
    assert hybrid.violations[0].kind == "input" and hybrid.violations[0].t == 0.0
    assert np.allclose(discrete.states[-1], [4.0, 1.0, 1.0])
    assert any("[WARNING]" in m for m in captured_logger.messages)


def test_zero_impulses_gives_one_free_arc(lithium_system):
    hybrid, discrete = simulate_closed_loop(
        lithium_system, constant_input([0.0]), np.array([0.5, 0.7, 0.6]), 0, 10
    )
    assert len(hybrid.arcs) == 1
    assert not hybrid.jumps
    assert np.allclose(hybrid.final_state, lithium_system.flow(np.array([0.5, 0.7, 0.6]), 3.0))
    assert len(discrete.states) == 1


def test_initial_state_outside_x(static_system):
    with pytest.raises(ValueError):
        simulate_closed_loop(static_system, constant_input([0, 0, 0]), np.full(3, 5.0), 1)


def test_concatenate_does_not_repeat_the_join(static_system):
    first = simulate_closed_loop(static_system, constant_input([0.1, 0, 0]), np.ones(3), 2, 3)
    second = simulate_closed_loop(
        static_system, constant_input([0.1, 0, 0]), first[0].final_state, 3, 3,
        t0=first[0].final_time,
    )
    hybrid, discrete = concatenate(first, second)
    assert len(hybrid.arcs) == 5
    assert len(discrete.states) == 6
    assert len(discrete.inputs) == 5
    assert discrete.times == pytest.approx([0, 1, 2, 3, 4, 5])
    assert np.allclose(discrete.states[2], [1.3, 1.0, 1.0])
    assert np.allclose(discrete.states[-1], [1.5, 1.0, 1.0])


def test_check_feasible_point_lithium(lithium_system):
    """(1.579, 0, 0) stays in X over one period; (2, 1.2, 0) does not."""
    assert check_feasible_point(lithium_system, [1.579, 0.0, 0.0], 50)
    assert not check_feasible_point(lithium_system, [2.0, 1.2, 0.0], 50)
    mask = feasible_mask(lithium_system, np.array([[1.579, 0, 0], [2.0, 1.2, 0.0]]), 50)
    assert mask.tolist() == [True, False]


def test_check_feasible_point_needs_two_samples(lithium_system):
    with pytest.raises(ValueError):
        check_feasible_point(lithium_system, [0.5, 0.7, 0.6], 1)


def test_orbit_of_is_a_point_cloud_of_the_free_orbit(lithium_system):
    x = np.array([0.5, 0.7, 0.6])
    cloud = orbit_of(lithium_system, x, 12)
    assert cloud.points.shape == (13, 3)
    assert np.allclose(cloud.points[-1], lithium_system.flow(x, 3.0))
