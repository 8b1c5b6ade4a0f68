# tests/test_geometry.py

import numpy as np
import pytest

from geometry import (
    Ball,
    BallBoxRegion,
    Box,
    ConvexHullRegion,
    DimensionMismatchError,
    PointCloud,
    RegionError,
    affine_rank,
    contains,
    convex_hull,
    distance_point_to_cloud,
    hausdorff_distance,
    max_radius_in_box,
    region_from_dict,
    sample_region,
)


@pytest.fixture
def unit_box():
    return Box([0.0, 0.0], [1.0, 1.0])


def test_box_rejects_inverted_bounds():
    """A box whose lower bound exceeds its upper bound is refused."""
    with pytest.raises(ValueError):
        Box([1.0, 0.0], [0.0, 1.0])


def test_box_grid_and_spacing(unit_box):
    """A 3-point grid of the unit square has 9 points spaced 0.5 apart."""
    grid = unit_box.grid(3)
    assert grid.shape == (9, 2)
    assert np.allclose(unit_box.grid_spacing(3), [0.5, 0.5])
    assert np.allclose(grid.min(axis=0), [0.0, 0.0])
    assert np.allclose(grid.max(axis=0), [1.0, 1.0])


def test_contains_with_tolerance(unit_box):
    """Points slightly outside are accepted only within the tolerance."""
    assert contains(unit_box, [0.5, 0.5])
    assert not contains(unit_box, [1.001, 0.5])
    assert contains(unit_box, [1.001, 0.5], tol=0.01)


def test_contains_dimension_mismatch(unit_box):
    with pytest.raises(DimensionMismatchError):
        contains(unit_box, [0.5, 0.5, 0.5])


def test_hull_membership_matches_triangle():
    """Hull membership agrees with the triangle's half-planes."""
    hull = convex_hull(PointCloud([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.2, 0.2]]))
    assert hull.vertices.shape[0] == 3
    assert contains(hull, [0.25, 0.25])
    assert not contains(hull, [0.6, 0.6])
    # facet equations agree with the LP test
    assert np.all(hull.constraint_values([[0.25, 0.25]]) <= 1e-12)
    assert np.any(hull.constraint_values([[0.6, 0.6]]) > 0)


def test_flat_hull_keeps_affine_equations():
    """A segment in the plane is handled as a one-dimensional hull."""
    hull = convex_hull(PointCloud([[0.0, 0.0], [0.5, 0.5], [1.0, 1.0]]))
    assert hull.vertices.shape[0] == 2
    assert np.all(hull.constraint_values([[0.3, 0.3]]) <= 1e-9)
    assert np.any(hull.constraint_values([[0.3, 0.4]]) > 1e-3)


def test_scaled_hull_shrinks_toward_centroid():
    hull = convex_hull(PointCloud(Box([0.0, 0.0], [2.0, 2.0]).corners()))
    half = hull.scaled(0.5)
    assert np.allclose(half.bounding_box().lower, [0.5, 0.5])
    assert np.allclose(half.bounding_box().upper, [1.5, 1.5])
    assert np.all(half.constraint_values([[1.0, 1.0]]) <= 0)
    assert np.any(half.constraint_values([[1.6, 1.0]]) > 0)


def test_distance_point_to_cloud_is_zero_on_members():
    cloud = PointCloud([[0.0, 0.0], [3.0, 4.0]])
    assert distance_point_to_cloud([3.0, 4.0], cloud) == 0.0
    assert distance_point_to_cloud([0.0, 1.0], cloud) == pytest.approx(1.0)


def test_hausdorff_distance_two_segments():
    """Parallel sampled segments one unit apart are at Hausdorff distance one."""
    xs = np.linspace(0.0, 1.0, 11)
    first = PointCloud(np.column_stack([xs, np.zeros_like(xs)]))
    second = PointCloud(np.column_stack([xs, np.ones_like(xs)]))
    assert hausdorff_distance(first, second) == pytest.approx(1.0)
    assert hausdorff_distance(first, first) == 0.0



def test_hausdorff_distance_is_a_metric_on_random_clouds():
    """Symmetric and subadditive over random triples of clouds."""
    rng = np.random.default_rng(5)
    for _ in range(20):
        a, b, c = (PointCloud(rng.normal(size=(rng.integers(1, 15), 3))) for _ in range(3))
        ab = hausdorff_distance(a, b)
        assert ab == pytest.approx(hausdorff_distance(b, a))
        assert hausdorff_distance(a, c) <= ab + hausdorff_distance(b, c) + 1e-12


def _sorted_rows(points):
    return points[np.lexsort(points.T[::-1])]


def test_convex_hull_ignores_point_order():
    rng = np.random.default_rng(9)
    points = rng.uniform(size=(40, 3))
    first = convex_hull(PointCloud(points))
    second = convex_hull(PointCloud(points[rng.permutation(40)]))
    assert np.allclose(_sorted_rows(first.vertices), _sorted_rows(second.vertices))
    queries = rng.uniform(-0.2, 1.2, size=(50, 3))
    inside_first = np.all(first.constraint_values(queries) <= 1e-12, axis=1)
    inside_second = np.all(second.constraint_values(queries) <= 1e-12, axis=1)
    assert np.array_equal(inside_first, inside_second)


def test_max_radius_in_box_is_inradius(unit_box):
    """The returned radius fits and any larger ball would not."""
    center = np.array([0.3, 0.6])
    r = max_radius_in_box(center, unit_box)
    assert r == pytest.approx(0.3)
    assert np.all(center - r >= unit_box.lower) and np.all(center + r <= unit_box.upper)
    assert np.any(center - (r + 1e-9) < unit_box.lower)


def test_max_radius_outside_raises(unit_box):
    with pytest.raises(RegionError):
        max_radius_in_box([1.5, 0.5], unit_box)


def test_sample_region_ball_box_members():
    """Samples of a ball cut by a box lie in both."""
    region = BallBoxRegion(Ball([0.0, 0.0], 1.0), Box([0.0, 0.0], [2.0, 2.0]))
    points = sample_region(region, 100, np.random.default_rng(3))
    assert points.shape == (100, 2)
    assert np.all(np.linalg.norm(points, axis=1) <= 1.0 + 1e-9)
    assert np.all(points >= -1e-9)


def test_sample_region_tilted_flat_hull():
    """A triangle in 3-D that is not aligned with any axis is sampled inside its plane."""
    vertices = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0]])
    region = convex_hull(PointCloud(vertices))
    assert affine_rank(region.vertices) == 2
    assert np.all(region.bounding_box().widths > 0.5)
    points = sample_region(region, 50, np.random.default_rng(2))
    assert points.shape == (50, 3)
    assert np.all(region.constraint_values(points) <= 1e-9)


def test_sample_region_hull_members_satisfy_every_facet():
    region = convex_hull(PointCloud(np.random.default_rng(4).uniform(size=(30, 3))))
    points = sample_region(region, 200, np.random.default_rng(8))
    assert np.all(region.constraint_values(points) <= 0.0)


def test_region_dict_round_trip():
    """Every region kind restores from its dictionary form."""
    hull = convex_hull(PointCloud([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]))
    regions = [
        Box([0.0], [1.0]),
        Ball([1.0, 2.0], 0.5),
        BallBoxRegion(Ball([0.0, 0.0], 1.0), Box([0.0, 0.0], [2.0, 2.0])),
        hull,
    ]
    for region in regions:
        restored = region_from_dict(region.to_dict())
        assert type(restored) is type(region)
        assert restored.to_dict() == region.to_dict()


def test_region_from_dict_unknown_type():
    with pytest.raises(RegionError):
        region_from_dict({"type": "polytope"})


def test_hull_without_equations_refuses_constraints():
    hull = ConvexHullRegion(np.eye(5))
    with pytest.raises(RegionError):
        hull.constraint_values(np.zeros((1, 5)))
