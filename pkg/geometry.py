# geometry.py
#
# Constraint and target sets, plus point/set distances. States are 1-D
# arrays of length n; collections of points are 2-D arrays with one point
# per row.

from dataclasses import dataclass, field
from typing import Union

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError, cKDTree

from config import MEMBERSHIP_TOL

# Hulls are reduced to their vertices up to this dimension; above it the
# point cloud itself stands in for the vertex set.
MAX_HULL_DIM = 4
_RANK_TOL = 1e-10


class ImpulsiveControlError(Exception):
    """Base class for every error raised by this package."""


class DimensionMismatchError(ImpulsiveControlError, ValueError):
    pass


class RegionError(ImpulsiveControlError, ValueError):
    """A region was asked for something it cannot provide."""


def _as_points(points: np.ndarray, dim: int) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != dim:
        raise DimensionMismatchError(
            f"expected points of dimension {dim}, got shape {pts.shape}"
        )
    return pts


def _check_dim(x: np.ndarray, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dim:
        raise DimensionMismatchError(f"expected dimension {dim}, got {x.shape}")
    return x


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("Box lower and upper must be vectors of equal length")
        if np.any(lower > upper):
            raise ValueError(f"Box is empty: lower {lower} exceeds upper {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.widths))

    def constraint_values(self, points: np.ndarray) -> np.ndarray:
        """Per point, values that are all <= 0 exactly inside the box."""
        pts = _as_points(points, self.dim)
        return np.hstack([self.lower - pts, pts - self.upper])

    def contains_box(self, other: "Box", tol: float = MEMBERSHIP_TOL) -> bool:
        return bool(
            np.all(other.lower >= self.lower - tol)
            and np.all(other.upper <= self.upper + tol)
        )

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*zip(self.lower, self.upper), indexing="ij")
        return np.unique(np.stack([g.ravel() for g in grids], axis=1), axis=0)

    def grid(self, points_per_dim: int) -> np.ndarray:
        """
        Regular mesh with points_per_dim nodes per axis, boundaries included.
        Degenerate axes (lower == upper) contribute a single node.
        """
        if points_per_dim < 1:
            raise ValueError("points_per_dim must be positive")
        axes = [
            np.array([lo]) if lo == hi else np.linspace(lo, hi, points_per_dim)
            for lo, hi in zip(self.lower, self.upper)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def grid_spacing(self, points_per_dim: int) -> np.ndarray:
        if points_per_dim < 2:
            return self.widths.copy()
        return self.widths / (points_per_dim - 1)

    def to_dict(self) -> dict:
        return {"type": "box", "lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(
            self, "center", np.atleast_1d(np.asarray(self.center, dtype=float))
        )
        if self.radius < 0:
            raise ValueError(f"Ball radius must be nonnegative, got {self.radius}")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def constraint_values(self, points: np.ndarray) -> np.ndarray:
        pts = _as_points(points, self.dim)
        return (np.linalg.norm(pts - self.center, axis=1) - self.radius)[:, None]

    def to_dict(self) -> dict:
        return {"type": "ball", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class BallBoxRegion:
    """The intersection B(center, radius) ∩ box."""

    ball: Ball
    box: Box

    def __post_init__(self):
        if self.ball.dim != self.box.dim:
            raise DimensionMismatchError("ball and box dimensions differ")

    @property
    def dim(self) -> int:
        return self.box.dim

    def constraint_values(self, points: np.ndarray) -> np.ndarray:
        return np.hstack(
            [self.ball.constraint_values(points), self.box.constraint_values(points)]
        )

    def bounding_box(self) -> Box:
        lower = np.maximum(self.box.lower, self.ball.center - self.ball.radius)
        upper = np.minimum(self.box.upper, self.ball.center + self.ball.radius)
        if np.any(lower > upper):
            raise RegionError("ball does not meet the box")
        return Box(lower, upper)

    def to_dict(self) -> dict:
        return {"type": "ball_box", "ball": self.ball.to_dict(), "box": self.box.to_dict()}


@dataclass(frozen=True)
class ConvexHullRegion:
    """
    Convex hull in V-representation. `equations` holds one row [a, b] per
    facet with unit normal a, so a·x + b is the signed distance to that
    facet plane and is <= 0 on the inside. Lower-dimensional hulls also carry
    the two-sided equations of their affine hull.
    """

    vertices: np.ndarray
    equations: np.ndarray | None = None

    def __post_init__(self):
        verts = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if verts.size == 0:
            raise ValueError("ConvexHullRegion needs at least one vertex")
        object.__setattr__(self, "vertices", verts)
        if self.equations is not None:
            object.__setattr__(
                self, "equations", np.atleast_2d(np.asarray(self.equations, dtype=float))
            )

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def constraint_values(self, points: np.ndarray) -> np.ndarray:
        if self.equations is None:
            raise RegionError("hull has no facet equations (dimension above 4)")
        pts = _as_points(points, self.dim)
        return pts @ self.equations[:, :-1].T + self.equations[:, -1]

    def bounding_box(self) -> Box:
        return Box(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def scaled(self, factor: float, about: np.ndarray | None = None) -> "ConvexHullRegion":
        """Homothety of the hull with the given factor about a point."""
        about = self.centroid if about is None else np.asarray(about, dtype=float)
        verts = about + factor * (self.vertices - about)
        equations = None
        if self.equations is not None:
            normals = self.equations[:, :-1]
            offsets = self.equations[:, -1]
            # a·y + f*b - (1 - f)*a·c <= 0 on the scaled hull
            offsets = factor * offsets - (1.0 - factor) * (normals @ about)
            equations = np.hstack([normals, offsets[:, None]])
        return ConvexHullRegion(verts, equations)

    def to_dict(self) -> dict:
        return {
            "type": "hull",
            "vertices": self.vertices.tolist(),
            "equations": None if self.equations is None else self.equations.tolist(),
        }


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    _tree: list = field(default_factory=list, init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] == 0 or pts.size == 0:
            raise RegionError("point cloud is empty")
        object.__setattr__(self, "points", pts)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def tree(self) -> cKDTree:
        if not self._tree:
            self._tree.append(cKDTree(self.points))
        return self._tree[0]

    def nearest(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distances and indices of the nearest cloud point for each query row."""
        pts = _as_points(x, self.dim)
        dist, idx = self.tree.query(pts)
        return np.atleast_1d(dist), np.atleast_1d(idx)


Region = Union[Box, Ball, BallBoxRegion, ConvexHullRegion]


def region_from_dict(payload: dict) -> Region:
    kind = payload.get("type")
    if kind == "box":
        return Box(payload["lower"], payload["upper"])
    if kind == "ball":
        return Ball(payload["center"], payload["radius"])
    if kind == "ball_box":
        return BallBoxRegion(
            region_from_dict(payload["ball"]), region_from_dict(payload["box"])
        )
    if kind == "hull":
        return ConvexHullRegion(payload["vertices"], payload.get("equations"))
    raise RegionError(f"unknown region type {kind!r}")


def _hull_membership_gap(vertices: np.ndarray, x: np.ndarray) -> float:
    """
    Smallest Chebyshev distance between x and a convex combination of the
    vertices, from the LP  min t  s.t. |V^T w - x| <= t, sum(w) = 1, w >= 0.
    """
    p, n = vertices.shape
    c = np.zeros(p + 1)
    c[-1] = 1.0
    ones = np.ones((n, 1))
    a_ub = np.vstack([np.hstack([vertices.T, -ones]), np.hstack([-vertices.T, -ones])])
    b_ub = np.concatenate([x, -x])
    a_eq = np.hstack([np.ones((1, p)), np.zeros((1, 1))])
    res = linprog(
        c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=[1.0],
        bounds=[(0, None)] * (p + 1), method="highs",
    )
    if not res.success:
        return float("inf")
    return float(res.x[-1])


def contains(region: Region, x: np.ndarray, tol: float = 0.0) -> bool:
    """True iff x lies in the region inflated by tol."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    x = _check_dim(x, region.dim).reshape(-1)
    if isinstance(region, Box):
        return bool(np.all(x >= region.lower - tol) and np.all(x <= region.upper + tol))
    if isinstance(region, Ball):
        return bool(np.linalg.norm(x - region.center) <= region.radius + tol)
    if isinstance(region, BallBoxRegion):
        return contains(region.ball, x, tol) and contains(region.box, x, tol)
    if isinstance(region, ConvexHullRegion):
        return _hull_membership_gap(region.vertices, x) <= tol + 1e-12
    raise RegionError(f"unsupported region {type(region).__name__}")


def distance_point_to_cloud(x: np.ndarray, cloud: PointCloud) -> float:
    """Euclidean inf-distance from x to the finite set."""
    x = _check_dim(x, cloud.dim).reshape(-1)
    dist, _ = cloud.nearest(x)
    return float(dist[0])


def directed_distance(source: PointCloud, target: PointCloud) -> float:
    """sup over source points of the inf-distance to target."""
    dist, _ = target.nearest(source.points)
    return float(dist.max())


def hausdorff_distance(first: PointCloud, second: PointCloud) -> float:
    if first.dim != second.dim:
        raise DimensionMismatchError("clouds have different dimensions")
    return max(directed_distance(first, second), directed_distance(second, first))


def max_radius_in_box(center: np.ndarray, box: Box) -> float:
    """Largest r with the Euclidean ball B(center, r) inside the box."""
    center = _check_dim(center, box.dim).reshape(-1)
    if not contains(box, center):
        raise RegionError(f"center {center} lies outside the box")
    slack = np.minimum(center - box.lower, box.upper - center)
    return float(slack.min())


def convex_hull(cloud: PointCloud) -> ConvexHullRegion:
    """
    Vertex set of the convex hull. Degenerate clouds are handled in their
    affine hull; clouds of dimension above 4 keep every point.
    """
    pts = np.unique(cloud.points, axis=0)
    dim = pts.shape[1]
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    if pts.shape[0] == 1:
        rank = 0
        basis = np.zeros((dim, 0))
        complement = np.eye(dim)
    else:
        _, sv, vt = np.linalg.svd(centered, full_matrices=True)
        rank = int(np.sum(sv > _RANK_TOL * max(sv[0], 1.0)))
        basis = vt[:rank].T
        complement = vt[rank:].T

    if rank > MAX_HULL_DIM:
        return ConvexHullRegion(pts, None)

    coords = centered @ basis
    if rank == 0:
        vertices = pts[:1]
        sub_equations = np.zeros((0, 1))
    elif rank == 1:
        lo, hi = int(np.argmin(coords[:, 0])), int(np.argmax(coords[:, 0]))
        vertices = pts[[lo, hi]]
        sub_equations = np.array([[-1.0, coords[lo, 0]], [1.0, -coords[hi, 0]]])
    else:
        try:
            hull = ConvexHull(coords)
        except QhullError as exc:
            raise RegionError(f"qhull failed: {exc}") from exc
        vertices = pts[np.sort(hull.vertices)]
        sub_equations = hull.equations

    # Lift facet equations a'·y + b <= 0 with y = basis^T (x - c) back to x.
    normals = sub_equations[:, :-1] @ basis.T if rank > 0 else np.zeros((0, dim))
    offsets = sub_equations[:, -1] - normals @ centroid
    rows = [np.hstack([normals, offsets[:, None]])]
    for col in complement.T:
        offset = -col @ centroid
        rows.append(np.array([np.append(col, offset), np.append(-col, -offset)]))
    equations = np.vstack(rows)
    return ConvexHullRegion(vertices, equations)


def affine_rank(points: np.ndarray) -> int:
    """Dimension of the affine hull of the rows of points."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] < 2:
        return 0
    sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    return int(np.sum(sv > _RANK_TOL * max(sv[0], 1.0)))


def bounding_box(region: Region) -> Box:
    if isinstance(region, Box):
        return region
    if isinstance(region, Ball):
        return Box(region.center - region.radius, region.center + region.radius)
    return region.bounding_box()


def sample_region(
    region: Region,
    count: int,
    rng: np.random.Generator,
    max_batches: int = 1000,
) -> np.ndarray:
    """
    Uniform samples from the region by rejection in its bounding box; only
    points satisfying every constraint are kept. Hulls without full affine
    rank, or without facet equations, are sampled as random convex
    combinations of their vertices.
    """
    box = bounding_box(region)
    if isinstance(region, Box):
        return rng.uniform(box.lower, box.upper, size=(count, box.dim))
    if isinstance(region, ConvexHullRegion) and (
        region.equations is None or affine_rank(region.vertices) < region.dim
    ):
        weights = rng.dirichlet(np.ones(region.vertices.shape[0]), size=count)
        return weights @ region.vertices

    accepted: list[np.ndarray] = []
    total = 0
    batch = max(4 * count, 256)
    for _ in range(max_batches):
        candidates = rng.uniform(box.lower, box.upper, size=(batch, box.dim))
        inside = np.all(region.constraint_values(candidates) <= 0.0, axis=1)
        accepted.append(candidates[inside])
        total += int(inside.sum())
        if total >= count:
            break
    if total < count:
        raise RegionError("rejection sampling could not fill the request; region too thin")
    return np.vstack(accepted)[:count]
