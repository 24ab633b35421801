"""Core geometric value types and mesh utilities."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.spatial import ConvexHull, QhullError, cKDTree

from .errors import DataError


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def _labels(labels, n, what):
    if labels is None:
        return None
    labels = _frozen(labels, np.int64).reshape(-1)
    if labels.shape[0] != n:
        raise DataError(f"{what}: expected {n} labels, got {labels.shape[0]}")
    return labels


@dataclass(frozen=True, eq=False)
class PointSet:
    """An ordered set of 3D points with optional integer labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        pts = _frozen(self.points, np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DataError(f"points must be (n, 3), got shape {pts.shape}")
        if pts.shape[0] == 0:
            raise DataError("empty geometry")
        if not np.all(np.isfinite(pts)):
            raise DataError("non-finite coordinates")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", _labels(self.labels, pts.shape[0], "PointSet"))

    def __len__(self):
        return self.points.shape[0]

    @property
    def vertices(self):
        return self.points

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points)


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Triangle mesh: (n, 3) vertices, (f, 3) faces, optional per-vertex labels."""

    vertices: np.ndarray
    faces: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        v = _frozen(self.vertices, np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise DataError(f"vertices must be (n, 3), got shape {v.shape}")
        if v.shape[0] == 0:
            raise DataError("empty geometry")
        if not np.all(np.isfinite(v)):
            raise DataError("non-finite coordinates")
        f = _frozen(np.asarray(self.faces).reshape(-1, 3), np.int64)
        if f.size and (f.min() < 0 or f.max() >= v.shape[0]):
            raise DataError("face index out of range")
        if f.size and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise DataError("degenerate face (repeated vertex index)")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        object.__setattr__(self, "labels", _labels(self.labels, v.shape[0], "TriMesh"))

    def __len__(self):
        return self.vertices.shape[0]

    @property
    def points(self):
        return self.vertices

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.vertices)

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def area(self) -> float:
        return float(self.face_areas().sum())

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        norm = np.linalg.norm(n, axis=1, keepdims=True)
        return np.divide(n, norm, out=np.zeros_like(n), where=norm > 0)

    def edges(self) -> np.ndarray:
        """Unique undirected edges as an (e, 2) array with ``i < j``, sorted."""
        f = self.faces
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def edge_graph(self) -> sparse.csr_matrix:
        """Symmetric sparse matrix of Euclidean edge lengths."""
        e = self.edges()
        n = len(self)
        w = np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)
        g = sparse.coo_matrix(
            (np.concatenate([w, w]), (np.concatenate([e[:, 0], e[:, 1]]),
                                      np.concatenate([e[:, 1], e[:, 0]]))),
            shape=(n, n),
        )
        return g.tocsr()


@dataclass(frozen=True, eq=False)
class NodeSet:
    """Fixed deformation nodes with compact support radii.

    Attributes
    ----------
    positions : (K, 3) array
    radii : (K,) array of positive support radii
    labels : optional (K,) integer array
    """

    positions: np.ndarray
    radii: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        q = _frozen(self.positions, np.float64)
        if q.ndim != 2 or q.shape[1] != 3:
            raise DataError(f"node positions must be (K, 3), got shape {q.shape}")
        r = np.asarray(self.radii, dtype=np.float64)
        if r.ndim == 0:
            r = np.full(q.shape[0], float(r))
        r = _frozen(r, np.float64).reshape(-1)
        if r.shape[0] != q.shape[0]:
            raise DataError("one radius per node required")
        if q.shape[0] < 4:
            raise DataError(f"at least 4 nodes required, got {q.shape[0]}")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(r))):
            raise DataError("non-finite node data")
        if np.any(r <= 0):
            raise DataError("node radii must be positive")
        pairs = cKDTree(q).query_pairs(1e-9)
        if pairs:
            i, j = min(pairs)
            raise DataError(f"nodes {i} and {j} coincide")
        object.__setattr__(self, "positions", q)
        object.__setattr__(self, "radii", r)
        object.__setattr__(self, "labels", _labels(self.labels, q.shape[0], "NodeSet"))

    def __len__(self):
        return self.positions.shape[0]

    @property
    def K(self) -> int:
        return self.positions.shape[0]

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.positions)

    @cached_property
    def max_radius(self) -> float:
        return float(self.radii.max())


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Index map ``source[k] -> target[k]`` with optional per-point errors."""

    target: np.ndarray
    errors: np.ndarray | None = None

    def __post_init__(self):
        t = _frozen(np.asarray(self.target).reshape(-1), np.int64)
        if t.size and t.min() < 0:
            raise DataError("negative target index")
        object.__setattr__(self, "target", t)
        if self.errors is not None:
            e = _frozen(self.errors, np.float64).reshape(-1)
            if e.shape[0] != t.shape[0]:
                raise DataError("one error value per source point required")
            object.__setattr__(self, "errors", e)

    def __len__(self):
        return self.target.shape[0]

    @property
    def source(self) -> np.ndarray:
        return np.arange(len(self))

    def validate(self, n_target: int) -> None:
        if self.target.size and self.target.max() >= n_target:
            raise DataError(
                f"target index {self.target.max()} out of range for {n_target} points"
            )


def as_points(shape) -> np.ndarray:
    """Coordinates of a TriMesh, PointSet, NodeSet or raw array as (n, 3)."""
    if isinstance(shape, (TriMesh, PointSet)):
        return shape.points
    if isinstance(shape, NodeSet):
        return shape.positions
    pts = np.asarray(shape, dtype=np.float64)
    return pts.reshape(-1, 3)


def diameter(points) -> float:
    """Largest Euclidean distance between two points of the set."""
    pts = as_points(points)
    if len(pts) > 64:
        try:
            pts = pts[ConvexHull(pts).vertices]
        except QhullError:
            pass
    best = 0.0
    for start in range(0, len(pts), 512):
        block = pts[start:start + 512]
        d2 = ((block[:, None, :] - pts[None, :, :]) ** 2).sum(-1)
        best = max(best, float(d2.max()))
    return float(np.sqrt(best))
