"""Node placement: candidate generation, rejection, farthest point sampling.

The usual pipeline on a normalized template is::

    cands = generate_candidates(template, 5000, offset, seed)
    cands = reject_by_geodesic(cands, template, radius)      # or reject_by_labels
    nodes = fps_until_coverage(cands, template, radius)

:func:`sample_nodes` runs the three steps with the default choices.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from . import mls
from .errors import CoverageError, DataError
from .geometry import NodeSet, PointSet, TriMesh, as_points, diameter

logger = logging.getLogger(__name__)

RADIUS_FRACTION = 0.2
GEODESIC_FRACTION = 0.2
CUBE_HALF_DIAGONAL = math.sqrt(3.0) / 2.0


@dataclass(frozen=True, eq=False)
class CoverageReport:
    """Support count, non-planarity score and covered flag for each point."""

    count: np.ndarray
    score: np.ndarray
    covered: np.ndarray

    @property
    def all_covered(self) -> bool:
        return bool(self.covered.all())

    @property
    def uncovered(self) -> np.ndarray:
        return np.flatnonzero(~self.covered)


def check_coverage(points, nodes: NodeSet,
                   singularity_tol: float = mls.SINGULARITY_TOL) -> CoverageReport:
    fit = mls.local_fit(as_points(points), nodes, singularity_tol, gradients=False)
    return CoverageReport(fit.count, fit.sigma_min, fit.covered)


def generate_candidates(template, count: int, offset: float, seed: int = 0) -> PointSet:
    """Random points on and near the template surface.

    Mesh templates are sampled uniformly by area and each sample is pushed
    along its face normal by a uniform amount in ``[-offset, offset]``.
    Point cloud templates are resampled with isotropic Gaussian noise of
    standard deviation ``offset``.
    """
    if count <= 0:
        raise DataError("count must be positive")
    rng = np.random.default_rng(seed)
    if isinstance(template, TriMesh) and len(template.faces):
        areas = template.face_areas()
        total = areas.sum()
        if not total > 0:
            raise DataError("template has zero surface area")
        face = rng.choice(len(areas), size=count, p=areas / total)
        u, v = rng.random(count), rng.random(count)
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        tri = template.vertices[template.faces[face]]
        pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
        if offset > 0:
            pts = pts + template.face_normals()[face] * rng.uniform(-offset, offset, count)[:, None]
        return PointSet(pts)
    base = as_points(template)
    pick = rng.integers(len(base), size=count)
    return PointSet(base[pick] + rng.normal(scale=offset, size=(count, 3)))


def _kept(pts, keep, why):
    if not keep.any():
        raise DataError(f"all {len(pts)} candidates were rejected ({why})")
    return PointSet(pts[keep])


def _require_mesh(template):
    if not isinstance(template, TriMesh):
        raise DataError("a triangle mesh template is required")


def reject_by_labels(candidates, template: TriMesh, radius: float) -> PointSet:
    """Keep candidates whose ball touches template vertices of at most one label."""
    if template.labels is None:
        raise DataError("template has no labels")
    if not radius > 0:
        raise DataError("radius must be positive")
    pts = as_points(candidates)
    keep = np.ones(len(pts), dtype=bool)
    for k, idx in enumerate(template.tree.query_ball_point(pts, r=radius)):
        if len(idx) > 1 and np.unique(template.labels[idx]).size > 1:
            keep[k] = False
    return _kept(pts, keep, "every ball touches several labels")


def geodesic_neighborhoods(template: TriMesh, limit: float, chunk: int = 256) -> sparse.csr_matrix:
    """Boolean matrix marking vertex pairs within graph distance ``limit``."""
    graph = template.edge_graph
    n = len(template)
    blocks = []
    for start in range(0, n, chunk):
        src = np.arange(start, min(start + chunk, n))
        dist = csgraph.dijkstra(graph, directed=False, indices=src, limit=limit)
        blocks.append(sparse.csr_matrix(dist <= limit))
    return sparse.vstack(blocks, format="csr")


def reject_by_geodesic(candidates, template: TriMesh, radius: float,
                       fraction: float = GEODESIC_FRACTION) -> PointSet:
    """Drop candidates whose ball joins vertices that are geodesically far apart.

    Distances are shortest paths along mesh edges; the threshold is
    ``fraction`` times the Euclidean diameter of the template.  Vertices in
    different connected components count as infinitely far apart.  Since a
    ball on a smooth surface already holds vertices about ``2 * radius``
    apart, the test only keeps candidates when ``2 * radius`` is below the
    threshold.
    """
    _require_mesh(template)
    pts = as_points(candidates)
    if math.isinf(fraction):
        return PointSet(pts)
    limit = fraction * diameter(template)
    near = geodesic_neighborhoods(template, limit)
    keep = np.ones(len(pts), dtype=bool)
    for k, idx in enumerate(template.tree.query_ball_point(pts, r=radius)):
        if len(idx) > 1:
            idx = np.asarray(idx)
            if near[idx][:, idx].nnz < idx.size ** 2:
                keep[k] = False
    return _kept(pts, keep, f"geodesic threshold {limit:.4g} vs ball diameter {2 * radius:.4g}")


def fps_until_coverage(candidates, surface, radius: float,
                       singularity_tol: float = mls.SINGULARITY_TOL,
                       seed: int | None = None) -> NodeSet:
    """Farthest point sampling over candidates until every surface point is covered.

    The first node is the candidate farthest from the candidate centroid, or a
    uniformly drawn candidate when ``seed`` is given.  Ties go to the lowest
    index.  Because adding a node can only grow a moment matrix, coverage is
    monotone and the returned prefix is the shortest covering one.
    """
    C = as_points(candidates)
    S = as_points(surface)
    if not radius > 0:
        raise DataError("radius must be positive")
    n = len(C)
    if seed is None:
        start = int(np.argmax(((C - C.mean(axis=0)) ** 2).sum(-1)))
    else:
        start = int(np.random.default_rng(seed).integers(n))
    surf = PointSet(S)
    count = np.zeros(len(S), dtype=np.int64)
    covered = np.zeros(len(S), dtype=bool)
    mind = np.full(n, np.inf)
    selected = []
    nxt = start
    while True:
        selected.append(nxt)
        c = C[nxt]
        mind = np.minimum(mind, ((C - c) ** 2).sum(-1))
        hit = np.asarray(surf.tree.query_ball_point(c, r=radius), dtype=np.int64)
        if hit.size:
            hit = hit[((S[hit] - c) ** 2).sum(-1) < radius ** 2]
            count[hit] += 1
            recheck = hit[~covered[hit] & (count[hit] >= 4)]
            if recheck.size:
                nodes = NodeSet(C[selected], radius)
                covered[recheck] = mls.local_fit(S[recheck], nodes, singularity_tol,
                                                 gradients=False).covered
        if covered.all():
            return NodeSet(C[selected], radius)
        nxt = int(np.argmax(mind))
        if mind[nxt] <= 1e-18:
            break
    bad = np.flatnonzero(~covered)
    raise CoverageError(
        f"candidates exhausted after {len(selected)} nodes; {bad.size} surface points "
        f"remain uncovered at radius {radius:g}", bad)


def add_auxiliary_cube_nodes(nodes: NodeSet, aux_radius: float) -> NodeSet:
    """Append 8 nodes at the corners of ``[-0.5, 0.5]^3`` with a large radius.

    ``aux_radius`` must exceed the cube half-diagonal sqrt(3)/2 (strictly:
    at exactly that radius the cube center gets zero weight).
    """
    if not aux_radius > CUBE_HALF_DIAGONAL:
        raise DataError(
            f"aux_radius {aux_radius:g} must exceed the cube half-diagonal "
            f"{CUBE_HALF_DIAGONAL:.6f}")
    corners = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5)
                        for z in (-0.5, 0.5)])
    labels = None
    if nodes.labels is not None:
        labels = np.concatenate([nodes.labels, np.full(8, -1)])
    return NodeSet(np.vstack([nodes.positions, corners]),
                   np.concatenate([nodes.radii, np.full(8, float(aux_radius))]), labels)


def sample_nodes(template, radius_fraction: float = RADIUS_FRACTION,
                 n_candidates: int = 5000, offset: float | None = None,
                 rejection: str = "none", geodesic_fraction: float = GEODESIC_FRACTION,
                 singularity_tol: float = mls.SINGULARITY_TOL, seed: int = 0) -> NodeSet:
    """Full node sampling pipeline on a (normalized) template.

    ``offset`` defaults to 2% of the template diameter.
    """
    diam = diameter(template)
    radius = radius_fraction * diam
    if offset is None:
        offset = 0.02 * diam
    cands = generate_candidates(template, n_candidates, offset, seed)
    if rejection == "labels":
        cands = reject_by_labels(cands, template, radius)
    elif rejection == "geodesic":
        cands = reject_by_geodesic(cands, template, radius, geodesic_fraction)
    elif rejection != "none":
        raise DataError(f"unknown rejection mode {rejection!r}")
    logger.info("%d candidates after %s rejection", len(cands), rejection)
    return fps_until_coverage(cands, template, radius, singularity_tol)
