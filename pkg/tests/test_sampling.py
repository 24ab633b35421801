import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_array_equal

from mlsfield import io, sampling, shapes
from mlsfield.errors import CoverageError, DataError
from mlsfield.geometry import NodeSet, PointSet, TriMesh, diameter

from oracles import point_mesh_distance


def test_candidates_deterministic():
    tet = shapes.tetrahedron()
    a = sampling.generate_candidates(tet, 100, 0.01, seed=7)
    b = sampling.generate_candidates(tet, 100, 0.01, seed=7)
    assert len(a) == 100
    assert_array_equal(a.points, b.points)
    c = sampling.generate_candidates(tet, 100, 0.01, seed=8)
    assert not np.array_equal(a.points, c.points)


def test_zero_offset_candidates_on_faces():
    tet = shapes.tetrahedron()
    cands = sampling.generate_candidates(tet, 200, 0.0, seed=1)
    for p in cands.points:
        assert point_mesh_distance(p, tet.vertices, tet.faces) < 1e-9


def test_candidates_within_offset():
    mesh, _ = io.normalize_unit_sphere(shapes.ellipsoid(10, 12))
    offset = 0.02
    cands = sampling.generate_candidates(mesh, 400, offset, seed=3)
    assert len(cands) == 400
    d = [point_mesh_distance(p, mesh.vertices, mesh.faces) for p in cands.points]
    assert max(d) <= offset + 1e-12
    assert max(d) > 0.5 * offset


def test_point_cloud_candidates_use_noise():
    pts = PointSet(np.random.default_rng(0).normal(size=(50, 3)))
    cands = sampling.generate_candidates(pts, 300, 0.05, seed=2)
    assert len(cands) == 300
    d = np.min(np.linalg.norm(cands.points[:, None] - pts.points[None], axis=2), axis=1)
    assert 0 < np.median(d) < 0.2


def test_zero_area_mesh_rejected():
    flat = TriMesh([[0.0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(DataError, match="zero surface area"):
        sampling.generate_candidates(flat, 10, 0.0)


def labeled_pair():
    v = np.array([[-1.0, 0, 0], [1.0, 0, 0], [0, 0, 0], [10, 0, 0], [10.5, 0, 0], [11, 0, 0]])
    return TriMesh(v, [[0, 1, 2], [3, 4, 5]], labels=[1, 2, 1, 3, 3, 3])


def test_label_rejection():
    mesh = labeled_pair()
    cands = PointSet([[0.0, 0.5, 0.0], [10.5, 0.2, 0.0], [0.0, 0.0, 5.0]])
    kept = sampling.reject_by_labels(cands, mesh, radius=1.2)
    assert_array_equal(kept.points, cands.points[[1, 2]])


def test_label_rejection_vacuous_and_missing():
    mesh = shapes.grid(5)
    same = TriMesh(mesh.vertices, mesh.faces, np.zeros(len(mesh), int))
    cands = sampling.generate_candidates(same, 50, 0.05, seed=0)
    assert_array_equal(sampling.reject_by_labels(cands, same, 0.3).points, cands.points)
    with pytest.raises(DataError, match="labels"):
        sampling.reject_by_labels(cands, mesh, 0.3)


def test_geodesic_rejection_hairpin():
    hp = shapes.hairpin(gap=0.1)
    radius = 0.08
    # first candidate sits between the two arm ends, the second above one arm
    cands = PointSet([[0.02, 0.0, 0.0], [0.5, 0.0, 0.06]])
    kept = sampling.reject_by_geodesic(cands, hp, radius)
    assert_array_equal(kept.points, cands.points[1:])
    with pytest.raises(DataError, match="all 1 candidates were rejected"):
        sampling.reject_by_geodesic(PointSet(cands.points[:1]), hp, radius)


def test_geodesic_rejection_flat_plate_and_infinite_fraction():
    plate = shapes.grid(12)
    cands = sampling.generate_candidates(plate, 100, 0.02, seed=4)
    radius = 0.07 * diameter(plate)     # ball diameter well below 0.2 * diameter
    assert_array_equal(sampling.reject_by_geodesic(cands, plate, radius).points, cands.points)
    hp = shapes.hairpin()
    cands = sampling.generate_candidates(hp, 100, 0.02, seed=4)
    assert_array_equal(sampling.reject_by_geodesic(cands, hp, 0.3, np.inf).points, cands.points)


def test_geodesic_rejection_disconnected():
    two = labeled_pair()
    joined = TriMesh(np.vstack([two.vertices[:3], two.vertices[3:] - [9.5, 0, 0]]), two.faces)
    # the first ball reaches both components, the second only one vertex
    cands = PointSet([[0.75, 0.0, 0.0], [-1.0, 0.0, 0.1]])
    kept = sampling.reject_by_geodesic(cands, joined, 0.6, fraction=100.0)
    assert_array_equal(kept.points, cands.points[1:])


def test_rejection_returns_ordered_subset():
    hp = shapes.hairpin()
    cands = sampling.generate_candidates(hp, 300, 0.02, seed=5)
    kept = sampling.reject_by_geodesic(cands, hp, 0.08)
    assert 0 < len(kept) < len(cands)
    pos = [int(np.flatnonzero((cands.points == p).all(1))[0]) for p in kept.points]
    assert pos == sorted(pos)


def test_fps_minimal_coverage():
    corners = np.array([[0.3, 0, -0.2], [-0.3, 0, -0.2], [0, 0.3, 0.2], [0, -0.3, 0.2]])
    nodes = sampling.fps_until_coverage(PointSet(corners), PointSet([[0.0, 0, 0]]), radius=1.0)
    assert nodes.K == 4
    assert np.all(nodes.radii == 1.0)


def test_fps_coplanar_candidates_fail():
    rng = np.random.default_rng(0)
    cands = np.c_[rng.uniform(-1, 1, (50, 2)), np.zeros(50)]
    with pytest.raises(CoverageError) as exc:
        sampling.fps_until_coverage(PointSet(cands), PointSet([[0.0, 0, 0.0], [0.1, 0, 0]]), 1.5)
    assert exc.value.uncovered == [0, 1]


def test_fps_order_and_postcondition():
    mesh, _ = io.normalize_unit_sphere(shapes.ellipsoid(12, 14))
    cands = sampling.generate_candidates(mesh, 1500, 0.02, seed=0)
    radius = 0.3
    nodes = sampling.fps_until_coverage(cands, mesh, radius)
    C = cands.points
    start = np.argmax(((C - C.mean(0)) ** 2).sum(1))
    assert_array_equal(nodes.positions[0], C[start])
    # brute force FPS reproduces the order
    chosen = [start]
    for _ in range(nodes.K - 1):
        d = np.min(((C[:, None] - C[chosen][None]) ** 2).sum(-1), axis=1)
        chosen.append(int(np.argmax(d)))
    assert_array_equal(nodes.positions, C[chosen])
    assert sampling.check_coverage(mesh, nodes).all_covered
    shorter = NodeSet(nodes.positions[:-1], radius)
    assert not sampling.check_coverage(mesh, shorter).all_covered


def test_fps_seeded_start_deterministic():
    mesh = shapes.ellipsoid(10, 12)
    cands = sampling.generate_candidates(mesh, 800, 0.02, seed=0)
    a = sampling.fps_until_coverage(cands, mesh, 0.6, seed=3)
    b = sampling.fps_until_coverage(cands, mesh, 0.6, seed=3)
    assert_array_equal(a.positions, b.positions)


def test_check_coverage_examples():
    tet = np.array([[1.0, 0, -0.3], [-1.0, 0, -0.3], [0, 1.0, 0.3], [0, -1.0, 0.3]])
    rep = sampling.check_coverage([[0.0, 0, 0], [50.0, 0, 0]], NodeSet(tet, 2.0))
    assert_array_equal(rep.count, [4, 0])
    assert_array_equal(rep.covered, [True, False])
    line = NodeSet(np.c_[np.linspace(-1, 1, 5), np.zeros(5), np.zeros(5)], 3.0)
    rep = sampling.check_coverage([[0.0, 0.1, 0.0]], line)
    assert rep.count[0] == 5 and not rep.covered[0]
    # rank of the hand-built moment matrix is at most 2
    P = np.c_[np.ones(5), line.positions]
    assert np.linalg.matrix_rank(P.T @ P) == 2
    assert rep.score[0] < 1e-8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adding_node_never_reduces_counts(seed):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-1, 1, (30, 3))
    X = rng.uniform(-1, 1, (40, 3))
    base = sampling.check_coverage(X, NodeSet(q, 0.7))
    more = sampling.check_coverage(X, NodeSet(np.vstack([q, rng.uniform(-1, 1, (1, 3))]), 0.7))
    assert np.all(more.count >= base.count)
    assert np.all(more.covered >= base.covered)


def test_auxiliary_nodes():
    rng = np.random.default_rng(0)
    nodes = NodeSet(rng.uniform(-0.4, 0.4, (300, 3)) * [1, 1, 0.05] + [0, 0, 0.3], 0.1)
    center = [[0.0, 0.0, 0.0]]
    assert not sampling.check_coverage(center, nodes).all_covered
    aug = sampling.add_auxiliary_cube_nodes(nodes, 0.9)
    assert aug.K == 308
    assert sampling.check_coverage(center, aug).all_covered
    with pytest.raises(DataError, match="half-diagonal"):
        sampling.add_auxiliary_cube_nodes(nodes, np.sqrt(3) / 2 - 1e-9)


def test_sample_nodes_pipeline():
    mesh, _ = io.normalize_unit_sphere(shapes.ellipsoid())
    a = sampling.sample_nodes(mesh, seed=0)
    b = sampling.sample_nodes(mesh, seed=0)
    assert_array_equal(a.positions, b.positions)
    assert np.allclose(a.radii, 0.2 * diameter(mesh))
    assert sampling.check_coverage(mesh, a).all_covered
    g = sampling.sample_nodes(mesh, radius_fraction=0.08, rejection="geodesic", seed=0)
    assert sampling.check_coverage(mesh, g).all_covered
    with pytest.raises(DataError, match="rejected"):
        sampling.sample_nodes(mesh, rejection="geodesic", seed=0)
    with pytest.raises(DataError):
        sampling.sample_nodes(mesh, rejection="bogus")
