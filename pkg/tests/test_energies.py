import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from mlsfield import energies, mls, rbf, shapes
from mlsfield.energies import EnergyWeights
from mlsfield.errors import DataError
from mlsfield.geometry import NodeSet

from conftest import covered_points, random_nodes
from oracles import brute_chamfer, central_diff


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(42)
    nodes = random_nodes(rng, 120)
    node_table = mls.precompute_node_table(nodes)
    X = covered_points(rng, nodes, 60)
    table = mls.precompute_table(X, nodes)
    return nodes, node_table, table, X


def fd_check(loss, U, h=1e-6):
    e = loss(U)
    F = central_diff(lambda V: np.array([loss(V.reshape(U.shape)).total]), U.ravel(), h)[0]
    return np.linalg.norm(e.gradient.ravel() - F) / np.linalg.norm(F)


def rigid(nodes, seed):
    rng = np.random.default_rng(seed)
    R = shapes.random_rotation(rng)
    t = rng.normal(size=3)
    return nodes.positions @ (R - np.eye(3)).T + t, R, t


# correspondence

def test_corr_examples(setup):
    nodes, _, table, X = setup
    U0 = np.zeros((nodes.K, 3))
    assert energies.corr_loss(table, U0, X).total == 0
    one = table.subset([3])
    assert energies.corr_loss(one, U0, X[3:4] + [1, 0, 0]).total == 1.0
    with pytest.raises(DataError, match="targets"):
        energies.corr_loss(table, U0, X[:5])


def test_corr_gradient(setup):
    nodes, _, table, X = setup
    rng = np.random.default_rng(0)
    T = X + 0.05 * rng.normal(size=X.shape)
    for _ in range(5):
        U = rng.uniform(-0.1, 0.1, (nodes.K, 3))
        assert fd_check(lambda V: energies.corr_loss(table, V, T), U) <= 1e-6


# chamfer

def test_chamfer_examples():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(50, 3))
    assert energies.chamfer(A, A) == 0
    assert energies.chamfer([[0.0, 0, 0]], [[1.0, 0, 0]]) == 2.0
    for _ in range(10):
        A, B = rng.normal(size=(50, 3)), rng.normal(size=(40, 3))
        assert_allclose(energies.chamfer(A, B), brute_chamfer(A, B), rtol=1e-12)
    with pytest.raises(DataError):
        energies.chamfer(np.zeros((0, 3)), A)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.integers(1, 30))
def test_chamfer_symmetric(seed, n, m):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(n, 3)), rng.normal(size=(m, 3))
    assert energies.chamfer(A, B) == energies.chamfer(B, A)


def test_chamfer_loss_value_and_gradient(setup):
    nodes, _, table, X = setup
    rng = np.random.default_rng(2)
    target = X[::2] @ shapes.axis_angle_rotation([0, 0, 1], 0.2).T + 0.05
    for _ in range(5):
        U = rng.uniform(-0.1, 0.1, (nodes.K, 3))
        e = energies.chamfer_loss(table, U, target)
        assert_allclose(e.total, brute_chamfer(table.mapping(U), target), rtol=1e-12)
        assert fd_check(lambda V: energies.chamfer_loss(table, V, target), U) <= 1e-5


# volume and ARAP

def test_vol_arap_zero_and_rigid(setup):
    nodes, node_table, _, _ = setup
    U0 = np.zeros((nodes.K, 3))
    assert energies.vol_loss(node_table, U0).total == 0
    assert energies.arap_loss(node_table, U0).total == 0
    for seed in range(5):
        U, _, _ = rigid(nodes, seed)
        assert energies.vol_loss(node_table, U).total <= 1e-10
        assert energies.arap_loss(node_table, U).total <= 1e-10


def test_uniform_scaling(setup):
    nodes, node_table, _, _ = setup
    s = 1.1
    U = (s - 1) * nodes.positions
    n = len(node_table)
    assert_allclose(energies.vol_loss(node_table, U).total, n * (s ** 3 - 1) ** 2, rtol=1e-9)
    assert_allclose(energies.vol_loss(node_table, U).total, n * 0.331 ** 2, rtol=1e-9)
    assert_allclose(energies.arap_loss(node_table, U).total, n * 3 * (s ** 2 - 1) ** 2, rtol=1e-9)


@pytest.mark.parametrize("loss", [energies.vol_loss, energies.arap_loss])
def test_regularizer_gradients(setup, loss):
    nodes, node_table, _, _ = setup
    rng = np.random.default_rng(3)
    for _ in range(5):
        U = rng.uniform(-0.1, 0.1, (nodes.K, 3))
        assert fd_check(lambda V: loss(node_table, V), U) <= 1e-6


def test_cofactor_matches_det_derivative():
    rng = np.random.default_rng(4)
    J = rng.normal(size=(10, 3, 3))
    cof = energies.cofactor(J)
    assert_allclose(cof, np.linalg.det(J)[:, None, None] * np.linalg.inv(J).transpose(0, 2, 1), atol=1e-10)
    singular = np.array([[1.0, 2, 3], [2, 4, 6], [0, 1, 1]])
    F = central_diff(lambda v: np.array([np.linalg.det(v.reshape(3, 3))]), singular.ravel())
    assert_allclose(energies.cofactor(singular[None])[0].ravel(), F[0], atol=1e-8)


def test_losses_invariant_under_node_reordering(setup):
    nodes, _, _, X = setup
    rng = np.random.default_rng(5)
    U = rng.uniform(-0.1, 0.1, (nodes.K, 3))
    perm = rng.permutation(nodes.K)
    shuffled = NodeSet(nodes.positions[perm], nodes.radii[perm])
    a, b = mls.precompute_node_table(nodes), mls.precompute_node_table(shuffled)
    for loss in (energies.vol_loss, energies.arap_loss):
        ea, eb = loss(a, U), loss(b, U[perm])
        assert_allclose(eb.total, ea.total, rtol=1e-10)
        assert_allclose(eb.gradient, ea.gradient[perm], atol=1e-10)
    ta, tb = mls.precompute_table(X, nodes), mls.precompute_table(X, shuffled)
    assert_allclose(energies.chamfer_loss(tb, U[perm], X[::3]).total,
                    energies.chamfer_loss(ta, U, X[::3]).total, rtol=1e-10)


def test_rbf_table_energies(setup):
    nodes, _, _, _ = setup
    s = rbf.build_rbf(nodes)
    t = s.table(nodes.positions)
    U, _, _ = rigid(nodes, 9)
    # RBF only interpolates the rigid field, so these are small but not zero
    assert energies.arap_loss(t, U).total >= 0
    rng = np.random.default_rng(6)
    V = rng.uniform(-0.1, 0.1, (nodes.K, 3))
    assert fd_check(lambda W: energies.arap_loss(t, W), V) <= 1e-5


# blend

def test_blend_examples(setup):
    nodes, node_table, _, _ = setup
    U0 = np.zeros((nodes.K, 3))
    assert energies.blend_loss(node_table, U0, U0, [0.5]).total == 0
    U, _, _ = rigid(nodes, 1)
    assert energies.blend_loss(node_table, U, U, [0.1, 0.5, 0.9]).total <= 1e-9
    R = shapes.axis_angle_rotation([0, 0, 1], np.pi / 2)
    Ur = nodes.positions @ (R - np.eye(3)).T
    assert energies.blend_loss(node_table, U0, Ur, [0.5]).total > 1e-3
    with pytest.raises(DataError):
        energies.blend_loss(node_table, U0, U0, [])
    with pytest.raises(DataError):
        energies.blend_loss(node_table, U0, U0, [1.0])


def test_blend_gradients(setup):
    nodes, node_table, _, _ = setup
    rng = np.random.default_rng(7)
    for _ in range(2):
        Ua, Ub = rng.uniform(-0.1, 0.1, (2, nodes.K, 3))
        alphas = rng.uniform(0.05, 0.95, 2)
        assert fd_check(lambda V: energies.blend_loss(node_table, V, Ub, alphas), Ua) <= 1e-6

        def loss_b(V):
            e = energies.blend_loss(node_table, Ua, V, alphas)
            return energies.EnergyValue(e.total, e.terms, e.gradient_b)

        assert fd_check(loss_b, Ub) <= 1e-6


# total

def test_total_energy_weights(setup):
    nodes, node_table, table, X = setup
    rng = np.random.default_rng(8)
    U, Ub = rng.uniform(-0.1, 0.1, (2, nodes.K, 3))
    parts = dict(corr=energies.corr_loss(table, U, X + 0.01), vol=energies.vol_loss(node_table, U),
                 arap=energies.arap_loss(node_table, U),
                 blend=energies.blend_loss(node_table, U, Ub, [0.3]))
    zero = EnergyWeights(0, 0, 0, 0, 0, 0, 0)
    e = energies.total_energy(zero, "supervised", **parts)
    assert e.total == 0 and np.all(e.gradient == 0)
    e = energies.total_energy(EnergyWeights(1, 0, 0, 0), "supervised", corr=parts["corr"])
    assert e.total == parts["corr"].total
    w = EnergyWeights()
    assert (w.lambda_corr, w.lambda_vol, w.lambda_arap, w.lambda_blend) == (1, 5e-3, 1e-2, 5e-3)
    assert (w.inference_data, w.inference_arap, w.inference_vol) == (1, 1e-4, 1e-3)
    e = energies.total_energy(w, "supervised", **parts)
    hand = (parts["corr"].total + 5e-3 * parts["vol"].total + 1e-2 * parts["arap"].total
            + 5e-3 * parts["blend"].total)
    assert abs(e.total - hand) <= 1e-12 * max(1, hand)
    grad = (parts["corr"].gradient + 5e-3 * parts["vol"].gradient + 1e-2 * parts["arap"].gradient
            + 5e-3 * parts["blend"].gradient)
    assert_allclose(e.gradient, grad, atol=1e-14)
    assert_allclose(e.gradient_b, 5e-3 * parts["blend"].gradient_b)


def test_total_energy_modes(setup):
    nodes, node_table, table, X = setup
    U = np.zeros((nodes.K, 3))
    w = EnergyWeights()
    with pytest.raises(DataError, match="requires"):
        energies.total_energy(w, "supervised", corr=energies.corr_loss(table, U, X))
    with pytest.raises(DataError, match="not used"):
        energies.total_energy(w, "inference", corr=energies.corr_loss(table, U, X))
    with pytest.raises(DataError, match="unknown mode"):
        energies.total_energy(w, "bogus")
    e = energies.total_energy(w, "inference", chamfer=energies.chamfer_loss(table, U, X),
                              arap=energies.arap_loss(node_table, U),
                              vol=energies.vol_loss(node_table, U))
    assert e.total == 0
    with pytest.raises(DataError, match="nonnegative"):
        EnergyWeights(lambda_vol=-1)
