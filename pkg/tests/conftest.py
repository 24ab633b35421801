import numpy as np
import pytest

from mlsfield import io, sampling, shapes
from mlsfield.geometry import NodeSet


def random_nodes(rng, K, radius=None):
    """K nodes uniform in the unit cube with a radius giving ~20 supports."""
    q = rng.uniform(-0.5, 0.5, size=(K, 3))
    if radius is None:
        radius = (20.0 * 3 / (4 * np.pi * K)) ** (1 / 3)
    return NodeSet(q, radius)


def covered_points(rng, nodes, n, margin=0.0):
    """Draw n points well inside the node cloud (central half of the cube)."""
    return rng.uniform(-0.25 + margin, 0.25 - margin, size=(n, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ellipsoid_setup():
    """Normalized 992-vertex ellipsoid with nodes from the default sampler."""
    mesh, _ = io.normalize_unit_sphere(shapes.ellipsoid())
    nodes = sampling.sample_nodes(mesh, seed=0)
    return mesh, nodes


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
