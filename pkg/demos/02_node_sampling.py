"""Place deformation nodes on a template by farthest point sampling.

Candidates are scattered on and near the surface; nodes are added farthest
first until every vertex has four non-planar supporting nodes.
"""

import numpy as np

from mlsfield import check_coverage, diameter, normalize_unit_sphere, sample_nodes
from mlsfield.shapes import ellipsoid

mesh, record = normalize_unit_sphere(ellipsoid())
print(f"template: {len(mesh)} vertices, diameter {diameter(mesh):.3f}")

for fraction in (0.3, 0.2, 0.15):
    nodes = sample_nodes(mesh, radius_fraction=fraction, seed=0)
    rep = check_coverage(mesh.vertices, nodes)
    print(f"radius {fraction:.2f} x diameter -> K = {nodes.K:3d} nodes, "
          f"min supports {rep.count.min()}, all covered {rep.all_covered}, "
          f"min sigma {rep.score.min():.2e}")

nodes = sample_nodes(mesh, seed=0)
d = np.linalg.norm(nodes.positions[:, None] - nodes.positions[None], axis=-1)
np.fill_diagonal(d, np.inf)
print(f"default nodes: nearest-neighbour spacing {d.min(1).mean():.3f} "
      f"(radius {nodes.radii[0]:.3f})")
