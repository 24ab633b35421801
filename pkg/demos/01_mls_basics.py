"""MLS shape functions: partition of unity, linear precision, approximation.

Scatter nodes in the unit cube, evaluate shape functions at random points and
check the two consistency properties.  Then show that the field approximates
nodal values rather than interpolating them.
"""

import numpy as np

from mlsfield import NodeSet, precompute_node_table, precompute_table, shape_functions

rng = np.random.default_rng(0)
nodes = NodeSet(rng.uniform(-0.5, 0.5, size=(200, 3)), 0.3)
x = rng.uniform(-0.25, 0.25, size=(1000, 3))

table = precompute_table(x, nodes)
print(f"{len(table)} points, {table.phi.nnz / len(table):.1f} supporting nodes per point")
print("max |sum Phi - 1|     ", np.abs(np.asarray(table.phi.sum(1)).ravel() - 1).max())
print("max |sum Phi q - x|   ", np.abs(table.phi @ nodes.positions - x).max())

phi = shape_functions(x[0], nodes)
print("Phi at one point:", {k: round(v, 4) for k, v in list(phi.items())[:5]}, "...")

# A linear displacement field is reproduced exactly, a random one is smoothed.
A = rng.normal(scale=0.1, size=(3, 3))
U_lin = nodes.positions @ A.T
print("linear field error    ", np.abs(table.field(U_lin) - x @ A.T).max())

U = rng.normal(scale=0.1, size=(nodes.K, 3))
node_table = precompute_node_table(nodes)
gap = np.linalg.norm(node_table.field(U) - U[node_table.index], axis=1)
print(f"random field: u(q_i) differs from u_i by up to {gap.max():.3f} (approximation)")
