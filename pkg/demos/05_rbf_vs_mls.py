"""Contrast the interpolating RBF field with the approximating MLS field.

RBF reproduces nodal values exactly but is global and dense; MLS is local,
sparse and reproduces linear fields.
"""

import time

import numpy as np

from mlsfield import NodeSet, build_rbf, precompute_table, rbf_interpolate

rng = np.random.default_rng(3)
nodes = NodeSet(rng.uniform(-0.5, 0.5, size=(300, 3)), 0.3)
x = rng.uniform(-0.25, 0.25, size=(2000, 3))
U = rng.normal(scale=0.1, size=(nodes.K, 3))

system = build_rbf(nodes)
print(f"RBF matrix condition number {system.condition:.2e}")
print("RBF nodal error ", np.abs(rbf_interpolate(nodes.positions, system, U) - U).max())

A = rng.normal(scale=0.1, size=(3, 3))
U_lin = nodes.positions @ A.T
print("linear field error  RBF", np.abs(rbf_interpolate(x, system, U_lin) - x @ A.T).max())
mls_table = precompute_table(x, nodes)
print("linear field error  MLS", np.abs(mls_table.field(U_lin) - x @ A.T).max())

t0 = time.perf_counter()
rbf_table = system.table(x)
t_rbf = time.perf_counter() - t0
cells = len(x) * nodes.K
print(f"table density: MLS {mls_table.phi.nnz / cells:.1%}, "
      f"RBF {rbf_table.phi.nnz / cells:.1%} (built in {t_rbf:.2f} s)")
