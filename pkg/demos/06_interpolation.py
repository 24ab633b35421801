"""Blend two poses in parameter space and track the distortion along the way.

Both endpoints are rigid motions, so their ARAP energy is zero; the linear
blend of parameters is not rigid in between, which the trace shows.
"""

import numpy as np

from mlsfield import (distortion_trace, interpolate_params, normalize_unit_sphere,
                      precompute_node_table, sample_nodes)
from mlsfield.shapes import axis_angle_rotation, ellipsoid

mesh, _ = normalize_unit_sphere(ellipsoid())
nodes = sample_nodes(mesh, seed=0)
node_table = precompute_node_table(nodes)
q = nodes.positions

U_a = np.zeros_like(q)
R = axis_angle_rotation([0, 0, 1], np.deg2rad(90))
U_b = q @ (R - np.eye(3)).T

frames = interpolate_params(U_a, U_b, 9)
trace = distortion_trace(node_table, frames)
for k, d in enumerate(trace):
    print(f"frame {k}: ARAP {d:9.3e} " + "#" * int(40 * d / trace.max()))
