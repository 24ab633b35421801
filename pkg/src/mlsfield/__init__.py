"""Moving least squares deformation fields on 3D shapes.

A template is deformed by per-node displacements interpolated with
linear-precision MLS shape functions.  The package covers node placement,
shape function tables, regularized energies, first-order fitting and
correspondence evaluation, plus an RBF field as a comparison baseline.
"""

from .correspondence import (GeodesicErrorReport, compose_pi, exact_match_rate,
                             geodesic_error, nn_assign, reconstruction_chamfer)
from .energies import (EnergyValue, EnergyWeights, arap_loss, blend_loss, chamfer,
                       chamfer_loss, corr_loss, total_energy, vol_loss)
from .errors import (CoverageError, DataError, FitDivergenceError, NodeCoincidenceError,
                     NumericalError, ParseError, RbfConditioningError, SingularMomentError)
from .fitting import (FitResult, OptimConfig, distortion_trace, field_tables, fit_chamfer,
                      fit_sparse, interpolate_params, sparse_to_dense)
from .geometry import Correspondence, NodeSet, PointSet, TriMesh, diameter
from .io import (load_artifact, load_nodes, load_params, load_shape, normalize_unit_cube,
                 normalize_unit_sphere, save_artifact, save_nodes, save_params, save_shape)
from .mls import (ShapeTable, eval_field, eval_jacobian, eval_mapping, precompute_node_table,
                  precompute_table, shape_function_gradients, shape_functions)
from .rbf import RbfSystem, build_rbf, rbf_interpolate, rbf_jacobian
from .sampling import add_auxiliary_cube_nodes, check_coverage, sample_nodes

__version__ = "0.1.0"
