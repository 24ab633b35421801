"""First-order fitting of nodal parameters.

:func:`fit_sparse` matches a few keypoints, :func:`fit_chamfer` registers the
template to an unordered point set, both under the ARAP and volume node
regularizers.  :func:`sparse_to_dense` turns keypoint pairs into a dense
vertex correspondence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import energies, mls
from .correspondence import nn_assign
from .energies import EnergyWeights
from .errors import DataError, FitDivergenceError
from .geometry import NodeSet, TriMesh, as_points

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class OptimConfig:
    max_steps: int = 500
    step_size: float = 1e-2
    optimizer: str = "adam"          # "adam" or "gd"
    tol: float = 1e-9
    seed: int = 0
    weights: EnergyWeights = field(default_factory=EnergyWeights)
    init: str = "zeros"              # "zeros" or "provided"
    init_params: np.ndarray | None = None
    direct: bool = False             # closed-form solve when only the data term is active

    def __post_init__(self):
        if self.max_steps < 1:
            raise DataError("max_steps must be at least 1")
        if not self.step_size > 0:
            raise DataError("step_size must be positive")
        if not self.tol >= 0:
            raise DataError("tol must be nonnegative")
        if self.optimizer not in ("adam", "gd"):
            raise DataError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("zeros", "provided"):
            raise DataError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.init_params is None:
            raise DataError("init='provided' needs init_params")


@dataclass
class FitResult:
    params: np.ndarray
    trace: list
    converged: bool
    steps: int

    def trace_rows(self):
        """Trace as (header, rows) with one row per step, for CSV output."""
        names = sorted({k for entry in self.trace for k in entry if k != "total"})
        header = ["step", "total"] + names
        rows = [[n, e["total"]] + [e.get(k, "") for k in names] for n, e in enumerate(self.trace)]
        return header, rows


def _initial(config, K):
    if config.init == "provided":
        U = np.array(config.init_params, dtype=np.float64)
        if U.shape != (K, 3):
            raise DataError(f"init_params must have shape ({K}, 3), got {U.shape}")
        return U
    return np.zeros((K, 3))


def minimize(objective, U0, config: OptimConfig) -> FitResult:
    """Run the configured first-order method on ``objective(U) -> EnergyValue``.

    Each step evaluates the objective, records it, and updates the
    parameters unless converged; the returned parameters are the last
    evaluated ones, so ``trace[-1]`` is their energy.
    """
    U = np.array(U0, dtype=np.float64)
    b1, b2 = ADAM_BETAS
    m = np.zeros_like(U)
    v = np.zeros_like(U)
    trace = []
    converged = False
    prev = None
    for step in range(config.max_steps):
        e = objective(U)
        if not np.isfinite(e.total) or e.total > DIVERGENCE_LIMIT or not np.all(np.isfinite(e.gradient)):
            trace.append({"total": e.total, **e.terms})
            raise FitDivergenceError(f"energy diverged at step {step}: {e.total:.3g}", trace)
        trace.append({"total": e.total, **e.terms})
        if e.total == 0.0 or (prev is not None and abs(prev - e.total) <= config.tol * abs(prev)):
            converged = True
            break
        prev = e.total
        if step == config.max_steps - 1:
            break
        g = e.gradient
        if config.optimizer == "gd":
            U -= config.step_size * g
        else:
            t = step + 1
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            mhat = m / (1 - b1 ** t)
            vhat = v / (1 - b2 ** t)
            U -= config.step_size * mhat / (np.sqrt(vhat) + ADAM_EPS)
    return FitResult(U, trace, converged, len(trace))


def _regularizers(node_table, U, w):
    parts = {}
    if w.inference_arap:
        parts["arap"] = energies.arap_loss(node_table, U)
    if w.inference_vol:
        parts["vol"] = energies.vol_loss(node_table, U)
    return parts


def _need_nodes(node_table, w):
    if node_table is None and (w.inference_arap or w.inference_vol):
        raise DataError("a node table is required when ARAP or volume weights are nonzero")


def solve_direct(keypoint_table, targets) -> np.ndarray:
    """Minimum-norm least squares solution of the keypoint term alone."""
    A = keypoint_table.dense_phi()
    rhs = as_points(targets) - keypoint_table.eval_points
    U, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return U


def fit_sparse(keypoint_table, node_table, targets, config: OptimConfig = OptimConfig()) -> FitResult:
    """Fit parameters so mapped keypoints land on their targets.

    Minimizes ``L1 * sum |D(x_l) - y_l|^2 + L2 * ARAP + L3 * volume`` with the
    inference weights of ``config.weights``.
    """
    T = as_points(targets)
    if len(keypoint_table) == 0:
        raise DataError("at least one keypoint is required")
    if T.shape[0] != len(keypoint_table):
        raise DataError(f"{len(keypoint_table)} keypoints but {T.shape[0]} targets")
    w = config.weights
    _need_nodes(node_table, w)
    if config.direct and not (w.inference_arap or w.inference_vol):
        U = solve_direct(keypoint_table, T)
        e = energies.corr_loss(keypoint_table, U, T)
        tot = w.inference_data * e.total
        return FitResult(U, [{"total": tot, "corr": e.total}], True, 1)

    def objective(U):
        parts = {"corr": energies.corr_loss(keypoint_table, U, T)}
        parts.update(_regularizers(node_table, U, w))
        return energies.total_energy(w, "sparse-fit", **parts)

    return minimize(objective, _initial(config, keypoint_table.n_nodes), config)


def fit_chamfer(table, node_table, target, config: OptimConfig = OptimConfig()) -> FitResult:
    """Register the table points to an unordered target by Chamfer distance."""
    B = as_points(target)
    if len(B) == 0:
        raise DataError("empty target")
    w = config.weights
    _need_nodes(node_table, w)
    tree = cKDTree(B)

    def objective(U):
        parts = {"chamfer": energies.chamfer_loss(table, U, B, tree)}
        parts.update(_regularizers(node_table, U, w))
        return energies.total_energy(w, "inference", **parts)

    return minimize(objective, _initial(config, table.n_nodes), config)


def interpolate_params(U_a, U_b, steps: int) -> list:
    """Linear path of ``steps`` parameter sets from ``U_a`` to ``U_b`` inclusive."""
    if steps < 2:
        raise DataError("at least 2 steps required")
    U_a = np.asarray(U_a, dtype=np.float64)
    U_b = np.asarray(U_b, dtype=np.float64)
    if U_a.shape != U_b.shape:
        raise DataError("endpoint parameter shapes differ")
    frames = []
    for k in range(steps):
        if k == 0:
            frames.append(U_a.copy())
        elif k == steps - 1:
            frames.append(U_b.copy())
        else:
            a = k / (steps - 1)
            frames.append((1.0 - a) * U_a + a * U_b)
    return frames


def distortion_trace(node_table, frames) -> np.ndarray:
    """ARAP-at-nodes value of each frame of an interpolation sequence."""
    return np.array([energies.arap_loss(node_table, U).total for U in frames])


def keypoint_conditioning(points) -> float:
    """Ratio of smallest to largest singular value of the centered keypoints.

    Zero for fewer than three points; small values mean the keypoints are
    close to collinear or planar and pin the pose poorly.
    """
    pts = as_points(points)
    if len(pts) < 3:
        return 0.0
    s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
    s = np.concatenate([s, np.zeros(3 - len(s))])
    return float(s[2] / s[0]) if s[0] > 0 else 0.0


def field_tables(points, nodes: NodeSet, field_model: str = "mls",
                 singularity_tol: float = mls.SINGULARITY_TOL, rbf_params=None):
    """Evaluation table at ``points`` and the node table for the chosen field model."""
    if field_model == "mls":
        return (mls.precompute_table(points, nodes, singularity_tol),
                mls.precompute_node_table(nodes, singularity_tol))
    if field_model == "rbf":
        from .rbf import build_rbf

        system = build_rbf(nodes, **(rbf_params or {}))
        return system.table(points), system.table(nodes.positions)
    raise DataError(f"unknown field model {field_model!r}")


def sparse_to_dense(template: TriMesh, nodes: NodeSet, target, pairs,
                    config: OptimConfig = OptimConfig(), field_model: str = "mls",
                    return_fit: bool = False):
    """Dense template-to-target correspondence from sparse keypoint pairs.

    ``pairs`` is an (n, 2) array of (template vertex, target point) indices.
    The parameters are fitted to the keypoints, every template vertex is
    mapped through the fitted field, and each mapped vertex is assigned its
    nearest target point.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    X = as_points(template)
    Y = as_points(target)
    if len(pairs) == 0:
        raise DataError("no keypoint pairs")
    if pairs[:, 0].max() >= len(X) or pairs[:, 1].max() >= len(Y) or pairs.min() < 0:
        raise DataError("keypoint index out of range")
    kx, ky = X[pairs[:, 0]], Y[pairs[:, 1]]
    cond = keypoint_conditioning(kx)
    if cond < 1e-2:
        logger.warning("keypoints are nearly degenerate (singular value ratio %.2e); "
                       "the fitted pose is poorly constrained", cond)
    table, node_table = field_tables(X, nodes, field_model)
    kp_table = table.subset(pairs[:, 0])
    fit = fit_sparse(kp_table, node_table, ky, config)
    corr = nn_assign(table.mapping(fit.params), Y)
    return (corr, fit) if return_fit else corr
