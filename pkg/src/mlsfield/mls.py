"""Moving least squares shape functions with a linear basis.

A node ``q_i`` with radius ``r_i`` carries the cubic weight

    w_i(x) = (1 - d / r_i)^3  for d = |x - q_i| <= r_i, else 0,

and the shape functions are ``Phi_i(x) = p(x)^T M(x)^-1 w_i(x) p(q_i)`` with
``p(x) = [1, x, y, z]`` and ``M(x) = sum_i w_i(x) p(q_i) p(q_i)^T``.  They
reproduce constant and linear fields exactly.  Gradients are evaluated in
closed form via the product rule, using
``d(M^-1) = -M^-1 dM M^-1``.

Internally every point is solved in coordinates centered on itself
(``p(q) -> [1, q - x]``).  This is an exact change of basis, so ``Phi`` and
its gradient are unchanged, but the moment matrix is far better conditioned
for shapes away from the origin.  The non-planarity score reported by
:func:`local_fit` is the smallest eigenvalue of that centered matrix.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .errors import CoverageError, DataError, NodeCoincidenceError, SingularMomentError
from .geometry import NodeSet, as_points

logger = logging.getLogger(__name__)

SINGULARITY_TOL = 1e-8
COINCIDENCE_TOL = 1e-12

# number of moment matrices factorized since import; tests use it to check
# that table-based evaluation never refactorizes
stats = {"factorizations": 0}


def poly_basis(x) -> np.ndarray:
    """Linear polynomial basis ``[1, x, y, z]`` (vectorized over leading axes)."""
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([np.ones(x.shape[:-1] + (1,)), x], axis=-1)


def weight(x, q, r) -> float:
    """Compactly supported cubic weight of a node at ``q`` with radius ``r``."""
    if not r > 0:
        raise DataError("radius must be positive")
    d = float(np.linalg.norm(np.asarray(x, float) - np.asarray(q, float)))
    if d >= r:
        return 0.0
    return (1.0 - d / r) ** 3


def weight_gradient(x, q, r) -> np.ndarray:
    """Gradient of :func:`weight` with respect to ``x``; zero at ``x == q``."""
    diff = np.asarray(x, float) - np.asarray(q, float)
    d = float(np.linalg.norm(diff))
    if d >= r or d < COINCIDENCE_TOL:
        return np.zeros(3)
    return -3.0 / r * (1.0 - d / r) ** 2 * diff / d


def moment_matrix(x, nodes: NodeSet) -> np.ndarray:
    """``M(x) = sum_i w_i(x) p(q_i) p(q_i)^T`` in global coordinates."""
    x = np.asarray(x, dtype=np.float64)
    M = np.zeros((4, 4))
    for i in range(nodes.K):
        w = weight(x, nodes.positions[i], nodes.radii[i])
        if w > 0:
            p = poly_basis(nodes.positions[i])
            M += w * np.outer(p, p)
    return M


def _supports(points, nodes):
    """Sorted supporting node indices (d <= r_i, w > 0) for each point."""
    lists = nodes.tree.query_ball_point(points, r=nodes.max_radius)
    uniform = np.all(nodes.radii == nodes.radii[0])
    out = []
    for x, idx in zip(points, lists):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        if idx.size:
            d = np.sqrt(((nodes.positions[idx] - x) ** 2).sum(-1))
            keep = d < nodes.radii[idx]
            if not (uniform and keep.all()):
                idx = idx[keep]
        out.append(idx)
    return out


@dataclass
class LocalFit:
    """Per-point MLS quantities for a batch of points, padded to a common width.

    ``support[k, s]`` is the s-th supporting node of point k (``-1`` for
    padding); ``phi`` and ``dphi`` are aligned with it.  Rows of uncovered
    points hold NaN shape functions.
    """

    support: np.ndarray
    count: np.ndarray
    sigma_min: np.ndarray
    covered: np.ndarray
    phi: np.ndarray
    dphi: np.ndarray | None
    min_distance: np.ndarray


def local_fit(points, nodes: NodeSet, singularity_tol: float = SINGULARITY_TOL,
              gradients: bool = True) -> LocalFit:
    """Evaluate shape functions (and gradients) at every point of a batch.

    Work is elementwise per point apart from the batched eigendecomposition,
    so a point's results do not depend on which other points share the batch.
    """
    X = np.ascontiguousarray(as_points(points))
    m = X.shape[0]
    sup = _supports(X, nodes)
    count = np.array([len(s) for s in sup], dtype=np.int64)
    S = max(int(count.max()) if m else 0, 1)
    support = np.full((m, S), -1, dtype=np.int64)
    for k, s in enumerate(sup):
        support[k, :len(s)] = s
    valid = support >= 0
    idx = np.where(valid, support, 0)

    rel = nodes.positions[idx] - X[:, None, :]            # q_i - x
    rel = np.where(valid[..., None], rel, 0.0)
    d = np.sqrt((rel ** 2).sum(-1))
    r = np.where(valid, nodes.radii[idx], 1.0)
    t = np.where(valid, 1.0 - d / r, 0.0)
    w = t ** 3
    P = np.concatenate([np.ones((m, S, 1)), rel], axis=-1)  # centered basis

    M = np.zeros((m, 4, 4))
    for s in range(S):
        M += w[:, s, None, None] * (P[:, s, :, None] * P[:, s, None, :])

    lam, V = np.linalg.eigh(M)
    stats["factorizations"] += m
    sigma_min = lam[:, 0]
    covered = (count >= 4) & (sigma_min > singularity_tol)
    inv_lam = np.where(covered[:, None], 1.0 / np.where(covered[:, None], lam, 1.0), np.nan)

    def solve(b):
        # M^-1 b through the eigendecomposition, b: (m, 4)
        coef = (V * b[:, :, None]).sum(axis=1) * inv_lam
        return (V * coef[:, None, :]).sum(axis=2)

    e1 = np.zeros((m, 4))
    e1[:, 0] = 1.0
    gamma = solve(e1)                                       # M^-1 p(x), p(x) = e1
    gP = (P * gamma[:, None, :]).sum(-1)                    # gamma . p(q_i)
    phi = w * gP

    dphi = None
    min_d = np.where(valid, d, np.inf).min(axis=1)
    if gradients:
        # dw/dx = 3/r (1 - d/r)^2 (q - x)/d, set to 0 at the node itself
        safe_d = np.where(d > COINCIDENCE_TOL, d, 1.0)
        coef = np.where(valid & (d > COINCIDENCE_TOL), 3.0 / r * t ** 2 / safe_d, 0.0)
        dw = coef[..., None] * rel                          # (m, S, 3)
        dphi = np.empty((m, S, 3))
        for a in range(3):
            B = np.zeros((m, 4))
            for s in range(S):
                B += (dw[:, s, a] * gP[:, s])[:, None] * P[:, s, :]
            rhs = -B
            rhs[:, a + 1] += 1.0
            dgamma = solve(rhs)
            dphi[:, :, a] = dw[:, :, a] * gP + w * (P * dgamma[:, None, :]).sum(-1)
        dphi = np.where(valid[..., None], dphi, 0.0)
    phi = np.where(valid, phi, 0.0)
    return LocalFit(support, count, sigma_min, covered, phi, dphi, min_d)


def _single(x, nodes, singularity_tol, gradients):
    fit = local_fit(np.asarray(x, dtype=np.float64).reshape(1, 3), nodes,
                    singularity_tol, gradients)
    if not fit.covered[0]:
        raise SingularMomentError(
            f"moment matrix singular at {np.asarray(x).tolist()}: "
            f"sigma_min={fit.sigma_min[0]:.3g}, support={fit.count[0]}",
            sigma_min=float(fit.sigma_min[0]), support_count=int(fit.count[0]),
        )
    return fit


def shape_functions(x, nodes: NodeSet, singularity_tol: float = SINGULARITY_TOL) -> dict:
    """Sparse map ``{node index: Phi_i(x)}`` over the supporting nodes."""
    fit = _single(x, nodes, singularity_tol, gradients=False)
    n = fit.count[0]
    return {int(i): float(v) for i, v in zip(fit.support[0, :n], fit.phi[0, :n])}


def shape_function_gradients(x, nodes: NodeSet,
                             singularity_tol: float = SINGULARITY_TOL,
                             allow_coincident: bool = False) -> dict:
    """Sparse map ``{node index: grad Phi_i(x)}``.

    The weight of a node is not differentiable at the node itself.  By default
    a point closer than 1e-12 to a supporting node raises
    :class:`NodeCoincidenceError`; with ``allow_coincident`` that node's weight
    gradient is taken as zero (the symmetric limit), which is what the node
    regularizers use.
    """
    fit = _single(x, nodes, singularity_tol, gradients=True)
    if not allow_coincident and fit.min_distance[0] < COINCIDENCE_TOL:
        raise NodeCoincidenceError(f"point {np.asarray(x).tolist()} coincides with a node")
    n = fit.count[0]
    return {int(i): fit.dphi[0, s].copy() for s, i in enumerate(fit.support[0, :n])}


# --------------------------------------------------------------------------
# precomputed tables


@dataclass(frozen=True, eq=False)
class ShapeTable:
    """Shape functions and gradients frozen at a fixed set of points.

    ``phi`` is an (M, K) sparse matrix and ``dphi`` a tuple of three (M, K)
    sparse matrices, one per spatial derivative.  Field, mapping and Jacobian
    evaluations are sparse products, linear (affine) in the parameters.
    """

    eval_points: np.ndarray
    phi: sparse.csr_matrix
    dphi: tuple
    n_nodes: int
    sigma_min: np.ndarray | None = None
    index: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return self.eval_points.shape[0]

    def support(self, k: int) -> np.ndarray:
        return self.phi.indices[self.phi.indptr[k]:self.phi.indptr[k + 1]]

    def phi_at(self, k: int) -> dict:
        lo, hi = self.phi.indptr[k], self.phi.indptr[k + 1]
        return {int(i): float(v) for i, v in zip(self.phi.indices[lo:hi], self.phi.data[lo:hi])}

    def dphi_at(self, k: int) -> dict:
        lo, hi = self.phi.indptr[k], self.phi.indptr[k + 1]
        g = np.stack([d.data[lo:hi] for d in self.dphi], axis=1)
        return {int(i): g[s].copy() for s, i in enumerate(self.phi.indices[lo:hi])}

    def _check(self, U):
        U = np.asarray(U, dtype=np.float64)
        if U.ndim != 2 or U.shape != (self.n_nodes, 3):
            raise DataError(f"parameters must have shape ({self.n_nodes}, 3), got {U.shape}")
        return U

    def field(self, U) -> np.ndarray:
        return self.phi @ self._check(U)

    def mapping(self, U) -> np.ndarray:
        return self.eval_points + self.field(U)

    def displacement_gradient(self, U) -> np.ndarray:
        """(M, 3, 3) array ``G[m, a, b] = d u_a / d x_b``."""
        U = self._check(U)
        return np.stack([d @ U for d in self.dphi], axis=2)

    def jacobian(self, U) -> np.ndarray:
        """(M, 3, 3) Jacobians of the mapping, rows = output components."""
        return self.displacement_gradient(U) + np.eye(3)

    def dense_phi(self) -> np.ndarray:
        return self.phi.toarray()

    def subset(self, rows) -> "ShapeTable":
        rows = np.asarray(rows, dtype=np.int64)
        sig = None if self.sigma_min is None else self.sigma_min[rows]
        idx = rows if self.index is None else self.index[rows]
        return ShapeTable(self.eval_points[rows], self.phi[rows], tuple(d[rows] for d in self.dphi),
                          self.n_nodes, sig, idx, dict(self.meta))

    def save(self, path) -> None:
        arrays = {"eval_points": self.eval_points, "n_nodes": np.array(self.n_nodes),
                  "indptr": self.phi.indptr, "indices": self.phi.indices, "phi": self.phi.data}
        for a, d in enumerate(self.dphi):
            arrays[f"dphi{a}"] = d.data
        if self.sigma_min is not None:
            arrays["sigma_min"] = self.sigma_min
        if self.index is not None:
            arrays["index"] = self.index
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ShapeTable":
        with np.load(path) as z:
            m, K = z["eval_points"].shape[0], int(z["n_nodes"])

            def mat(data):
                return sparse.csr_matrix((data, z["indices"], z["indptr"]), shape=(m, K))

            return cls(z["eval_points"].copy(), mat(z["phi"].copy()),
                       tuple(mat(z[f"dphi{a}"].copy()) for a in range(3)), K,
                       z["sigma_min"].copy() if "sigma_min" in z else None,
                       z["index"].copy() if "index" in z else None)


def _csr(fit, sel, values, K):
    counts = fit.count[sel]
    indptr = np.concatenate([[0], np.cumsum(counts)])
    valid = fit.support[sel] >= 0
    return sparse.csr_matrix((values[sel][valid], fit.support[sel][valid], indptr),
                             shape=(len(counts), K))


def precompute_table(points, nodes: NodeSet, singularity_tol: float = SINGULARITY_TOL,
                     chunk: int = 4096) -> ShapeTable:
    """Precompute Phi and grad Phi at fixed points for reuse across parameters.

    Raises :class:`CoverageError` listing every uncovered point.
    """
    X = np.array(as_points(points), dtype=np.float64)
    fits = [local_fit(X[s:s + chunk], nodes, singularity_tol) for s in range(0, len(X), chunk)]
    covered = np.concatenate([f.covered for f in fits])
    if not covered.all():
        bad = np.flatnonzero(~covered)
        raise CoverageError(
            f"{bad.size} of {len(X)} points lack 4 non-planar supporting nodes", bad)
    phi, dphi = [], [[], [], []]
    for f in fits:
        sel = np.arange(len(f.count))
        phi.append(_csr(f, sel, f.phi, nodes.K))
        for a in range(3):
            dphi[a].append(_csr(f, sel, f.dphi[..., a], nodes.K))
    sig = np.concatenate([f.sigma_min for f in fits])
    X.setflags(write=False)
    return ShapeTable(X, sparse.vstack(phi, format="csr"),
                      tuple(sparse.vstack(d, format="csr") for d in dphi), nodes.K, sig)


def precompute_node_table(nodes: NodeSet, singularity_tol: float = SINGULARITY_TOL) -> ShapeTable:
    """Table at the node positions themselves, for the node regularizers.

    Nodes whose own position is not covered are left out (the approximation is
    undefined there) and reported with a warning; ``table.index`` holds the
    indices of the nodes that were kept.
    """
    fit = local_fit(nodes.positions, nodes, singularity_tol)
    keep = np.flatnonzero(fit.covered)
    if keep.size < nodes.K:
        logger.warning("%d nodes are not covered at their own position and are excluded "
                       "from the node regularizers: %s", nodes.K - keep.size,
                       np.flatnonzero(~fit.covered).tolist())
    X = nodes.positions[keep].copy()
    X.setflags(write=False)
    return ShapeTable(X, _csr(fit, keep, fit.phi, nodes.K),
                      tuple(_csr(fit, keep, fit.dphi[..., a], nodes.K) for a in range(3)),
                      nodes.K, fit.sigma_min[keep], keep)


def table_key(points, nodes: NodeSet, singularity_tol: float = SINGULARITY_TOL) -> str:
    """Content hash identifying a precomputed table."""
    h = hashlib.sha256()
    for arr in (as_points(points), nodes.positions, nodes.radii):
        h.update(np.ascontiguousarray(arr, dtype=np.float64).tobytes())
    h.update(repr(float(singularity_tol)).encode())
    return h.hexdigest()


def cached_table(points, nodes: NodeSet, cache_dir, singularity_tol: float = SINGULARITY_TOL):
    """Load a table from ``cache_dir`` if one matches, otherwise build and store it."""
    import os

    os.makedirs(cache_dir, exist_ok=True)
    path = os.path.join(cache_dir, table_key(points, nodes, singularity_tol) + ".npz")
    if os.path.exists(path):
        return ShapeTable.load(path)
    table = precompute_table(points, nodes, singularity_tol)
    table.save(path)
    return table


# --------------------------------------------------------------------------
# field evaluation


def _table(source, nodes, singularity_tol):
    if isinstance(source, ShapeTable):
        return source
    if nodes is None:
        raise DataError("nodes are required when evaluating at raw points")
    return precompute_table(np.atleast_2d(np.asarray(source, dtype=np.float64)), nodes,
                            singularity_tol)


def _shape_like(source, out):
    if isinstance(source, ShapeTable) or np.ndim(source) == 2:
        return out
    return out[0]


def eval_field(source, U, nodes: NodeSet | None = None,
               singularity_tol: float = SINGULARITY_TOL) -> np.ndarray:
    """Displacement ``u(x) = sum_i Phi_i(x) u_i`` at a table or raw point(s)."""
    return _shape_like(source, _table(source, nodes, singularity_tol).field(U))


def eval_mapping(source, U, nodes: NodeSet | None = None,
                 singularity_tol: float = SINGULARITY_TOL) -> np.ndarray:
    """Deformed position ``D(x) = x + u(x)``."""
    return _shape_like(source, _table(source, nodes, singularity_tol).mapping(U))


def eval_jacobian(source, U, nodes: NodeSet | None = None,
                  singularity_tol: float = SINGULARITY_TOL) -> np.ndarray:
    """Jacobian ``J[a, b] = delta_ab + sum_i u_i[a] dPhi_i/dx_b`` of the mapping."""
    return _shape_like(source, _table(source, nodes, singularity_tol).jacobian(U))
