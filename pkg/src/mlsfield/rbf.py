"""Global multiquadric RBF interpolation of nodal displacements.

This is the interpolating counterpart of the MLS approximation:

    f(x) = sum_i phi(x, q_i) c_i,   Phi c = U,   phi(a, b) = sqrt(C + eps0 |a - b|^2)

so ``f(q_i) = u_i`` exactly.  No polynomial tail is added.  The multiquadric
kernel matrix is not positive definite (it has one positive eigenvalue and
K - 1 negative ones), so the system is solved with a pivoted LU
factorization rather than Cholesky.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg, sparse

from .errors import DataError, RbfConditioningError
from .geometry import NodeSet, as_points
from .mls import ShapeTable

logger = logging.getLogger(__name__)

C_DEFAULT = 1.0
EPS0_DEFAULT = 50.0
MAX_CONDITION = 1e13


def rbf_kernel(a, b, C: float = C_DEFAULT, eps0: float = EPS0_DEFAULT):
    """Multiquadric ``sqrt(C + eps0 |a - b|^2)``; broadcasts over leading axes."""
    if not (C > 0 and eps0 > 0):
        raise DataError("C and eps0 must be positive")
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.sqrt(C + eps0 * ((a - b) ** 2).sum(-1))


def kernel_matrix(x, q, C: float = C_DEFAULT, eps0: float = EPS0_DEFAULT) -> np.ndarray:
    x, q = as_points(x), as_points(q)
    return rbf_kernel(x[:, None, :], q[None, :, :], C, eps0)


@dataclass(frozen=True, eq=False)
class RbfSystem:
    positions: np.ndarray
    C: float
    eps0: float
    phi_matrix: np.ndarray
    lu: tuple
    condition: float

    @property
    def K(self) -> int:
        return self.positions.shape[0]

    def coefficients(self, U) -> np.ndarray:
        U = np.asarray(U, dtype=np.float64)
        if U.shape != (self.K, 3):
            raise DataError(f"parameters must have shape ({self.K}, 3), got {U.shape}")
        return linalg.lu_solve(self.lu, U)

    def solve(self, y) -> np.ndarray:
        return linalg.lu_solve(self.lu, np.asarray(y, dtype=np.float64))

    def kernel_gradients(self, x) -> np.ndarray:
        """(m, K, 3) gradients ``d phi(x, q_i) / dx = eps0 (x - q_i) / phi``."""
        x = as_points(x)
        diff = x[:, None, :] - self.positions[None, :, :]
        return self.eps0 * diff / rbf_kernel(x[:, None, :], self.positions[None], self.C,
                                             self.eps0)[..., None]

    def table(self, points) -> ShapeTable:
        """Dense equivalent of an MLS table: rows give ``f`` and its gradient as
        linear functions of the nodal values, so every energy works unchanged."""
        X = np.array(as_points(points), dtype=np.float64)
        A = linalg.lu_solve(self.lu, kernel_matrix(X, self.positions, self.C, self.eps0).T,
                            trans=1).T
        G = self.kernel_gradients(X)
        dA = tuple(linalg.lu_solve(self.lu, G[:, :, b].T, trans=1).T for b in range(3))
        X.setflags(write=False)
        return ShapeTable(X, sparse.csr_matrix(A), tuple(sparse.csr_matrix(d) for d in dA),
                          self.K, meta={"model": "rbf"})


def build_rbf(nodes, C: float = C_DEFAULT, eps0: float = EPS0_DEFAULT) -> RbfSystem:
    """Assemble and factorize the kernel matrix at the node positions.

    Node radii are ignored.  Raises :class:`RbfConditioningError` when the
    matrix is numerically singular (for instance duplicate nodes).
    """
    q = np.array(nodes.positions if isinstance(nodes, NodeSet) else as_points(nodes),
                 dtype=np.float64)
    Phi = kernel_matrix(q, q, C, eps0)
    cond = float(np.linalg.cond(Phi))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RbfConditioningError(f"RBF matrix is ill-conditioned (cond ~ {cond:.3g})", cond)
    lu = linalg.lu_factor(Phi)
    q.setflags(write=False)
    Phi.setflags(write=False)
    return RbfSystem(q, float(C), float(eps0), Phi, lu, cond)


def rbf_interpolate(x, system: RbfSystem, U) -> np.ndarray:
    """Interpolated displacement ``f(x)`` at one point or an (m, 3) array."""
    c = system.coefficients(U)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    f = kernel_matrix(pts, system.positions, system.C, system.eps0) @ c
    return f if np.ndim(x) == 2 else f[0]


def rbf_jacobian(x, system: RbfSystem, U) -> np.ndarray:
    """Jacobian ``I + sum_i c_i grad phi(x, q_i)^T`` of the interpolated mapping."""
    c = system.coefficients(U)
    pts = np.atleast_2d(np.asarray(x, dtype=np.float64))
    G = system.kernel_gradients(pts)                       # (m, K, 3)
    J = np.einsum("ka,mkb->mab", c, G) + np.eye(3)
    return J if np.ndim(x) == 2 else J[0]
