"""Loss terms on nodal parameters and their analytic gradients.

Every term takes a :class:`~mlsfield.mls.ShapeTable` (or the RBF equivalent)
and a ``(K, 3)`` parameter array and returns an :class:`EnergyValue` whose
``gradient`` is the derivative with respect to the parameters.  Jacobian
based terms use the fact that ``dJ/du_i`` is the constant ``e_a grad Phi_i^T``,
so their gradients are sparse products with the precomputed ``dphi``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import DataError
from .geometry import as_points


@dataclass(frozen=True)
class EnergyWeights:
    """Term weights.

    The first four weight the training-style objective (correspondence,
    volume, ARAP, blend).  The ``inference_*`` triple weights the data term
    (Chamfer or keypoints), ARAP and volume when fitting a single shape.
    """

    lambda_corr: float = 1.0
    lambda_vol: float = 5e-3
    lambda_arap: float = 1e-2
    lambda_blend: float = 5e-3
    inference_data: float = 1.0
    inference_arap: float = 1e-4
    inference_vol: float = 1e-3

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not value >= 0:
                raise DataError(f"weight {name} must be nonnegative, got {value}")


@dataclass
class EnergyValue:
    total: float
    terms: dict = field(default_factory=dict)
    gradient: np.ndarray | None = None
    gradient_b: np.ndarray | None = None  # second endpoint, blend terms only


def _params(table, U):
    return table._check(U)


def _pullback(table, dL_dJ):
    """Chain ``dL/dJ`` (M, 3, 3) through ``dJ[m,a,b]/du_i[a] = dphi_b[m, i]``."""
    grad = np.zeros((table.n_nodes, 3))
    for b, d in enumerate(table.dphi):
        grad += d.T @ dL_dJ[:, :, b]
    return grad


def corr_loss(table, U, targets) -> EnergyValue:
    """Sum of squared distances between mapped keypoints and their targets."""
    U = _params(table, U)
    T = as_points(targets)
    if T.shape[0] != len(table):
        raise DataError(f"{len(table)} keypoints but {T.shape[0]} targets")
    res = table.mapping(U) - T
    val = float((res ** 2).sum())
    return EnergyValue(val, {"corr": val}, 2.0 * (table.phi.T @ res))


def chamfer(A, B) -> float:
    """Bidirectional Chamfer distance: sum of the two mean squared NN distances."""
    A, B = as_points(A), as_points(B)
    if len(A) == 0 or len(B) == 0:
        raise DataError("chamfer distance of an empty set")
    da, _ = cKDTree(B).query(A)
    db, _ = cKDTree(A).query(B)
    return float((da ** 2).mean() + (db ** 2).mean())


def chamfer_loss(table, U, target, target_tree: cKDTree | None = None) -> EnergyValue:
    """Chamfer distance between the mapped table points and a target set.

    Nearest neighbour assignments are frozen within one evaluation, so the
    gradient is exact on each piece of this piecewise smooth objective.
    """
    U = _params(table, U)
    B = as_points(target)
    if len(B) == 0:
        raise DataError("empty target")
    D = table.mapping(U)
    tree = target_tree if target_tree is not None else cKDTree(B)
    _, j = tree.query(D)
    _, i = cKDTree(D).query(B)
    ra = D - B[j]
    rb = D[i] - B
    val = float((ra ** 2).sum(-1).mean() + (rb ** 2).sum(-1).mean())
    gD = 2.0 * ra / len(D)
    np.add.at(gD, i, 2.0 * rb / len(B))
    return EnergyValue(val, {"chamfer": val}, table.phi.T @ gD)


def cofactor(J) -> np.ndarray:
    """Cofactor matrices of a stack of 3x3 matrices (``d det J / dJ``)."""
    r0, r1, r2 = J[..., 0, :], J[..., 1, :], J[..., 2, :]
    return np.stack([np.cross(r1, r2), np.cross(r2, r0), np.cross(r0, r1)], axis=-2)


def vol_loss(node_table, U) -> EnergyValue:
    """``sum_i (det J(q_i) - 1)^2`` over the node table points."""
    U = _params(node_table, U)
    J = node_table.jacobian(U)
    det = np.linalg.det(J)
    val = float(((det - 1.0) ** 2).sum())
    # cofactor form of d det/dJ: valid even where J is singular
    dL = 2.0 * (det - 1.0)[:, None, None] * cofactor(J)
    return EnergyValue(val, {"vol": val}, _pullback(node_table, dL))


def arap_loss(node_table, U) -> EnergyValue:
    """``sum_i |J^T J - I|_F^2`` over the node table points."""
    U = _params(node_table, U)
    J = node_table.jacobian(U)
    E = np.swapaxes(J, 1, 2) @ J - np.eye(3)
    val = float((E ** 2).sum())
    return EnergyValue(val, {"arap": val}, _pullback(node_table, 4.0 * J @ E))


def blend_loss(node_table, U_a, U_b, alphas) -> EnergyValue:
    """ARAP + volume of the blended parameters ``(1 - a) U_a + a U_b``.

    ``gradient`` is with respect to ``U_a`` and ``gradient_b`` with respect
    to ``U_b``.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    if alphas.size == 0:
        raise DataError("at least one blend coefficient required")
    if np.any((alphas <= 0) | (alphas >= 1)):
        raise DataError("blend coefficients must lie strictly inside (0, 1)")
    U_a, U_b = _params(node_table, U_a), _params(node_table, U_b)
    ga, gb = np.zeros_like(U_a), np.zeros_like(U_b)
    arap_total = vol_total = 0.0
    for a in alphas:
        Ua = (1.0 - a) * U_a + a * U_b
        ea, ev = arap_loss(node_table, Ua), vol_loss(node_table, Ua)
        g = ea.gradient + ev.gradient
        ga += (1.0 - a) * g
        gb += a * g
        arap_total += ea.total
        vol_total += ev.total
    total = arap_total + vol_total
    return EnergyValue(total, {"blend": total, "blend_arap": arap_total,
                               "blend_vol": vol_total}, ga, gb)


MODES = {
    "supervised": (("corr", "lambda_corr"), ("vol", "lambda_vol"),
                   ("arap", "lambda_arap"), ("blend", "lambda_blend")),
    "unsupervised": (("chamfer", "lambda_corr"), ("vol", "lambda_vol"),
                     ("arap", "lambda_arap"), ("blend", "lambda_blend")),
    "inference": (("chamfer", "inference_data"), ("arap", "inference_arap"),
                  ("vol", "inference_vol")),
    "sparse-fit": (("corr", "inference_data"), ("arap", "inference_arap"),
                   ("vol", "inference_vol")),
}


def total_energy(weights: EnergyWeights, mode: str = "supervised", **parts) -> EnergyValue:
    """Weighted sum of precomputed parts for one of the objective modes.

    A part is required exactly when its weight is nonzero; parts with zero
    weight may be omitted.
    """
    if mode not in MODES:
        raise DataError(f"unknown mode {mode!r}; expected one of {sorted(MODES)}")
    unknown = set(parts) - {name for name, _ in MODES[mode]}
    if unknown:
        raise DataError(f"parts {sorted(unknown)} are not used in mode {mode!r}")
    total, terms, grad, grad_b = 0.0, {}, None, None
    for name, attr in MODES[mode]:
        lam = getattr(weights, attr)
        part = parts.get(name)
        if part is None:
            if lam != 0:
                raise DataError(f"mode {mode!r} requires the {name!r} part")
            continue
        terms[name] = part.total
        total += lam * part.total
        if part.gradient is not None:
            g = lam * part.gradient
            grad = g if grad is None else grad + g
        if part.gradient_b is not None:
            g = lam * part.gradient_b
            grad_b = g if grad_b is None else grad_b + g
    if grad is None:
        shapes = [p.gradient for p in parts.values() if p.gradient is not None]
        if shapes:
            grad = np.zeros_like(shapes[0])
    return EnergyValue(total, terms, grad, grad_b)
