"""Nearest neighbour correspondences and geodesic error evaluation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csgraph
from scipy.spatial import cKDTree

from .energies import chamfer
from .errors import DataError
from .geometry import Correspondence, TriMesh, as_points

# relative slack for treating two kd-tree distances as a potential tie
_TIE_RTOL = 1e-9


def nn_assign(A, B, tree: cKDTree | None = None, workers: int = 1) -> Correspondence:
    """Map every point of ``A`` to its Euclidean nearest point in ``B``.

    Agrees exactly with a brute-force scan: near-ties reported by the tree are
    re-resolved on the exact squared distances, lowest index first.
    """
    A, B = as_points(A), as_points(B)
    if len(B) == 0:
        raise DataError("nearest neighbour search into an empty set")
    tree = tree if tree is not None else cKDTree(B)
    k = min(2, len(B))
    dist, idx = tree.query(A, k=k, workers=workers)
    if k == 1:
        return Correspondence(idx.reshape(-1))
    out = idx[:, 0].copy()
    tie = dist[:, 1] <= dist[:, 0] * (1 + _TIE_RTOL) + 1e-300
    for n in np.flatnonzero(tie):
        cand = np.sort(np.asarray(
            tree.query_ball_point(A[n], dist[n, 0] * (1 + _TIE_RTOL) + 1e-300), dtype=np.int64))
        d2 = ((B[cand] - A[n]) ** 2).sum(-1)
        out[n] = cand[np.argmin(d2)]
    return Correspondence(out)


def compose_pi(DX, X, DY, Y) -> Correspondence:
    """Correspondence X -> Y through two deformed copies of one template.

    Each ``x`` goes to its nearest point of ``DX``, whose template index picks
    the matching point of ``DY``, which is finally matched into ``Y``.
    """
    DX, DY = as_points(DX), as_points(DY)
    if DX.shape != DY.shape:
        raise DataError(f"deformed templates differ in size: {len(DX)} vs {len(DY)}")
    to_template = nn_assign(X, DX).target
    return Correspondence(nn_assign(DY[to_template], Y).target)


@dataclass(frozen=True, eq=False)
class GeodesicErrorReport:
    """Per-point geodesic errors normalized by the square root of surface area.

    ``mean`` is over finite errors; pairs in different components have an
    infinite error and are counted in ``n_disconnected``.  ``accuracy[t]`` is
    the fraction of all points with error at most ``thresholds[t]``.
    """

    errors: np.ndarray
    mean: float
    thresholds: np.ndarray
    accuracy: np.ndarray
    n_disconnected: int

    def curve(self, thresholds) -> np.ndarray:
        thresholds = np.asarray(thresholds, dtype=np.float64)
        srt = np.sort(self.errors)
        return np.searchsorted(srt, thresholds, side="right") / len(srt)


def geodesic_error(pred: Correspondence, gt: Correspondence, target_mesh: TriMesh,
                   thresholds=None) -> GeodesicErrorReport:
    if len(pred) != len(gt):
        raise DataError(f"prediction has {len(pred)} entries, ground truth {len(gt)}")
    n = len(target_mesh)
    pred.validate(n)
    gt.validate(n)
    errors = np.empty(len(gt))
    sources = np.unique(gt.target)
    for s in range(0, len(sources), 512):
        src = sources[s:s + 512]
        dist = csgraph.dijkstra(target_mesh.edge_graph, directed=False, indices=src)
        row = {int(v): k for k, v in enumerate(src)}
        sel = np.flatnonzero(np.isin(gt.target, src))
        rows = np.array([row[int(v)] for v in gt.target[sel]], dtype=np.int64)
        errors[sel] = dist[rows, pred.target[sel]]
    errors /= np.sqrt(target_mesh.area())
    finite = np.isfinite(errors)
    if thresholds is None:
        thresholds = np.linspace(0.0, 0.25, 51)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    srt = np.sort(errors)
    acc = np.searchsorted(srt, thresholds, side="right") / len(srt)
    mean = float(errors[finite].mean()) if finite.any() else float("inf")
    return GeodesicErrorReport(errors, mean, thresholds, acc, int((~finite).sum()))


def reconstruction_chamfer(D, target) -> float:
    """Bidirectional Chamfer distance between a reconstruction and its target."""
    return chamfer(D, target)


def exact_match_rate(pred: Correspondence, gt: Correspondence) -> float:
    return float(np.mean(pred.target == gt.target))
