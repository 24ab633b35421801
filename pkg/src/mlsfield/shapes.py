"""Small synthetic meshes and deformations for tests and demos."""

from __future__ import annotations

import numpy as np

from .geometry import TriMesh


def tetrahedron() -> TriMesh:
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return TriMesh(v, f)


def ellipsoid(n_rings: int = 30, n_segments: int = 33, radii=(1.0, 0.4, 0.3)) -> TriMesh:
    """Closed UV ellipsoid with ``n_rings * n_segments + 2`` vertices.

    The defaults give 992 vertices, elongated along x.
    """
    theta = np.linspace(0, np.pi, n_rings + 2)[1:-1]
    phi = np.linspace(0, 2 * np.pi, n_segments, endpoint=False)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    ring = np.stack([np.cos(T), np.sin(T) * np.cos(P), np.sin(T) * np.sin(P)], -1).reshape(-1, 3)
    v = np.vstack([[1.0, 0, 0], ring, [-1.0, 0, 0]]) * np.asarray(radii)
    faces = []
    ns = n_segments

    def vid(i, j):
        return 1 + i * ns + (j % ns)

    for j in range(ns):
        faces.append([0, vid(0, j + 1), vid(0, j)])
    for i in range(n_rings - 1):
        for j in range(ns):
            a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
            faces.append([a, b, d])
            faces.append([a, d, c])
    last = len(v) - 1
    for j in range(ns):
        faces.append([last, vid(n_rings - 1, j), vid(n_rings - 1, j + 1)])
    return TriMesh(v, np.array(faces))


def strip(n: int, width: float = 1.0) -> TriMesh:
    """Flat strip of unit-length cells: vertices ``(k, 0, 0)`` then ``(k, width, 0)``."""
    bottom = np.stack([np.arange(n + 1.0), np.zeros(n + 1), np.zeros(n + 1)], -1)
    top = bottom + [0.0, width, 0.0]
    faces = []
    for k in range(n):
        a, b, c, d = k, k + 1, n + 1 + k, n + 2 + k
        faces += [[a, b, d], [a, d, c]]
    return TriMesh(np.vstack([bottom, top]), np.array(faces))


def grid(n: int = 10, size: float = 1.0, z: float = 0.0) -> TriMesh:
    """Flat square ``(n+1) x (n+1)`` grid in the plane ``z``."""
    t = np.linspace(-size / 2, size / 2, n + 1)
    X, Y = np.meshgrid(t, t, indexing="ij")
    v = np.stack([X.ravel(), Y.ravel(), np.full(X.size, z)], -1)
    faces = []
    for i in range(n):
        for j in range(n):
            a = i * (n + 1) + j
            b, c, d = a + 1, a + n + 1, a + n + 2
            faces += [[a, c, d], [a, d, b]]
    return TriMesh(v, np.array(faces))


def hairpin(n_along: int = 60, n_across: int = 4, gap: float = 0.1,
            length: float = 1.0, width: float = 0.2) -> TriMesh:
    """Open strip bent into a U: the two arms run parallel ``gap`` apart.

    Points at the two arm tips are close in space but far along the surface.
    """
    # centerline: arm 1 along +x at z = +gap/2, half circle, arm 2 back at z = -gap/2
    half = np.pi * gap / 2
    total = 2 * length + half
    s = np.linspace(0, total, n_along + 1)
    cx, cz = np.empty_like(s), np.empty_like(s)
    for k, sk in enumerate(s):
        if sk <= length:
            cx[k], cz[k] = sk, gap / 2
        elif sk <= length + half:
            a = (sk - length) / (gap / 2)
            cx[k], cz[k] = length + gap / 2 * np.sin(a), gap / 2 * np.cos(a)
        else:
            cx[k], cz[k] = length - (sk - length - half), -gap / 2
    ys = np.linspace(-width / 2, width / 2, n_across + 1)
    v = np.array([[x, y, z] for x, z in zip(cx, cz) for y in ys])
    m = n_across + 1
    faces = []
    for i in range(n_along):
        for j in range(n_across):
            a = i * m + j
            faces += [[a, a + 1, a + m + 1], [a, a + m + 1, a + m]]
    return TriMesh(v, np.array(faces))


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def random_rotation(rng, max_angle: float = np.pi) -> np.ndarray:
    """Rotation about a uniformly random axis by an angle in ``[0, max_angle]``."""
    axis = rng.normal(size=3)
    return axis_angle_rotation(axis, rng.uniform(0, max_angle))


def bend(points, amplitude_deg: float = 10.0, axis: int = 0) -> np.ndarray:
    """Smoothly bend points: rotate about z by an angle growing along ``axis``.

    The angle is ``amplitude * s`` where ``s`` is the coordinate along
    ``axis`` scaled to ``[-1, 1]`` over the point set.
    """
    pts = np.asarray(points, dtype=np.float64)
    s = pts[:, axis]
    lo, hi = s.min(), s.max()
    s = 2 * (s - lo) / max(hi - lo, 1e-12) - 1
    ang = np.deg2rad(amplitude_deg) * s
    c, sn = np.cos(ang), np.sin(ang)
    out = pts.copy()
    out[:, 0] = c * pts[:, 0] - sn * pts[:, 1]
    out[:, 1] = sn * pts[:, 0] + c * pts[:, 1]
    return out
