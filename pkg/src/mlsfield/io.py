"""Reading, writing and normalizing geometry and artifacts.

Supported formats (all ASCII, line oriented, UTF-8):

``.off`` / ``.obj`` / ``.ply``
    Triangle meshes (polygons are fan-triangulated on read).  A mesh with no
    faces loads as a :class:`PointSet`.
``.xyz``
    One point per line, the first three columns are coordinates.
``.labels``
    Sidecar next to a shape file (``shape.off.labels``), one integer per vertex.
``.nodes``
    Header ``K <count> labels <0|1>`` then ``x y z radius [label]`` per node.
``.defo``
    Header ``K <count>`` then ``ux uy uz`` per node.
``.corr``
    ``source target [error]`` per line, 0-based indices, no header.

Floats are written with 17 significant digits so that a save/load round trip
reproduces every value bit for bit.  Vertex order is never changed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError
from .geometry import Correspondence, NodeSet, PointSet, TriMesh

FLOAT_FMT = "%.17g"
_FORMATS = ("off", "obj", "ply", "xyz")


def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def _rows(path):
    """Yield (line number, stripped line) skipping blanks and # comments."""
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if line:
                yield lineno, line


def _floats(tokens, path, lineno, n=3):
    if len(tokens) < n:
        raise ParseError(f"expected {n} numbers, got {len(tokens)}", path, lineno)
    try:
        return [float(t) for t in tokens[:n]]
    except ValueError as exc:
        raise ParseError(f"bad number ({exc})", path, lineno) from None


def _ints(tokens, path, lineno):
    try:
        return [int(t) for t in tokens]
    except ValueError as exc:
        raise ParseError(f"bad integer ({exc})", path, lineno) from None


def _fan(poly):
    return [(poly[0], poly[k], poly[k + 1]) for k in range(1, len(poly) - 1)]


def _check_faces(faces, n, path, lines):
    for face, lineno in zip(faces, lines):
        for idx in face:
            if idx < 0 or idx >= n:
                raise ParseError("face index out of range", path, lineno)


def _read_off(path):
    rows = _rows(path)
    try:
        lineno, line = next(rows)
    except StopIteration:
        raise ParseError("empty file", path) from None
    tokens = line.split()
    if tokens[0].upper().endswith("OFF"):
        tokens = tokens[1:]
        if not tokens:
            try:
                lineno, line = next(rows)
            except StopIteration:
                raise ParseError("missing counts line", path) from None
            tokens = line.split()
    counts = _ints(tokens[:3], path, lineno)
    if len(counts) < 2:
        raise ParseError("counts line needs vertex and face counts", path, lineno)
    nv, nf = counts[0], counts[1]
    verts, faces, face_lines = [], [], []
    for _ in range(nv):
        try:
            lineno, line = next(rows)
        except StopIteration:
            raise ParseError(f"expected {nv} vertices", path) from None
        verts.append(_floats(line.split(), path, lineno))
    for _ in range(nf):
        try:
            lineno, line = next(rows)
        except StopIteration:
            raise ParseError(f"expected {nf} faces", path) from None
        vals = _ints(line.split(), path, lineno)
        k = vals[0]
        if k < 3 or len(vals) < k + 1:
            raise ParseError("malformed face record", path, lineno)
        for tri in _fan(vals[1:k + 1]):
            faces.append(tri)
            face_lines.append(lineno)
    _check_faces(faces, nv, path, face_lines)
    return verts, faces


def _read_obj(path):
    verts, faces, face_lines = [], [], []
    for lineno, line in _rows(path):
        tokens = line.split()
        if tokens[0] == "v":
            verts.append(_floats(tokens[1:], path, lineno))
        elif tokens[0] == "f":
            poly = []
            for tok in tokens[1:]:
                idx = _ints([tok.split("/")[0]], path, lineno)[0]
                if idx > 0:
                    poly.append(idx - 1)
                elif idx < 0:
                    poly.append(len(verts) + idx)
                else:
                    raise ParseError("face index out of range", path, lineno)
            if len(poly) < 3:
                raise ParseError("face with fewer than 3 vertices", path, lineno)
            for tri in _fan(poly):
                faces.append(tri)
                face_lines.append(lineno)
    _check_faces(faces, len(verts), path, face_lines)
    return verts, faces


def _read_ply(path):
    rows = _rows(path)
    try:
        lineno, line = next(rows)
    except StopIteration:
        raise ParseError("empty file", path) from None
    if line != "ply":
        raise ParseError("missing 'ply' magic", path, lineno)
    elements = []  # (name, count, [property names])
    for lineno, line in rows:
        tokens = line.split()
        if tokens[0] == "format":
            if tokens[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", path, lineno)
        elif tokens[0] == "element":
            elements.append((tokens[1], _ints([tokens[2]], path, lineno)[0], []))
        elif tokens[0] == "property":
            if not elements:
                raise ParseError("property before element", path, lineno)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            break
        elif tokens[0] in ("comment", "obj_info"):
            continue
    else:
        raise ParseError("missing end_header", path)
    verts, labels, faces, face_lines = [], [], [], []
    for name, count, props in elements:
        for _ in range(count):
            try:
                lineno, line = next(rows)
            except StopIteration:
                raise ParseError(f"expected {count} '{name}' records", path) from None
            tokens = line.split()
            if name == "vertex":
                try:
                    ix = [props.index(c) for c in "xyz"]
                except ValueError:
                    raise ParseError("vertex element lacks x/y/z", path, lineno) from None
                if len(tokens) < len(props):
                    raise ParseError("short vertex record", path, lineno)
                verts.append(_floats([tokens[i] for i in ix], path, lineno))
                if "label" in props:
                    labels.append(_ints([tokens[props.index("label")]], path, lineno)[0])
            elif name == "face":
                vals = _ints(tokens, path, lineno)
                k = vals[0]
                if k < 3 or len(vals) < k + 1:
                    raise ParseError("malformed face record", path, lineno)
                for tri in _fan(vals[1:k + 1]):
                    faces.append(tri)
                    face_lines.append(lineno)
    _check_faces(faces, len(verts), path, face_lines)
    return verts, faces, (labels or None)


def _read_xyz(path):
    return [_floats(line.split(), path, lineno) for lineno, line in _rows(path)]


def _detect(path, fmt):
    if fmt != "auto":
        if fmt not in _FORMATS:
            raise DataError(f"unknown format {fmt!r}")
        return fmt
    ext = Path(path).suffix.lower().lstrip(".")
    if ext not in _FORMATS:
        raise DataError(f"cannot infer format from extension {ext!r}")
    return ext


def labels_path(path) -> str:
    return str(path) + ".labels"


def load_labels(path) -> np.ndarray:
    vals = []
    for lineno, line in _rows(path):
        vals.append(_ints(line.split()[:1], path, lineno)[0])
    return np.asarray(vals, dtype=np.int64)


def load_shape(path, fmt: str = "auto", labels="auto"):
    """Load a mesh or point set.

    Returns a :class:`TriMesh` when the file defines faces, otherwise a
    :class:`PointSet`.  ``labels`` may be an explicit sidecar path, ``None``
    to ignore labels, or ``"auto"`` to pick up ``<path>.labels`` if present.
    """
    path = str(path)
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    kind = _detect(path, fmt)
    lab = None
    if kind == "off":
        verts, faces = _read_off(path)
    elif kind == "obj":
        verts, faces = _read_obj(path)
    elif kind == "ply":
        verts, faces, lab = _read_ply(path)
    else:
        verts, faces = _read_xyz(path), []
    if not verts:
        raise ParseError("empty geometry", path)
    if labels == "auto":
        labels = labels_path(path) if os.path.exists(labels_path(path)) else None
    if labels is not None:
        lab = load_labels(labels)
    verts = np.asarray(verts, dtype=np.float64)
    if faces:
        return TriMesh(verts, np.asarray(faces, dtype=np.int64), lab)
    return PointSet(verts, lab)


def save_shape(shape, path, fmt: str = "auto") -> None:
    """Write a TriMesh or PointSet; labels go to the ``.labels`` sidecar."""
    path = str(path)
    kind = _detect(path, fmt)
    pts = shape.points
    faces = shape.faces if isinstance(shape, TriMesh) else np.zeros((0, 3), np.int64)
    vlines = [" ".join(_fmt(c) for c in p) for p in pts]
    flines = [" ".join(str(int(i)) for i in f) for f in faces]
    if kind == "off":
        out = ["OFF", f"{len(pts)} {len(faces)} 0"]
        out += vlines
        out += ["3 " + f for f in flines]
    elif kind == "obj":
        out = ["v " + v for v in vlines]
        out += ["f " + " ".join(str(int(i) + 1) for i in f) for f in faces]
    elif kind == "ply":
        out = ["ply", "format ascii 1.0", f"element vertex {len(pts)}",
               "property double x", "property double y", "property double z",
               f"element face {len(faces)}", "property list uchar int vertex_indices",
               "end_header"]
        out += vlines
        out += ["3 " + f for f in flines]
    else:
        if len(faces):
            raise DataError("XYZ cannot store faces")
        out = vlines
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
    if shape.labels is not None:
        with open(labels_path(path), "w", encoding="utf-8") as fh:
            fh.write("\n".join(str(int(v)) for v in shape.labels) + "\n")


# --------------------------------------------------------------------------
# artifacts


def save_nodes(nodes: NodeSet, path) -> None:
    has_labels = nodes.labels is not None
    lines = ["# mlsfield nodes: x y z radius [label]",
             f"K {nodes.K} labels {int(has_labels)}"]
    for i in range(nodes.K):
        row = [_fmt(c) for c in nodes.positions[i]] + [_fmt(nodes.radii[i])]
        if has_labels:
            row.append(str(int(nodes.labels[i])))
        lines.append(" ".join(row))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _read_header(rows, path, key):
    try:
        lineno, line = next(rows)
    except StopIteration:
        raise ParseError("missing header", path) from None
    tokens = line.split()
    if tokens[0] != key or len(tokens) < 2:
        raise ParseError(f"expected header '{key} <count>'", path, lineno)
    return lineno, tokens


def load_nodes(path) -> NodeSet:
    rows = _rows(path)
    lineno, tokens = _read_header(rows, path, "K")
    k = _ints([tokens[1]], path, lineno)[0]
    has_labels = len(tokens) >= 4 and tokens[2] == "labels" and tokens[3] == "1"
    pos, rad, lab = [], [], []
    for lineno, line in rows:
        toks = line.split()
        vals = _floats(toks, path, lineno, 4)
        pos.append(vals[:3])
        rad.append(vals[3])
        if has_labels:
            if len(toks) < 5:
                raise ParseError("missing node label", path, lineno)
            lab.append(_ints([toks[4]], path, lineno)[0])
    if len(pos) != k:
        raise ParseError(f"header says {k} nodes, found {len(pos)}", path)
    return NodeSet(np.asarray(pos), np.asarray(rad), np.asarray(lab) if has_labels else None)


def save_params(U, path) -> None:
    U = np.asarray(U, dtype=np.float64).reshape(-1, 3)
    lines = ["# mlsfield params: ux uy uz", f"K {U.shape[0]}"]
    lines += [" ".join(_fmt(c) for c in row) for row in U]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> np.ndarray:
    rows = _rows(path)
    lineno, tokens = _read_header(rows, path, "K")
    k = _ints([tokens[1]], path, lineno)[0]
    U = [_floats(line.split(), path, lineno) for lineno, line in rows]
    if len(U) != k:
        raise ParseError(f"header says {k} rows, found {len(U)}", path)
    return np.asarray(U, dtype=np.float64).reshape(k, 3)


def save_pairs(pairs, path, errors=None) -> None:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    lines = []
    for n, (s, t) in enumerate(pairs):
        line = f"{int(s)} {int(t)}"
        if errors is not None:
            line += " " + _fmt(errors[n])
        lines.append(line)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_pairs(path):
    """Read a ``.corr`` file as ``(pairs, errors)``; errors is None if absent."""
    pairs, errors = [], []
    for lineno, line in _rows(path):
        toks = line.split()
        if len(toks) < 2:
            raise ParseError("expected 'source target'", path, lineno)
        pairs.append(_ints(toks[:2], path, lineno))
        if len(toks) >= 3:
            errors.append(_floats(toks[2:3], path, lineno, 1)[0])
    if errors and len(errors) != len(pairs):
        raise ParseError("error column present on some lines only", path)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if np.any(pairs < 0):
        raise ParseError("negative index", path)
    return pairs, (np.asarray(errors) if errors else None)


def load_correspondence(path) -> Correspondence:
    pairs, errors = load_pairs(path)
    if not np.array_equal(pairs[:, 0], np.arange(len(pairs))):
        raise DataError(f"{path}: source column must be 0..n-1 for a dense correspondence")
    return Correspondence(pairs[:, 1], errors)


def save_artifact(obj, path) -> None:
    """Persist any artifact kind, dispatching on its type.

    Raw ``(K, 3)`` arrays are treated as deformation parameters.
    """
    if isinstance(obj, NodeSet):
        save_nodes(obj, path)
    elif isinstance(obj, Correspondence):
        pairs = np.stack([obj.source, obj.target], axis=1)
        save_pairs(pairs, path, obj.errors)
    elif isinstance(obj, (TriMesh, PointSet)):
        save_shape(obj, path)
    elif isinstance(obj, np.ndarray):
        save_params(obj, path)
    else:
        raise TypeError(f"don't know how to save {type(obj).__name__}")


def load_artifact(path):
    ext = Path(path).suffix.lower()
    if ext == ".nodes":
        return load_nodes(path)
    if ext == ".defo":
        return load_params(path)
    if ext == ".corr":
        return load_correspondence(path)
    return load_shape(path)


# --------------------------------------------------------------------------
# normalization


@dataclass(frozen=True)
class NormalizationRecord:
    """Similarity applied by normalization: ``x' = (x - center) * scale``."""

    center: tuple
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise DataError("normalization scale must be positive")

    def apply(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) * self.scale

    def invert(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) / self.scale + np.asarray(self.center)


def _with_points(shape, pts):
    if isinstance(shape, TriMesh):
        return TriMesh(pts, shape.faces, shape.labels)
    return PointSet(pts, shape.labels)


def normalize_unit_sphere(shape):
    """Center at the vertex centroid and scale the farthest vertex to norm 1."""
    pts = shape.points
    center = pts.mean(axis=0)
    radius = np.linalg.norm(pts - center, axis=1).max()
    if not radius > 1e-12 * max(1.0, float(np.abs(center).max())):
        raise DataError("all points coincide; scale undefined")
    record = NormalizationRecord(tuple(float(c) for c in center), float(1.0 / radius))
    return _with_points(shape, record.apply(pts)), record


def normalize_unit_cube(shape):
    """Center the bounding box and scale its longest side to 1.

    The result lies in ``[-0.5, 0.5]^3``, the domain expected by
    :func:`mlsfield.sampling.add_auxiliary_cube_nodes`.
    """
    pts = shape.points
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    extent = float((hi - lo).max())
    if not extent > 0:
        raise DataError("all points coincide; scale undefined")
    center = 0.5 * (lo + hi)
    record = NormalizationRecord(tuple(float(c) for c in center), 1.0 / extent)
    return _with_points(shape, record.apply(pts)), record
