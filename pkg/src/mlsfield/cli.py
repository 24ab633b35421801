"""Command line interface: ``python -m mlsfield <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every subcommand that writes ``--out`` also writes ``<out>.config.json`` with
the fully resolved arguments; passing that file back via ``--config``
reproduces the run (explicit flags still override it).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict

import numpy as np

from . import correspondence as corr_mod
from . import energies, fitting, io, mls, sampling
from .errors import DataError, NumericalError
from .geometry import Correspondence, TriMesh

logger = logging.getLogger("mlsfield")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p, field_model=False):
    p.add_argument("--config", help="JSON run config (e.g. a previous sidecar)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap for neighbour searches")
    p.add_argument("--singularity-tol", type=float, default=mls.SINGULARITY_TOL)
    if field_model:
        p.add_argument("--field-model", choices=["mls", "rbf"], default="mls")
        p.add_argument("--rbf-c", type=float, default=1.0)
        p.add_argument("--rbf-eps0", type=float, default=50.0)


def _optim(p):
    w = energies.EnergyWeights()
    c = fitting.OptimConfig()
    p.add_argument("--steps", type=int, default=c.max_steps)
    p.add_argument("--lr", type=float, default=c.step_size)
    p.add_argument("--optimizer", choices=["adam", "gd"], default=c.optimizer)
    p.add_argument("--tol", type=float, default=c.tol)
    p.add_argument("--direct", action="store_true",
                   help="closed-form solve when only the keypoint term is active")
    p.add_argument("--init-params", help=".defo file to start from (default zeros)")
    for name, value in asdict(w).items():
        p.add_argument("--" + name.replace("_", "-"), type=float, default=value)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mlsfield", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("sample-nodes", help="place deformation nodes on a template")
    _common(p)
    p.add_argument("--template", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=5000, help="number of candidates")
    p.add_argument("--radius-fraction", type=float, default=sampling.RADIUS_FRACTION)
    p.add_argument("--offset", type=float, default=None,
                   help="candidate jitter (default 2%% of the diameter)")
    p.add_argument("--rejection", choices=["none", "labels", "geodesic"], default="none")
    p.add_argument("--geodesic-fraction", type=float, default=sampling.GEODESIC_FRACTION)
    p.add_argument("--aux-radius", type=float, default=None,
                   help="append 8 unit-cube corner nodes with this radius")

    p = sub.add_parser("precompute", help="precompute shape function tables")
    _common(p)
    p.add_argument("--nodes", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--out", required=True, help=".npz table")

    p = sub.add_parser("fit", help="fit nodal parameters")
    _common(p, field_model=True)
    p.add_argument("--mode", choices=["sparse", "chamfer"], required=True)
    p.add_argument("--template", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--keypoints", help=".corr of (template vertex, target point) pairs")
    p.add_argument("--out", required=True, help=".defo output")
    p.add_argument("--trace", help="CSV energy trace (default <out>.trace.csv)")
    _optim(p)

    p = sub.add_parser("deform", help="apply parameters to a template")
    _common(p, field_model=True)
    p.add_argument("--template", required=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("correspond", help="dense correspondence")
    _common(p, field_model=True)
    p.add_argument("--method", choices=["sparse", "compose"], default="sparse")
    p.add_argument("--template")
    p.add_argument("--nodes")
    p.add_argument("--target")
    p.add_argument("--keypoints")
    p.add_argument("--dx", help="template deformed onto X (compose)")
    p.add_argument("--x", help="shape X (compose)")
    p.add_argument("--dy", help="template deformed onto Y (compose)")
    p.add_argument("--y", help="shape Y (compose)")
    p.add_argument("--out", required=True)
    _optim(p)

    p = sub.add_parser("interpolate", help="blend two parameter sets")
    _common(p, field_model=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--params-a", required=True)
    p.add_argument("--params-b", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--template", help="also write deformed meshes")
    p.add_argument("--out", required=True, help="output prefix")

    p = sub.add_parser("eval", help="geodesic error of a correspondence")
    _common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--target", required=True, help="target mesh")
    p.add_argument("--curve", help="CSV accuracy curve")
    p.add_argument("--out", help="per-point errors as .corr with an error column")

    p = sub.add_parser("validate", help="check MLS consistency and gradients")
    _common(p, field_model=True)
    p.add_argument("--nodes", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--max-fd-points", type=int, default=1000)
    p.add_argument("--out", help="JSON report")
    return parser


# --------------------------------------------------------------------------


def _weights(a):
    return energies.EnergyWeights(**{k: getattr(a, k) for k in asdict(energies.EnergyWeights())})


def _config(a):
    init = None
    if a.init_params:
        init = io.load_params(a.init_params)
    return fitting.OptimConfig(
        max_steps=a.steps, step_size=a.lr, optimizer=a.optimizer, tol=a.tol, seed=a.seed,
        weights=_weights(a), init="provided" if init is not None else "zeros",
        init_params=init, direct=a.direct)


def _rbf_params(a):
    return {"C": a.rbf_c, "eps0": a.rbf_eps0}


def _tables(a, points, nodes):
    return fitting.field_tables(points, nodes, a.field_model, a.singularity_tol, _rbf_params(a))


def _write_trace(fit, path):
    header, rows = fit.trace_rows()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def cmd_sample_nodes(a):
    template = io.load_shape(a.template)
    nodes = sampling.sample_nodes(
        template, a.radius_fraction, a.count, a.offset,
        "none" if a.rejection == "none" else a.rejection,
        a.geodesic_fraction, a.singularity_tol, a.seed)
    if a.aux_radius is not None:
        nodes = sampling.add_auxiliary_cube_nodes(nodes, a.aux_radius)
    io.save_nodes(nodes, a.out)
    print(f"wrote {nodes.K} nodes to {a.out}")


def cmd_precompute(a):
    nodes = io.load_nodes(a.nodes)
    pts = io.load_shape(a.points)
    table = mls.precompute_table(pts, nodes, a.singularity_tol)
    table.save(a.out)
    print(f"table over {len(table)} points, {table.phi.nnz} nonzeros, "
          f"key {mls.table_key(pts, nodes, a.singularity_tol)[:16]}")


def cmd_fit(a):
    template = io.load_shape(a.template)
    nodes = io.load_nodes(a.nodes)
    target = io.load_shape(a.target)
    config = _config(a)
    table, node_table = _tables(a, template.points, nodes)
    if a.mode == "sparse":
        if not a.keypoints:
            raise UsageError("--keypoints is required for --mode sparse")
        pairs, _ = io.load_pairs(a.keypoints)
        if pairs[:, 0].max() >= len(template) or pairs[:, 1].max() >= len(target):
            raise DataError("keypoint index out of range")
        fit = fitting.fit_sparse(table.subset(pairs[:, 0]), node_table,
                                 target.points[pairs[:, 1]], config)
    else:
        fit = fitting.fit_chamfer(table, node_table, target.points, config)
    io.save_params(fit.params, a.out)
    _write_trace(fit, a.trace or a.out + ".trace.csv")
    print(f"{fit.steps} steps, converged={fit.converged}, energy={fit.trace[-1]['total']:.6g}")


def cmd_deform(a):
    template = io.load_shape(a.template)
    nodes = io.load_nodes(a.nodes)
    U = io.load_params(a.params)
    table, _ = _tables(a, template.points, nodes)
    D = table.mapping(U)
    if isinstance(template, TriMesh):
        out = TriMesh(D, template.faces, template.labels)
    else:
        out = type(template)(D, template.labels)
    io.save_shape(out, a.out)
    print(f"wrote {len(D)} deformed points to {a.out}")


def cmd_correspond(a):
    if a.method == "compose":
        missing = [n for n in ("dx", "x", "dy", "y") if getattr(a, n) is None]
        if missing:
            raise UsageError("compose needs " + ", ".join("--" + m for m in missing))
        pi = corr_mod.compose_pi(*(io.load_shape(getattr(a, n)).points
                                   for n in ("dx", "x", "dy", "y")))
    else:
        missing = [n for n in ("template", "nodes", "target", "keypoints") if getattr(a, n) is None]
        if missing:
            raise UsageError("sparse needs " + ", ".join("--" + m for m in missing))
        pairs, _ = io.load_pairs(a.keypoints)
        pi = fitting.sparse_to_dense(io.load_shape(a.template), io.load_nodes(a.nodes),
                                     io.load_shape(a.target), pairs, _config(a), a.field_model)
    io.save_artifact(pi, a.out)
    print(f"wrote {len(pi)} correspondences to {a.out}")


def cmd_interpolate(a):
    nodes = io.load_nodes(a.nodes)
    Ua, Ub = io.load_params(a.params_a), io.load_params(a.params_b)
    frames = fitting.interpolate_params(Ua, Ub, a.steps)
    template = io.load_shape(a.template) if a.template else None
    if template is not None:
        table, node_table = _tables(a, template.points, nodes)
    elif a.field_model == "mls":
        node_table = mls.precompute_node_table(nodes, a.singularity_tol)
    else:
        node_table = _tables(a, nodes.positions, nodes)[1]
    distortion = fitting.distortion_trace(node_table, frames)
    with open(a.out + "distortion.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["frame", "alpha", "arap"])
        for k, d in enumerate(distortion):
            w.writerow([k, repr(k / (a.steps - 1)), repr(float(d))])
    for k, U in enumerate(frames):
        io.save_params(U, f"{a.out}{k:03d}.defo")
        if template is not None:
            D = table.mapping(U)
            io.save_shape(TriMesh(D, template.faces) if isinstance(template, TriMesh)
                          else type(template)(D), f"{a.out}{k:03d}.off"
                          if isinstance(template, TriMesh) else f"{a.out}{k:03d}.xyz")
    print(f"wrote {len(frames)} frames with prefix {a.out}")


def cmd_eval(a):
    pred, gt = io.load_correspondence(a.pred), io.load_correspondence(a.gt)
    mesh = io.load_shape(a.target)
    if not isinstance(mesh, TriMesh):
        raise DataError("eval needs a target mesh with faces")
    rep = corr_mod.geodesic_error(pred, gt, mesh)
    if a.curve:
        with open(a.curve, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "fraction_below"])
            for t, f in zip(rep.thresholds, rep.accuracy):
                w.writerow([repr(float(t)), repr(float(f))])
    if a.out:
        io.save_artifact(Correspondence(pred.target, rep.errors), a.out)
    print(f"mean geodesic error {rep.mean:.6g} over {len(pred)} points "
          f"({rep.n_disconnected} disconnected)")


def validate_field(points, nodes, field_model="mls", singularity_tol=mls.SINGULARITY_TOL,
                   h=1e-5, max_fd_points=1000, rbf_params=None, seed=0):
    """Consistency and finite-difference report for a node set over points.

    FD checks use points at least 1e-3 away from every support boundary and
    node (where the weight is not smooth); the relative error per point is
    the max abs difference over the gradient block divided by its max abs
    value.
    """
    X = io.load_shape(points).points if isinstance(points, str) else np.asarray(points, float)
    table, _ = fitting.field_tables(X, nodes, field_model, singularity_tol, rbf_params)
    Phi = table.phi
    pou = float(np.abs(np.asarray(Phi.sum(axis=1)).ravel() - 1).max())
    lin = float(np.abs(Phi @ nodes.positions - X).max())
    d = np.sqrt(((X[:, None, :] - nodes.positions[None]) ** 2).sum(-1))
    if field_model == "mls":
        margin = np.abs(d - nodes.radii[None]).min(axis=1)
        ok = (margin >= 1e-3) & (d.min(axis=1) >= 1e-3)
    else:
        ok = np.ones(len(X), dtype=bool)
    cand = np.flatnonzero(ok)
    rng = np.random.default_rng(seed)
    if len(cand) > max_fd_points:
        cand = np.sort(rng.choice(cand, max_fd_points, replace=False))
    G = np.stack([dd[cand].toarray() for dd in table.dphi], axis=-1)
    F = np.zeros_like(G)
    for b in range(3):
        e = np.zeros(3)
        e[b] = h
        tp, _ = fitting.field_tables(X[cand] + e, nodes, field_model, singularity_tol, rbf_params)
        tm, _ = fitting.field_tables(X[cand] - e, nodes, field_model, singularity_tol, rbf_params)
        F[..., b] = (tp.phi.toarray() - tm.phi.toarray()) / (2 * h)
    scale = np.abs(F).reshape(len(cand), -1).max(axis=1)
    rel = np.abs(G - F).reshape(len(cand), -1).max(axis=1) / np.maximum(scale, 1e-300)
    fd = float(rel.max()) if len(cand) else 0.0
    report = {"partition_of_unity_max_dev": pou, "linear_reproduction_max_err": lin,
              "fd_gradient_max_rel_err": fd, "fd_points": int(len(cand)),
              "points": int(len(X))}
    tol = {"partition_of_unity_max_dev": 1e-9, "linear_reproduction_max_err": 1e-7,
           "fd_gradient_max_rel_err": 1e-5}
    if field_model == "rbf":
        # interpolation does not reproduce constants or linear fields
        tol = {"fd_gradient_max_rel_err": 1e-5}
    report["passed"] = all(report[k] <= v for k, v in tol.items())
    return report


def cmd_validate(a):
    nodes = io.load_nodes(a.nodes)
    pts = io.load_shape(a.points).points
    rep = validate_field(pts, nodes, a.field_model, a.singularity_tol, a.fd_step,
                         a.max_fd_points, _rbf_params(a), a.seed)
    for k in ("partition_of_unity_max_dev", "linear_reproduction_max_err",
              "fd_gradient_max_rel_err"):
        print(f"{k}: {rep[k]:.3e}")
    print("PASS" if rep["passed"] else "FAIL")
    if a.out:
        with open(a.out, "w", encoding="utf-8") as fh:
            json.dump(rep, fh, indent=2)
    if not rep["passed"]:
        raise NumericalError("validation tolerances exceeded")


COMMANDS = {
    "sample-nodes": cmd_sample_nodes, "precompute": cmd_precompute, "fit": cmd_fit,
    "deform": cmd_deform, "correspond": cmd_correspond, "interpolate": cmd_interpolate,
    "eval": cmd_eval, "validate": cmd_validate,
}


def _resolve(argv):
    """Parse argv, using a --config file's values as defaults."""
    parser = build_parser()
    cfg = None
    if "--config" in argv:
        k = argv.index("--config")
        if k + 1 >= len(argv):
            raise UsageError("--config needs a path")
        with open(argv[k + 1], encoding="utf-8") as fh:
            cfg = json.load(fh)
        argv = argv[:k] + argv[k + 2:]
        if not any(a in COMMANDS for a in argv):
            argv = [cfg["subcommand"]] + argv
    if cfg is not None:
        sub = parser._subparsers._group_actions[0].choices[cfg["subcommand"]]
        known = {act.dest for act in sub._actions}
        sub.set_defaults(**{k: v for k, v in cfg["args"].items() if k in known})
        for act in sub._actions:
            if act.dest in cfg["args"]:
                act.required = False
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a subcommand is required")
    return args


def _sidecar(args):
    out = getattr(args, "out", None)
    if not out:
        return
    resolved = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    with open(out + ".config.json", "w", encoding="utf-8") as fh:
        json.dump({"subcommand": args.command, "args": resolved}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _resolve(argv)
        COMMANDS[args.command](args)
        _sidecar(args)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    sys.exit(run())
