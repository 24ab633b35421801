import csv
import json
import subprocess
import sys

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from mlsfield import io, shapes
from mlsfield.cli import run
from mlsfield.geometry import NodeSet, PointSet, TriMesh


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    mesh, _ = io.normalize_unit_sphere(shapes.ellipsoid(12, 14))
    io.save_shape(mesh, str(d / "t.off"))
    Y = shapes.bend(mesh.vertices, 10.0)
    io.save_shape(TriMesh(Y, mesh.faces), str(d / "y.off"))
    idx = np.arange(0, len(mesh), 9)
    io.save_pairs(np.c_[idx, idx], str(d / "kp.corr"))
    io.save_pairs(np.c_[np.arange(len(mesh)), np.arange(len(mesh))], str(d / "gt.corr"))
    assert run(["sample-nodes", "--template", str(d / "t.off"), "--out", str(d / "n.nodes")]) == 0
    return d


def p(ws, name):
    return str(ws / name)


def test_sample_nodes_writes_nodes_and_sidecar(ws):
    nodes = io.load_nodes(p(ws, "n.nodes"))
    assert nodes.K >= 4
    side = json.loads((ws / "n.nodes.config.json").read_text())
    assert side["subcommand"] == "sample-nodes"
    assert side["args"]["radius_fraction"] == 0.2 and side["args"]["seed"] == 0


def test_validate_reports_and_passes(ws, capsys):
    code = run(["validate", "--nodes", p(ws, "n.nodes"), "--points", p(ws, "t.off"),
                "--out", p(ws, "v.json")])
    out = capsys.readouterr().out
    assert code == 0
    for key in ("partition_of_unity_max_dev", "linear_reproduction_max_err", "fd_gradient_max_rel_err"):
        assert key in out
    rep = json.loads((ws / "v.json").read_text())
    assert rep["partition_of_unity_max_dev"] <= 1e-9
    assert rep["linear_reproduction_max_err"] <= 1e-7
    assert rep["fd_gradient_max_rel_err"] <= 1e-5


def fit_argv(ws, out, *extra):
    return ["fit", "--mode", "sparse", "--template", p(ws, "t.off"), "--nodes", p(ws, "n.nodes"),
            "--keypoints", p(ws, "kp.corr"), "--target", p(ws, "y.off"), "--out", p(ws, out),
            "--steps", "60", *extra]


def test_fit_writes_params_and_trace(ws):
    assert run(fit_argv(ws, "u.defo")) == 0
    U = io.load_params(p(ws, "u.defo"))
    assert U.shape == (io.load_nodes(p(ws, "n.nodes")).K, 3)
    with open(ws / "u.defo.trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["step", "total"]
    assert len(rows) == 61
    assert float(rows[-1][1]) < float(rows[1][1])


def test_fit_is_byte_identical_and_reproducible_from_sidecar(ws):
    assert run(fit_argv(ws, "a.defo")) == 0
    assert run(fit_argv(ws, "b.defo")) == 0
    assert (ws / "a.defo").read_bytes() == (ws / "b.defo").read_bytes()
    assert run(["--config", p(ws, "a.defo.config.json"), "--out", p(ws, "c.defo")]) == 0
    assert (ws / "a.defo").read_bytes() == (ws / "c.defo").read_bytes()
    assert (ws / "a.defo.trace.csv").read_bytes() == (ws / "c.defo.trace.csv").read_bytes()


def test_flags_override_config(ws):
    cfg = ws / "cfg.json"
    cfg.write_text(json.dumps({"subcommand": "fit", "args": {"steps": 5}}))
    assert run(["--config", str(cfg)] + fit_argv(ws, "o.defo")[0:-2]) == 0
    assert len((ws / "o.defo.trace.csv").read_text().splitlines()) == 6
    assert run(fit_argv(ws, "o2.defo")[:-2] + ["--config", str(cfg), "--steps", "3"]) == 0
    side = json.loads((ws / "o2.defo.config.json").read_text())
    assert side["args"]["steps"] == 3


def test_deform_zero_params_is_bitwise_identity(ws):
    K = io.load_nodes(p(ws, "n.nodes")).K
    io.save_params(np.zeros((K, 3)), p(ws, "zero.defo"))
    assert run(["deform", "--template", p(ws, "t.off"), "--nodes", p(ws, "n.nodes"),
                "--params", p(ws, "zero.defo"), "--out", p(ws, "d0.off")]) == 0
    a, b = io.load_shape(p(ws, "t.off")), io.load_shape(p(ws, "d0.off"))
    assert_array_equal(a.vertices, b.vertices)
    assert a.vertices.tobytes() == b.vertices.tobytes()


def test_correspond_and_eval(ws, capsys):
    assert run(["correspond", "--template", p(ws, "t.off"), "--nodes", p(ws, "n.nodes"),
                "--target", p(ws, "y.off"), "--keypoints", p(ws, "kp.corr"),
                "--out", p(ws, "pi.corr"), "--steps", "300"]) == 0
    assert run(["eval", "--pred", p(ws, "pi.corr"), "--gt", p(ws, "gt.corr"), "--target", p(ws, "y.off"),
                "--curve", p(ws, "curve.csv"), "--out", p(ws, "err.corr")]) == 0
    assert "mean geodesic error" in capsys.readouterr().out
    with open(ws / "curve.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["threshold", "fraction_below"]
    fr = [float(r[1]) for r in rows[1:]]
    assert fr == sorted(fr)
    err = io.load_correspondence(p(ws, "err.corr"))
    assert err.errors is not None and len(err) == len(io.load_shape(p(ws, "t.off")))


def test_correspond_compose(ws):
    assert run(["correspond", "--method", "compose", "--dx", p(ws, "t.off"), "--x", p(ws, "t.off"),
                "--dy", p(ws, "y.off"), "--y", p(ws, "y.off"), "--out", p(ws, "pc.corr")]) == 0
    pi = io.load_correspondence(p(ws, "pc.corr"))
    assert_array_equal(pi.target, np.arange(len(pi)))
    assert run(["correspond", "--method", "compose", "--dx", p(ws, "t.off"), "--out", p(ws, "x.corr")]) == 1


def test_interpolate_frames(ws):
    K = io.load_nodes(p(ws, "n.nodes")).K
    io.save_params(np.zeros((K, 3)), p(ws, "ia.defo"))
    io.save_params(np.full((K, 3), 0.1), p(ws, "ib.defo"))
    assert run(["interpolate", "--nodes", p(ws, "n.nodes"), "--params-a", p(ws, "ia.defo"),
                "--params-b", p(ws, "ib.defo"), "--steps", "4", "--template", p(ws, "t.off"),
                "--out", p(ws, "frame_")]) == 0
    assert_array_equal(io.load_params(p(ws, "frame_003.defo")), io.load_params(p(ws, "ib.defo")))
    assert (ws / "frame_002.off").exists()
    lines = (ws / "frame_distortion.csv").read_text().splitlines()
    assert len(lines) == 5


def test_precompute_and_rbf_fit(ws):
    assert run(["precompute", "--nodes", p(ws, "n.nodes"), "--points", p(ws, "t.off"),
                "--out", p(ws, "tab.npz")]) == 0
    assert (ws / "tab.npz").exists()
    assert run(["fit", "--mode", "chamfer", "--template", p(ws, "t.off"), "--nodes", p(ws, "n.nodes"),
                "--target", p(ws, "y.off"), "--out", p(ws, "rbf.defo"), "--steps", "5",
                "--field-model", "rbf"]) == 0


def test_exit_codes(ws, capsys):
    assert run([]) == 1
    assert run(["fit", "--bogus"]) == 1
    assert run(["frobnicate"]) == 1
    assert run(fit_argv(ws, "m.defo")[:1] + ["--mode", "sparse", "--template", p(ws, "t.off"),
               "--nodes", p(ws, "n.nodes"), "--target", p(ws, "y.off"), "--out", p(ws, "m.defo")]) == 1
    assert run(["deform", "--template", p(ws, "missing.off"), "--nodes", p(ws, "n.nodes"),
                "--params", p(ws, "u.defo"), "--out", p(ws, "x.off")]) == 2
    (ws / "bad.xyz").write_text("0 0 0\n1 zz 0\n")
    assert run(["precompute", "--nodes", p(ws, "n.nodes"), "--points", p(ws, "bad.xyz"),
                "--out", p(ws, "bad.npz")]) == 2
    assert ":2:" in capsys.readouterr().err
    io.save_shape(PointSet([[9.0, 9, 9]]), p(ws, "far.xyz"))
    assert run(["precompute", "--nodes", p(ws, "n.nodes"), "--points", p(ws, "far.xyz"),
                "--out", p(ws, "far.npz")]) == 3
    assert "CoverageError" in capsys.readouterr().err


def test_validate_failure_exit_code(ws, capsys):
    # a huge finite-difference step cannot meet the 1e-5 gradient tolerance
    code = run(["validate", "--nodes", p(ws, "n.nodes"), "--points", p(ws, "t.off"),
                "--fd-step", "0.002"])
    assert code == 3
    assert "FAIL" in capsys.readouterr().out


def test_module_entry_point_help():
    out = subprocess.run([sys.executable, "-m", "mlsfield", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("sample-nodes", "precompute", "fit", "deform", "correspond", "interpolate", "eval", "validate"):
        assert cmd in out.stdout
