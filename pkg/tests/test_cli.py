import csv
import json

import numpy as np
import pytest

from grr.cli import main, read_points, write_points
from grr.mesh import write_mesh
from grr.meshgen import structured_rectangle


@pytest.fixture
def three_point_inputs(tmp_path):
    write_mesh(structured_rectangle(6), tmp_path / "square.mesh")
    x = np.array([[0.5, 0.5], [0.25, 0.25], [0.75, 0.25]])
    write_points(x, tmp_path / "ref.csv")
    write_points(x + 0.02, tmp_path / "target.csv")
    (tmp_path / "run.cfg").write_text(
        "space.n_lp = 4\nspace.box_lo = (0.0, 0.0)\nspace.box_hi = (1.0, 1.0)\n"
        "method.name = morozov\nmethod.delta = 1e-4\nobjective.kind = exp_jac\n"
    )
    return tmp_path


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_register_writes_artifacts(three_point_inputs):
    d = three_point_inputs
    code = main(["register", "--config", str(d / "run.cfg"), "--mesh", str(d / "square.mesh"),
                 "--ref", str(d / "ref.csv"), "--target", str(d / "target.csv"), "--out", str(d / "out")])
    assert code == 0
    for name in ("deformed.mesh", "mapping.npz", "space.npz", "metrics.csv", "run.json", "config.resolved.cfg"):
        assert (d / "out" / name).exists()
    row = read_rows(d / "out" / "metrics.csv")[0]
    assert float(row["misfit_inf"]) <= 1e-4 * (1 + 1e-6)
    rec = json.loads((d / "out" / "run.json").read_text())
    assert rec["exit_code"] == 0 and len(rec["config_sha256"]) == 64


def test_unknown_config_key_is_input_error(three_point_inputs, capsys):
    d = three_point_inputs
    (d / "bad.cfg").write_text("space.n_lp = 4\nsolver.bogus = 1\n")
    code = main(["register", "--config", str(d / "bad.cfg"), "--mesh", str(d / "square.mesh"),
                 "--ref", str(d / "ref.csv"), "--target", str(d / "target.csv"), "--out", str(d / "o")])
    assert code == 1
    assert "solver.bogus" in capsys.readouterr().err


def test_missing_point_file_is_input_error(tmp_path, capsys):
    code = main(["cpd", "--ref", str(tmp_path / "nope.csv"), "--target", str(tmp_path / "nope.csv"),
                 "--out", str(tmp_path / "aligned.csv")])
    assert code == 1
    assert "not found" in capsys.readouterr().err


def test_cpd_command(tmp_path):
    t = 2 * np.pi * np.arange(30) / 30
    x = np.column_stack([np.cos(t), np.sin(t)])
    write_points(x, tmp_path / "x.csv")
    write_points(x[::-1] + [0.1, 0.0], tmp_path / "y.csv")
    code = main(["cpd", "--ref", str(tmp_path / "x.csv"), "--target", str(tmp_path / "y.csv"),
                 "--out", str(tmp_path / "aligned.csv")])
    assert code in (0, 2)
    assert read_points(tmp_path / "aligned.csv").shape == (30, 2)


def test_pod_command_from_csv(tmp_path, capsys):
    from grr.mapspace import Box, MapSpace

    space = MapSpace(Box((0.0, 0.0), (1.0, 1.0)), 3)
    space.save(tmp_path / "space.npz")
    rng = np.random.default_rng(0)
    U = rng.normal(size=(6, 2)) @ rng.normal(size=(2, space.M))
    np.savetxt(tmp_path / "snap.csv", U, delimiter=",")
    code = main(["pod", "--snapshots", str(tmp_path / "snap.csv"), "--space", str(tmp_path / "space.npz"),
                 "--tol", "1e-8", "--out", str(tmp_path / "basis.npz")])
    assert code == 0
    assert "M=2" in capsys.readouterr().out
    assert (tmp_path / "basis.eigenvalues.csv").exists()


def test_analyze_corner_constant(tmp_path):
    code = main(["analyze", "--corner-constant", "--out", str(tmp_path)])
    assert code == 0
    rows = read_rows(tmp_path / "corner_constant.csv")
    assert len(rows) == 50  # pi/4 already lies on the sweep
    quarter = [r for r in rows if abs(float(r["alpha"]) - np.pi / 4) < 1e-12]
    assert abs(float(quarter[0]["C"]) - 1.0) < 1e-6


def test_analyze_needs_an_action(tmp_path):
    assert main(["analyze", "--out", str(tmp_path)]) == 1
