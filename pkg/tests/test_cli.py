import csv
import json

import numpy as np
import pytest

from fenni.cli import EXIT_CONFIG, EXIT_IO, EXIT_OK, STUDY_COLUMNS, main
from fenni.mesh import generate_bar_1d, generate_plate_with_hole
from fenni.model import FenniModel
from fenni.oracle import Bar1D, error_norms_1d
from fenni.meshio import read_vtk, write_gmsh


def write_config(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_solve_bar(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"problem": "bar1d", "mesh": {"n_nodes": 41}, "mode": "fixed",
                                  "integration": {"kind": "gauss", "n": 3}, "optimizer": {"name": "lbfgs"}})
    assert main(["solve", "--config", cfg, "--output", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    # a P1 solve cannot beat the interpolant of the exact field on the same nodes
    bar = Bar1D()
    interp = FenniModel(generate_bar_1d(bar.L, 41))
    interp.params.U[:, 0] = bar.analytic_u(interp.params.X[:, 0])
    e_interp = error_norms_1d(interp, interp.gradient, bar)["e_u"]
    assert report["errors"]["e_u"] == pytest.approx(e_interp, rel=1e-3)
    assert report["errors"]["e_u"] < 0.03
    assert report["final_nodes"] == report["initial_nodes"] == 41
    with open(out / "solution.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1000 and set(rows[0]) == {"x", "u", "du_dx", "u_a", "du_a"}
    with open(out / "loss_history.csv") as fh:
        hist = list(csv.DictReader(fh))
    assert len(hist) == report["iterations"]
    assert "e_u=" in capsys.readouterr().out


def test_solve_plate_writes_vtk(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, {"problem": "plate2d", "mesh": {"refine_level": 0}, "integration": {"n": 1},
                                  "params": {"reference_level": 1}, "stop": {"max_iter": 200}})
    assert main(["solve", "--config", cfg, "--output", str(out)]) == EXIT_OK
    mesh, pd, cd = read_vtk(out / "solution.vtk")
    assert pd["displacement"].shape == (mesh.n_nodes, 2)
    assert np.all(cd["von_mises"] >= 0)
    report = json.loads((out / "report.json").read_text())
    assert {"e_u", "e_vm", "vm_max_ratio"} <= set(report["errors"])


def test_plate_with_trapezoid_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, {"problem": "plate2d", "integration": {"kind": "trapezoid", "n": 4}})
    assert main(["solve", "--config", cfg]) == EXIT_CONFIG
    assert "trapezoid" in capsys.readouterr().err


def test_missing_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_IO


def test_empty_study_matrix(tmp_path):
    cfg = write_config(tmp_path, {"matrix": {}})
    assert main(["study", "--config", cfg]) == EXIT_CONFIG


def test_study_table(tmp_path):
    out = tmp_path / "study"
    cfg = write_config(tmp_path, {"base": {"problem": "bar1d"}, "matrix": {"mesh.n_nodes": [10, 21, 41]}})
    assert main(["study", "--config", cfg, "--output", str(out)]) == EXIT_OK
    with open(out / "study.csv") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == STUDY_COLUMNS
        rows = list(reader)
    assert [int(r["size"]) for r in rows] == [10, 21, 41]
    e = [float(r["e_u"]) for r in rows]
    assert e[0] > e[1] > e[2]
    assert all(r["status"] == "converged" for r in rows)


def test_inspect(tmp_path, capsys):
    p = tmp_path / "plate.msh"
    mesh = generate_plate_with_hole()
    write_gmsh(mesh, p)
    assert main(["mesh", "--inspect", str(p)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["nodes"] == mesh.n_nodes


def test_inspect_malformed(tmp_path):
    p = tmp_path / "bad.msh"
    p.write_text("$MeshFormat\n2.2 0 8\n")
    assert main(["mesh", "--inspect", str(p)]) == EXIT_IO


def test_validate_analytic(capsys):
    assert main(["validate-analytic", "--nodes", "4001"]) == EXIT_OK
    assert "pass" in capsys.readouterr().out


def test_unknown_command():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
