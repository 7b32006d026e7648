import csv
import json

import pytest
import scipy.io

from doubleforms.cli import run


def report(tmp_path, argv, name="r.json"):
    out = tmp_path / name
    code = run(argv + ["--out", str(out)])
    return code, json.loads(out.read_text()), out


def test_algebra_check_passes(tmp_path):
    code, rep, out = report(tmp_path, ["algebra-check", "--d", "2", "--samples", "20"])
    assert code == 0 and rep["pass"]
    assert rep["schema_version"] == 1
    assert (tmp_path / "r.json.timings.json").exists()
    assert "seconds" not in out.read_text()


def test_symbol_check_expectations(tmp_path):
    code, rep, _ = report(tmp_path, ["symbol-check", "--chain", "bianchi", "--m", "1", "--level", "0",
                                     "--samples", "20"])
    assert code == 0 and rep["results"]["verdict"]["elliptic"]
    code, rep, _ = report(tmp_path, ["symbol-check", "--chain", "broken", "--m", "1", "--level", "1",
                                     "--samples", "20", "--expect", "not-elliptic"])
    assert code == 0 and not rep["results"]["verdict"]["elliptic"]
    assert rep["results"]["verdict"]["witnesses"]


def test_unknown_config_key_is_named(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('command = "cohomology"\n[domain]\nn = 8\nwidth = 3\n')
    assert run(["cohomology", "--config", str(cfg)]) == 2
    assert "domain.width" in capsys.readouterr().err
    cfg.write_text('sede = 3\n')
    assert run(["cohomology", "--config", str(cfg)]) == 2
    assert "'sede'" in capsys.readouterr().err


def test_malformed_config_and_bad_tolerance(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text("{not json")
    assert run(["algebra-check", "--config", str(cfg)]) == 2
    assert run(["algebra-check", "--tol", "nilpotency=-1"]) == 2
    assert run(["algebra-check", "--tol", "bogus=1"]) == 2
    assert "bogus" in capsys.readouterr().err


def test_invalid_domain_is_a_config_error(capsys):
    assert run(["correct", "--chain", "de_rham", "--n", "4"]) == 2
    assert run(["assemble", "--op", "d", "--bidegree", "0,0", "--metric", "diagonal",
                "--diag", "1,x1-0.5", "--n", "8"]) == 2
    assert "node" in capsys.readouterr().err


def test_tolerance_provenance(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[tolerances]\nnilpotency = 1e-9\n[domain]\nn = 8\n')
    code, rep, _ = report(tmp_path, ["correct", "--config", str(cfg), "--chain", "de_rham",
                                     "--tol", "recursion=1e-9"])
    assert code == 0
    tol = rep["tolerances"]
    assert tol["nilpotency"] == {"source": "config", "value": 1e-9}
    assert tol["recursion"] == {"source": "override", "value": 1e-9}
    assert tol["bvp"]["source"] == "default"


def test_failed_check_exits_one(tmp_path):
    # a Green sweep with an impossible factor window fails its checks
    code, rep, _ = report(tmp_path, ["greens-check", "--op", "d", "--bidegree", "0,0", "--sweep", "n=8,16",
                                     "--chart", "annulus", "--metric", "polar", "--trials", "1",
                                     "--tol", "green_factor_high=1.01", "--tol", "green_factor_low=1.0"])
    assert code == 1 and not rep["pass"]


def test_greens_sweep_csv(tmp_path):
    table = tmp_path / "g.csv"
    code, rep, _ = report(tmp_path, ["greens-check", "--op", "dG", "--bidegree", "0,1", "--kind",
                                     "bianchi", "--sweep", "n=8,16", "--chart", "annulus",
                                     "--metric", "polar", "--trials", "1", "--csv", str(table)])
    rows = list(csv.reader(table.open()))
    assert rows[0] == ["n", "residual"] and [r[0] for r in rows[1:]] == ["8", "16"]
    assert len(rep["results"]["factors"]) == 1


def test_cohomology_bianchi_flat_box(tmp_path):
    code, rep, _ = report(tmp_path, ["cohomology", "--chain", "bianchi", "--m", "1", "--chart", "box",
                                     "--n", "16", "--metric", "flat"])
    assert code == 0
    assert rep["results"]["runs"][0]["dims"] == [3, 0, 0]


def test_cohomology_sweep(tmp_path):
    table = tmp_path / "c.csv"
    code, rep, _ = report(tmp_path, ["cohomology", "--chain", "de_rham", "--chart", "annulus",
                                     "--metric", "polar", "--sweep", "n=8,10", "--csv", str(table)])
    assert code == 0
    assert [r["dims"] for r in rep["results"]["runs"]] == [[1, 1, 0], [1, 1, 0]]
    assert len(list(csv.reader(table.open()))) == 7


def test_correct_exports_operators(tmp_path):
    out = tmp_path / "ops"
    code, rep, _ = report(tmp_path, ["correct", "--chain", "calabi", "--n", "8", "--export-ops", str(out)])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    for f in manifest["files"]:
        assert (out / f).exists()
    M0 = scipy.io.mmread(str(out / "mass_0.mtx"))
    assert M0.shape[0] == manifest["sizes"][0]


def test_assemble_export(tmp_path):
    out = tmp_path / "ops"
    code, rep, _ = report(tmp_path, ["assemble", "--op", "BH", "--bidegree", "0,0", "--kind", "bianchi",
                                     "--n", "8", "--export-ops", str(out)])
    assert code == 0 and (out / "BH.mtx").exists()
    assert rep["results"]["target"].startswith("boundary[")


def test_solve_bvp_manufactured_and_refused(tmp_path):
    field = tmp_path / "psi.json"
    code, rep, _ = report(tmp_path, ["solve-bvp", "--chain", "calabi", "--n", "8", "--level", "1",
                                     "--out-field", str(field)])
    assert code == 0 and rep["results"]["recovery_error"] < 1e-6
    _, rep, _ = report(tmp_path, ["correct", "--chain", "calabi", "--n", "8"], "c.json")
    size1 = rep["results"]["sizes"][1]
    assert len(json.loads(field.read_text())["psi"]) == size1
    # a generic source at level 0 is not in the range and is refused with the condition named
    data = tmp_path / "data.json"
    data.write_text(json.dumps({"chi": [float((i * 7) % 5) for i in range(size1)]}))
    code, rep, _ = report(tmp_path, ["solve-bvp", "--chain", "calabi", "--n", "8", "--level", "0",
                                     "--data", str(data)], "b.json")
    assert code == 1
    assert rep["results"]["violated"] == ["condition_1"]


@pytest.mark.parametrize("argv", [
    ["algebra-check", "--d", "2", "--samples", "10", "--seed", "4"],
    ["cohomology", "--chain", "calabi", "--n", "8", "--seed", "4"],
    ["solve-bvp", "--chain", "hessian", "--n", "8", "--level", "1", "--seed", "4"],
])
def test_reports_are_byte_identical(tmp_path, argv):
    _, _, a = report(tmp_path, argv, "a.json")
    _, _, b = report(tmp_path, argv, "b.json")
    assert a.read_bytes() == b.read_bytes()
