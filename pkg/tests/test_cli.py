import json

import pytest

from hpefie.approx import read_csv
from hpefie.cli import build_parser, main, parse_excitation


def test_parse_excitation():
    d, p = parse_excitation("plane:0,0,-1:1,0,0")
    assert d == [0, 0, -1.0] and p == [1.0, 0, 0]
    for bad in ("wave:0,0,1:1,0,0", "plane:0,0:1,0,0", "plane:0,0,1"):
        with pytest.raises(Exception):
            parse_excitation(bad)


def test_mesh_and_solve(tmp_path, capsys):
    mesh_path = tmp_path / "m.json"
    assert main(["mesh", "--preset", "UnitScreen", "--kind", "triangle", "--levels", "1",
                 "--out", str(mesh_path)]) == 0
    assert "8 elements" in capsys.readouterr().out
    sol = tmp_path / "u.json"
    assert main(["efie-solve", "--mesh", str(mesh_path), "--p", "1", "--k", "1.0",
                 "--excitation", "plane:0,0,-1:0,1,0", "--out", str(sol)]) == 0
    d = json.loads(sol.read_text())
    assert d["N"] == len(d["coeffs"]) > 0 and d["k"] == 1.0


def test_interp_study(tmp_path, capsys):
    out = tmp_path / "i.csv"
    assert main(["interp-study", "--field", "vertex-singular", "--kind", "square", "--p-min", "1",
                 "--p-max", "4", "--out", str(out)]) == 0
    rows = out.read_text().strip().split("\n")
    assert rows[0] == "p,err_hdiv,err_l2,edge_ratio_max" and len(rows) == 5
    errs = [float(r.split(",")[1]) for r in rows[1:]]
    assert errs[-1] < errs[0]
    assert "p-slope" in capsys.readouterr().err


def test_converge_and_rates(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"surface": "UnitScreen", "kind": "square", "levels": [1, 2, 3],
                               "degrees": [1], "study": "interp", "norms": ["Hdiv"]}))
    out = tmp_path / "r.csv"
    assert main(["converge", "--config", str(cfg), "--out", str(out)]) == 0
    assert len(read_csv(str(out))) == 3
    assert main(["rates", "--in", str(out), "--axis", "h"]) == 0
    line = capsys.readouterr().out.strip().split("\n")[-1].split()
    assert line[0] == "1" and float(line[2]) == pytest.approx(1.0, abs=0.3)
    # without --out the CSV goes to stdout
    assert main(["converge", "--config", str(cfg)]) == 0
    assert capsys.readouterr().out.startswith("surface,kind,level")


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
