import csv
import json
import subprocess
import sys

import pytest

from hjbioc import bench, cli
from hjbioc.sdp import import_sdpa


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_gen_writes_clean_database(tmp_path, capsys):
    path = tmp_path / "db.json"
    code, out, _ = run(["gen", "--problem", "exittime", "--n", "15", "--s", "6", "--seed", "4",
                        "--out", str(path)], capsys)
    assert code == 0 and "invariant check: clean" in out
    db = bench.TrajectoryDatabase.load(path)
    assert len(db) == 15 and db.seed == 4 and db.problem == "exittime"


def test_solve_then_verify(tmp_path, capsys):
    out_dir = tmp_path / "res"
    code, out, _ = run(["solve", "--problem", "exitnorm", "--n", "40", "--s", "8", "--class", "1,1",
                        "--degphi", "2", "--out", str(out_dir)], capsys)
    assert code == 0 and "status=optimal" in out
    bundle = out_dir / "exitnorm_L11_deg2.json"
    data = json.loads(bundle.read_text())
    assert data["similarity"]["target"] > 0.999 and abs(data["epsilon"]) < 1e-6
    rows = list(csv.reader(open(out_dir / "summary.csv")))
    assert rows[0] == cli.CSV_HEADER and len(rows) == 2
    code, out, _ = run(["verify", "--bundle", str(bundle)], capsys)
    assert code == 0 and out.strip().endswith("PASS")


def test_verify_reports_tampering(tmp_path, capsys):
    out_dir = tmp_path / "res"
    run(["solve", "--problem", "exitnorm", "--n", "30", "--s", "6", "--out", str(out_dir)], capsys)
    bundle = out_dir / "exitnorm_L11_deg2.json"
    data = json.loads(bundle.read_text())
    data["L_terms"].append([repr(-1.0), [0, 0, 0, 0]])
    bundle.write_text(json.dumps(data))
    code, out, _ = run(["verify", "--bundle", str(bundle)], capsys)
    assert code == 2 and "VIOLATION" in out and "FAIL" in out


def test_hierarchy_and_ceiling_export(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("IOC_SOLVER_CEILING_DEGPHI", "4")
    out_dir = tmp_path / "h"
    code, out, _ = run(["solve", "--problem", "exittime", "--n", "30", "--s", "5", "--class", "0,1",
                        "--degrees", "2,4,6", "--out", str(out_dir)], capsys)
    assert code == 0
    assert "exceeds the embedded ceiling 4" in out
    assert (out_dir / "exittime_L01_deg6.dat-s").exists()
    eps = [json.loads((out_dir / f"exittime_L01_deg{d}.json").read_text())["epsilon"] for d in (2, 4)]
    assert eps[1] <= eps[0] + 1e-7
    assert import_sdpa(out_dir / "exittime_L01_deg6.dat-s").n_eq > 0


def test_export_sdpa(tmp_path, capsys):
    path = tmp_path / "p.dat-s"
    code, out, _ = run(["export-sdpa", "--problem", "lq", "--n", "5", "--s", "4", "--class", "1,1",
                        "--degphi", "4", "--out", str(path)], capsys)
    assert code == 0 and "mDIM" in out and path.exists()


def test_config_precedence(tmp_path, capsys):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"n": 7, "seed": 3, "problem": "exittime"}))
    path = tmp_path / "db.json"
    code, out, _ = run(["--config", str(cfgfile), "--dump-config", "gen", "--seed", "9",
                        "--s", "2", "--out", str(path)], capsys)
    assert code == 0
    dumped = json.loads(out[:out.index("}") + 1])
    assert dumped["n"] == 7 and dumped["seed"] == 9 and dumped["problem"] == "exittime"
    assert bench.TrajectoryDatabase.load(path).seed == 9


@pytest.mark.parametrize("argv", [
    ["gen", "--n", "0"],
    ["solve", "--degphi", "-2"],
    ["verify", "--bundle", "does-not-exist.json"],
    ["solve", "--db", "missing-db.json"],
])
def test_usage_errors(argv, capsys):
    code, _, err = run(argv, capsys)
    assert code == 2 and "ioc: error" in err


def test_unknown_config_key(tmp_path, capsys):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({"bogus": 1}))
    code, _, err = run(["--config", str(cfgfile), "gen"], capsys)
    assert code == 2 and "bogus" in err


def test_non_bundle_file(tmp_path, capsys):
    f = tmp_path / "x.json"
    f.write_text("{}")
    code, _, err = run(["verify", "--bundle", str(f)], capsys)
    assert code == 2 and "not a result bundle" in err


def test_degree_error_is_reported(tmp_path, capsys):
    code, _, err = run(["export-sdpa", "--problem", "lq", "--n", "5", "--s", "3",
                        "--class", "0,0", "--out", str(tmp_path / "x.dat-s")], capsys)
    assert code == 1 and "no monomials" in err


def test_tables_subset(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(cli, "TABLE_ROWS", [
        ("II", 1, "exitnorm", {}, "1,1", 2, 0.0, "x1^2+x2^2+u1^2+u2^2"),
        ("III", 2, "exittime", {}, "0,1", 12, 2e-2, "0.327+0.335u1^2+0.337u2^2"),
    ])
    code, out, _ = run(["tables", "--n", "30", "--s", "5", "--out", str(tmp_path)], capsys)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "table_II.csv")))
    assert rows[0]["status"] == "optimal" and float(rows[0]["similarity_target"]) > 0.999
    rows = list(csv.DictReader(open(tmp_path / "table_III.csv")))
    assert rows[0]["status"] == "exported" and rows[0]["sdpa_file"].endswith(".dat-s")
    assert (tmp_path / "table_I.csv").read_text().startswith("table,row")


def test_table_rows_cover_all_tables():
    counts = {t: sum(r[0] == t for r in cli.TABLE_ROWS) for t in ("I", "II", "III", "IV")}
    assert counts == {"I": 4, "II": 5, "III": 7, "IV": 5}


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "hjbioc.cli", "--help"], capture_output=True,
                         text=True, cwd=tmp_path)
    assert res.returncode == 0
    for sub in ("gen", "solve", "verify", "tables", "export-sdpa"):
        assert sub in res.stdout
