import csv
import json
from pathlib import Path

import numpy as np
import pytest

from jitteradj.cli import main
from jitteradj.clusters import write_clusters
from jitteradj.geometry import Polygon
from jitteradj.jitter import AdminMap, format_admin_map
from jitteradj.rasters import Raster, write_raster

import toys

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def table(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    return lines[0], list(csv.DictReader(lines[1:]))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "square.poly").write_text("0 0\n100 0\n100 100\n0 100\n")
    rng = np.random.default_rng(21)
    r = toys.smooth_raster(rng, offset=3.0)
    write_raster(r.with_values(np.abs(r.values)), d / "cov.asc")
    write_raster(Raster(20, 20, 0.0, 0.0, 5.0, rng.uniform(1, 100, (20, 20))), d / "pop.asc")
    admin = AdminMap([("west", Polygon.rectangle(0, 0, 50, 100)), ("east", Polygon.rectangle(50, 0, 100, 100))])
    (d / "admin.txt").write_text(format_admin_map(admin))
    data = toys.toy_data(rng, C=40, lo=5, hi=95)
    write_clusters(data, d / "clusters.csv")
    return d


def test_mesh_command(workspace, capsys):
    code, _, err = run(["mesh", "--domain", workspace / "square.poly", "--out", workspace / "mesh.txt",
                        "--max-edge", 20, "--max-edge-exterior", 40], capsys)
    assert code == 0 and err == ""
    assert (workspace / "mesh.txt").stat().st_size > 0


@pytest.fixture(scope="module")
def fitted(workspace):
    mesh = workspace / "mesh.txt"
    if not mesh.exists():
        assert main(["mesh", "--domain", str(workspace / "square.poly"), "--out", str(mesh), "--max-edge", "20",
                     "--max-edge-exterior", "40"]) == 0
    out = workspace / "fit.json"
    code = main(["fit", "--data", str(workspace / "clusters.csv"), "--mesh", str(mesh), "--raster",
                 f"cov={workspace / 'cov.asc'}:log1p-standardize", "--admin", str(workspace / "admin.txt"),
                 "--mode", "fulladj", "--out", str(out)])
    assert code == 0
    return out


def test_fit_writes_summary(fitted):
    d = json.loads(fitted.read_text())
    assert d["mode"] == "fulladj"
    assert [b["name"] for b in d["beta"]] == ["intercept", "cov"]
    assert d["inputs"]["clusters_used"] == 40
    assert d["theta_hat"]["rho_km"] > 0


def test_predict_and_evaluate(workspace, fitted, capsys):
    grid = workspace / "grid.csv"
    areal = workspace / "areal.csv"
    code, _, err = run(["predict", "--fit", fitted, "--grid", 10, "--samples", 200, "--admin", workspace / "admin.txt",
                        "--population", workspace / "pop.asc", "--areal-out", areal, "--out", grid], capsys)
    assert code == 0, err
    head, rows = table(grid)
    assert head.startswith("# mode=fulladj;") and "km" in head
    assert len(rows) == 100
    vals = [r for r in rows if r["missing"] == "0"]
    assert all(0 < float(r["r_median"]) < 1 and float(r["r_cv"]) >= 0 for r in vals)
    head, rows = table(areal)
    assert head.startswith("# mode=fulladj;")
    assert [r["region_id"] for r in rows] == ["west", "east"]
    # predicting twice with the same seed gives the same file
    again = workspace / "grid2.csv"
    run(["predict", "--fit", fitted, "--grid", 10, "--samples", 200, "--out", again], capsys)
    assert again.read_text() == grid.read_text()

    truth = workspace / "truth.csv"
    lines = ["x_km,y_km,eta"] + [f"{r['x_km']},{r['y_km']},{float(r['eta_mean']) + 0.5}" for r in vals]
    truth.write_text("\n".join(lines) + "\n")
    scores = workspace / "scores.csv"
    code, _, err = run(["evaluate", "--pred", grid, "--truth", truth, "--out", scores], capsys)
    assert code == 0, err
    head, rows = table(scores)
    assert head.startswith("# mode=fulladj;") and "logit" in head
    assert float(rows[0]["pred_rmse_logit"]) == pytest.approx(0.5)


def test_fit_rejects_y_above_n(workspace, capsys):
    bad = workspace / "bad.csv"
    text = (workspace / "clusters.csv").read_text().splitlines()
    head = text[0].split(",")
    row = text[3].split(",")
    row[head.index("y")] = str(float(row[head.index("n")]) + 1)
    bad.write_text("\n".join(text[:3] + [",".join(row)] + text[4:]) + "\n")
    code, _, err = run(["fit", "--data", bad, "--mesh", workspace / "mesh.txt", "--out", workspace / "x.json"], capsys)
    assert code != 0
    assert len(err.strip().splitlines()) == 1
    assert "line 4" in err or ":4:" in err
    assert not (workspace / "x.json").exists()


def test_missing_file_is_one_line(workspace, capsys):
    code, _, err = run(["fit", "--data", workspace / "nope.csv", "--mesh", workspace / "mesh.txt", "--out",
                        workspace / "y.json"], capsys)
    assert code == 1 and err.startswith("jitteradj fit: error:") and len(err.strip().splitlines()) == 1


def test_unknown_flag(capsys):
    with pytest.raises(SystemExit) as info:
        main(["mesh", "--domain", "d", "--out", "o", "--max-edje", "3"])
    assert info.value.code == 2
    assert "unrecognized arguments" in capsys.readouterr().err


def test_bad_raster_argument(capsys):
    with pytest.raises(SystemExit):
        main(["fit", "--data", "a", "--mesh", "b", "--out", "c", "--raster", "nameonly"])


def test_simulate_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        code, stdout, err = run(["simulate", "--config", CONFIGS / "smoke.cfg", "--seed", 7, "--out-dir", d,
                                 "--dump-data"], capsys)
        assert code == 0, err
        outs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()})
    assert outs[0] == outs[1]
    names = {str(p) for p in outs[0]}
    assert {"smoke_scores.txt", "smoke_scores.csv", "smoke_replicates.csv", "smoke_result.json"} <= names
    assert "data/smoke_rep000.csv" in names
    assert "UrbR" in stdout

    code, _, err = run(["evaluate", "--scenario", tmp_path / "run0" / "smoke_result.json", "--out",
                        tmp_path / "table.txt"], capsys)
    assert code == 0, err
    assert (tmp_path / "table.txt").read_text() == outs[0][Path("smoke_scores.txt")].decode()
