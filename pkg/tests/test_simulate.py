import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import binom

from jitteradj.clusters import read_clusters
from jitteradj.errors import FormatError, InvalidInputError, ScenarioError
from jitteradj.geometry import Polygon
from jitteradj.inference import ModelSpec
from jitteradj.jitter import jitter_logdensity
from jitteradj.linalg import SparseCholesky
from jitteradj.mesh import build_mesh
from jitteradj.rasters import Raster
from jitteradj.simulate import (
    BASE_BETA,
    LandscapeConfig,
    ScenarioConfig,
    cached_landscape,
    parse_scenario_config,
    read_scenario_config,
    run_scenario,
    sample_locations,
    scenario_setup,
    simulate_field,
    simulate_replicate,
    simulate_responses,
)
from jitteradj.spde import Hyperparameters, precision

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_field_is_deterministic(small_mesh):
    th = Hyperparameters.from_natural(1.0, 30.0)
    a = simulate_field(small_mesh, th, np.random.default_rng(3))
    b = simulate_field(small_mesh, th, np.random.default_rng(3))
    assert np.array_equal(a, b)


def interior(mesh, margin):
    x, y = mesh.nodes.T
    return (x > margin) & (x < 100 - margin) & (y > margin) & (y < 100 - margin)


def test_field_variance_matches_precision(small_mesh):
    th = Hyperparameters.from_natural(1.3, 30.0)
    Q = precision(small_mesh.fem, th).Q
    want = np.diag(np.linalg.inv(Q.toarray()))
    rng = np.random.default_rng(4)
    W = np.array([simulate_field(small_mesh, th, rng) for _ in range(1000)])
    emp = W.var(axis=0)
    sel = interior(small_mesh, 10)
    assert sel.sum() > 30
    assert np.all(np.abs(emp[sel] / want[sel] - 1) < 0.25)


def test_field_correlation_at_range():
    mesh = build_mesh(Polygon.rectangle(0, 0, 100, 100), 4.0, 8.0, 30.0)
    rho = 25.0
    th = Hyperparameters.from_natural(1.0, rho)
    rng = np.random.default_rng(5)
    W = np.array([simulate_field(mesh, th, rng) for _ in range(400)])
    x = mesh.nodes
    inner = np.nonzero(np.all((x > 25) & (x < 75), axis=1))[0]
    d = np.hypot(*(x[inner, None, :] - x[None, inner, :]).transpose(2, 0, 1))
    i, j = np.nonzero(np.triu((np.abs(d - rho) < 1.5), 1))
    C = np.corrcoef(W[:, inner].T)
    assert len(i) > 50
    assert abs(C[i, j].mean() - 0.139) < 0.05


def test_two_cells_share_clusters_evenly():
    pop = Raster(2, 1, 0.0, 0.0, 1.0, np.array([[5.0, 5.0]]))
    urb = Raster(2, 1, 0.0, 0.0, 1.0, np.zeros((1, 2)))
    pts, flags = sample_locations(pop, 1000, 0, 1000, urb, 0.5, np.random.default_rng(6))
    left = int(np.sum(pts[:, 0] < 1.0))
    assert binom.ppf(0.005, 1000, 0.5) <= left <= binom.ppf(0.995, 1000, 0.5)
    assert not flags.any()


def test_zero_population_cells_are_empty():
    vals = np.array([[0.0, 2.0, 0.0], [1.0, 0.0, 3.0]])
    pop = Raster(3, 2, 0.0, 0.0, 1.0, vals)
    urb = Raster(3, 2, 0.0, 0.0, 1.0, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]))
    pts, flags = sample_locations(pop, 500, 300, 200, urb, 0.5, np.random.default_rng(7))
    col = np.floor(pts[:, 0]).astype(int)
    row = 1 - np.floor(pts[:, 1]).astype(int)
    assert np.all(vals[row, col] > 0)
    assert flags.sum() == 300
    # urban draws come only from cells flagged urban
    assert np.all(urb.values[row[flags], col[flags]] >= 0.5)


def test_location_counts_unreachable():
    pop = Raster(1, 1, 0.0, 0.0, 1.0, np.array([[1.0]]))
    urb = Raster(1, 1, 0.0, 0.0, 1.0, np.array([[0.0]]))
    with pytest.raises(InvalidInputError, match="could not place"):
        sample_locations(pop, 2, 1, 1, urb, 0.5, 0)
    with pytest.raises(InvalidInputError):
        sample_locations(pop, 3, 1, 1, urb, 0.5, 0)


def test_nigeria_mimic_counts():
    cfg = read_scenario_config(CONFIGS / "nigeria_full.cfg")
    land = cached_landscape(cfg.landscape)
    pts, flags = sample_locations(land.population, cfg.clusters, cfg.urban, cfg.rural, land.urbanicity,
                                  cfg.urban_threshold, np.random.default_rng(8))
    assert (int(flags.sum()), int((~flags).sum())) == (568, 812)
    assert len(pts) == 1380 and np.all(land.domain.contains(pts))


def test_responses_edge_cases_and_mean():
    n = np.array([7, 12, 30])
    assert simulate_responses(np.zeros(3), n, 0).tolist() == [0, 0, 0]
    assert simulate_responses(np.ones(3), n, 0).tolist() == [7, 12, 30]
    y = simulate_responses(np.full(10**4, 0.3), np.full(10**4, 25), np.random.default_rng(9))
    assert abs(np.mean(y / 25) - 0.3) < 0.01
    with pytest.raises(InvalidInputError):
        simulate_responses(np.array([np.nan]), [3], 0)


def test_responses_from_callable():
    y = simulate_responses(lambda p: np.full(len(p), 1.0), [4, 5], 0, locations=np.zeros((2, 2)))
    assert y.tolist() == [4, 5]


def test_config_files_parse():
    for name, scale in (("signallow", 0.5), ("signalmed", 1.0), ("signalhigh", 1.5)):
        cfg = read_scenario_config(CONFIGS / f"{name}.cfg")
        assert cfg.scaling == scale and cfg.clusters == 300 and cfg.n_sim == 20
        assert cfg.truth()["UrbR"] == pytest.approx(scale * BASE_BETA[-1])
        assert cfg.truth()["rho"] == 107.68


def test_config_round_trip():
    cfg = ScenarioConfig(name="x", scaling=0.5, models=("unadj",), fixed_locations=True,
                         landscape=LandscapeConfig(width=200.0, height=150.0, n_towns=10))
    assert parse_scenario_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,msg", [
    ("scaling = 1\nfoo = 2\n", "unknown key"),
    ("clusters = many\n", "clusters"),
    ("fixed_locations = maybe\n", "boolean"),
    ("clusters 300\n", "key = value"),
    ("clusters = 10\n", "urban \\+ rural"),
    ("scaling = -1\n", "scaling"),
])
def test_config_errors(text, msg):
    with pytest.raises(FormatError, match=msg):
        parse_scenario_config(text, "cfg.txt")


def test_config_error_has_line_number():
    with pytest.raises(FormatError, match="cfg.txt:2:"):
        parse_scenario_config("# ok\nbogus = 1\n", "cfg.txt")


@pytest.fixture(scope="module")
def smoke_cfg():
    return read_scenario_config(CONFIGS / "smoke.cfg")


@pytest.fixture(scope="module")
def smoke_result(smoke_cfg, tmp_path_factory):
    out = tmp_path_factory.mktemp("dump")
    return run_scenario(smoke_cfg, dump_dir=out), out


def test_smoke_run_serializes(smoke_cfg, smoke_result):
    res, out = smoke_result
    assert len(res.records) == 6 and res.failure_rate() == 0.0
    doc = json.loads(res.to_json())
    assert doc["models"] == ["unadj", "smoothed", "fulladj"]
    assert parse_scenario_config(doc["config"]) == smoke_cfg
    text = res.score_table().to_text()
    assert "UrbR" in text and "crps_logit" in text
    assert res.replicate_csv().count("\n") == 7
    dumped = read_clusters(out / "smoke_rep001.csv")
    assert len(dumped.y) == 60


def test_smoke_run_is_deterministic(smoke_cfg, smoke_result):
    again = run_scenario(smoke_cfg)
    assert again.to_json() == smoke_result[0].to_json()


def test_replicates_are_order_independent(smoke_cfg):
    land, mesh, n_c, _, fixed = scenario_setup(smoke_cfg)
    a = simulate_replicate(smoke_cfg, land, mesh, n_c, 1, fixed)[2]
    simulate_replicate(smoke_cfg, land, mesh, n_c, 0, fixed)
    b = simulate_replicate(smoke_cfg, land, mesh, n_c, 1, fixed)[2]
    assert np.array_equal(a.coords, b.coords) and np.array_equal(a.y, b.y)


def test_jitter_consistency(smoke_cfg):
    land, mesh, n_c, _, fixed = scenario_setup(smoke_cfg)
    for i in range(3):
        _, s_true, data = simulate_replicate(smoke_cfg, land, mesh, n_c, i, fixed)
        lp = jitter_logdensity(data.coords, s_true, data.urban, land.admin)
        assert np.all(lp > -np.inf)
        assert np.all(data.y <= data.n)


def test_fixed_locations_are_reused(smoke_cfg):
    cfg = dataclasses.replace(smoke_cfg, fixed_locations=True)
    land, mesh, n_c, _, fixed = scenario_setup(cfg)
    locs = [simulate_replicate(cfg, land, mesh, n_c, i, fixed)[1] for i in range(3)]
    assert all(l is fixed[0] for l in locs)
    free = [simulate_replicate(smoke_cfg, land, mesh, n_c, i, None)[1] for i in range(2)]
    assert not np.array_equal(free[0], free[1])


def test_collapsed_design_reproduces_unadj_scores(smoke_cfg):
    cfg = dataclasses.replace(smoke_cfg, n_sim=1)
    res = run_scenario(cfg, models=[ModelSpec(mode="unadj"), ModelSpec(mode="fulladj", rings_urban=0, rings_rural=0)])
    a, b = res.records
    assert a["crps"] == pytest.approx(b["crps"], abs=1e-6)
    assert a["estimates"]["rho"] == pytest.approx(b["estimates"]["rho"], rel=1e-4)


def test_too_many_failures(smoke_cfg):
    cfg = dataclasses.replace(smoke_cfg, n_sim=1)
    with pytest.raises(ScenarioError) as info:
        run_scenario(cfg, models=[ModelSpec(mode="unadj", max_evals=1)])
    assert info.value.result.failure_rate() == 1.0
