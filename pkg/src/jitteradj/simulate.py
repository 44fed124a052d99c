"""Synthetic studies: landscapes, true risk surfaces, cluster placement and scenario runs."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import shapely
from shapely.ops import voronoi_diagram
from scipy.ndimage import binary_dilation, gaussian_filter, map_coordinates
from scipy.spatial import cKDTree
from scipy.special import expit

from .clusters import format_clusters
from .errors import FormatError, InvalidInputError, JitterAdjError, ScenarioError
from .evaluate import ScoreTable, prediction_scores
from .geometry import Polygon
from .inference import Dataset, ModelSpec, fit, predict
from .io import atomic_write_text
from .jitter import AdminMap, JitterScheme, sample_jitter_many
from .linalg import SparseCholesky
from .mesh import TriangulationMesh, build_mesh, project
from .rasters import CovariateSet, Raster, extract
from .spde import Hyperparameters, precision

log = logging.getLogger(__name__)

MAX_LOCATION_DRAWS = 1_000_000
COVARIATE_NAMES = ("DistW", "CityA", "Elev", "PopD", "UrbR")
# FullAdj estimates on the national survey, used as the SignalMed truth
BASE_BETA = (-2.21, 0.62, -0.43, -0.02, 0.32, -1.35)
BASE_RHO = 107.68
BASE_SIGMA2 = 1.65


# ---------------------------------------------------------------- landscape

@dataclass(frozen=True)
class LandscapeConfig:
    """Size and texture of a synthetic country (all lengths in km)."""

    width: float = 1000.0
    height: float = 800.0
    fine_cell: float = 0.5
    coarse_cell: float = 1.0
    n_regions: int = 300
    n_towns: int = 600
    n_rivers: int = 30
    rural_density: float = 30.0
    town_size: float = 10000.0
    pixel_sd: float = 1.0
    seed: int = 2024


@dataclass(frozen=True, eq=False)
class Landscape:
    """Domain, admin regions and covariate rasters of a synthetic country.

    ``population`` holds people per fine cell and ``urbanicity`` the raw
    built-up ratio in ``[0, 1]``; ``covariates`` are the transformed rasters
    in the order DistW, CityA, Elev, PopD, UrbR.
    """

    config: LandscapeConfig
    domain: Polygon
    admin: AdminMap
    population: Raster
    urbanicity: Raster
    covariates: CovariateSet
    town_centers: np.ndarray


def _smooth_field(rng, shape, scale_cells):
    g = gaussian_filter(rng.standard_normal(shape), scale_cells, mode="wrap")
    return (g - g.mean()) / g.std()


def _resample(coarse, coarse_cell, ncols, nrows, cell):
    """Bilinear lookup of a south-up coarse grid at fine cell centres (south-up)."""
    xc = ((np.arange(ncols) + 0.5) * cell) / coarse_cell - 0.5
    yc = ((np.arange(nrows) + 0.5) * cell) / coarse_cell - 0.5
    yy, xx = np.meshgrid(yc, xc, indexing="ij")
    return map_coordinates(coarse, [yy.ravel(), xx.ravel()], order=1, mode="nearest").reshape(nrows, ncols)


def country_outline(rng, width, height, n_vertices=240) -> Polygon:
    """Star-shaped blob with a wavy border filling most of the bounding box."""
    phi = np.linspace(0.0, 2.0 * np.pi, n_vertices, endpoint=False)
    r = np.ones_like(phi)
    for k in range(2, 9):
        r += rng.uniform(0.02, 0.06) / np.sqrt(k - 1) * np.cos(k * phi + rng.uniform(0, 2 * np.pi))
    x = r * np.cos(phi)
    y = r * np.sin(phi)
    sx = 0.49 * width / np.abs(x).max()
    sy = 0.49 * height / np.abs(y).max()
    return Polygon(np.column_stack([0.5 * width + sx * x, 0.5 * height + sy * y]))


def voronoi_regions(domain: Polygon, n_regions: int, rng) -> AdminMap:
    """Voronoi cells of random seeds clipped to the domain; disjoint pieces become regions."""
    x0, y0, x1, y1 = domain.bounds
    seeds = []
    while len(seeds) < n_regions:
        cand = rng.uniform([x0, y0], [x1, y1], (2 * n_regions, 2))
        seeds.extend(cand[domain.contains(cand)].tolist())
    seeds = np.array(seeds[:n_regions])
    env = shapely.box(x0 - 10, y0 - 10, x1 + 10, y1 + 10)
    cells = voronoi_diagram(shapely.MultiPoint(seeds), envelope=env)
    dom = domain.to_shapely()
    regions = []
    for cell in cells.geoms:
        piece = cell.intersection(dom)
        parts = getattr(piece, "geoms", [piece])
        for part in parts:
            if part.geom_type == "Polygon" and part.area > 1.0:
                regions.append((len(regions), Polygon.from_shapely(shapely.set_precision(part, 1e-6))))
    return AdminMap(regions)


def _grid_mask(domain, ncols, nrows, cell):
    xc = (np.arange(ncols) + 0.5) * cell
    yc = (np.arange(nrows) + 0.5) * cell
    xx, yy = np.meshgrid(xc, yc)
    return domain.contains(np.column_stack([xx.ravel(), yy.ravel()])).reshape(nrows, ncols)


def _to_raster(south_up, cell, mask, nodata=-9999.0):
    vals = np.where(mask, south_up, nodata)[::-1]
    nrows, ncols = south_up.shape
    return Raster(ncols, nrows, 0.0, 0.0, cell, np.ascontiguousarray(vals), nodata)


def _random_rivers(rng, width, height, n_rivers, step=1.0):
    pts = []
    for _ in range(n_rivers):
        p = rng.uniform([0, 0], [width, height])
        heading = rng.uniform(0, 2 * np.pi)
        length = int(rng.uniform(100, 450) / step)
        turn = gaussian_filter(rng.standard_normal(length), 8) * 0.6
        for t in range(length):
            heading += turn[t]
            p = p + step * np.array([np.cos(heading), np.sin(heading)])
            pts.append(p.copy())
    return np.array(pts)


def _distance_grid(targets, ncols, nrows, cell):
    xc = (np.arange(ncols) + 0.5) * cell
    yc = (np.arange(nrows) + 0.5) * cell
    xx, yy = np.meshgrid(xc, yc)
    d, _ = cKDTree(targets).query(np.column_stack([xx.ravel(), yy.ravel()]))
    return d.reshape(nrows, ncols)


def synthetic_landscape(cfg: LandscapeConfig = LandscapeConfig()) -> Landscape:
    """Build a synthetic country whose covariates vary on sub-kilometre to national scales.

    Population is a smooth rural background plus towns with Pareto sizes
    drawn where the background is dense; towns of a few km or less are
    what make the urbanicity covariate sensitive to km-scale displacement.
    """
    rng = np.random.default_rng(cfg.seed)
    domain = country_outline(rng, cfg.width, cfg.height)
    admin = voronoi_regions(domain, cfg.n_regions, rng)

    fc, cc = cfg.fine_cell, cfg.coarse_cell
    fcols, frows = int(round(cfg.width / fc)), int(round(cfg.height / fc))
    ccols, crows = int(round(cfg.width / cc)), int(round(cfg.height / cc))
    fmask = _grid_mask(domain, fcols, frows, fc)
    cmask = _grid_mask(domain, ccols, crows, cc)

    # smooth national-scale fields on a 5 km grid
    lc = 5.0
    lcols, lrows = int(round(cfg.width / lc)), int(round(cfg.height / lc))
    wealth = _smooth_field(rng, (lrows, lcols), 60.0 / lc)
    relief_lo = _smooth_field(rng, (lrows, lcols), 150.0 / lc)
    relief_hi = _smooth_field(rng, (lrows, lcols), 40.0 / lc)

    area = fc * fc
    bg_all = cfg.rural_density * area * np.exp(0.8 * _resample(wealth, lc, fcols, frows, fc))
    bg = np.where(fmask, bg_all, 0.0)

    # towns placed proportionally to the background population
    p = bg.ravel() / bg.sum()
    idx = rng.choice(p.size, size=cfg.n_towns, p=p)
    tr, tcol = np.divmod(idx, fcols)
    centers = np.column_stack([(tcol + rng.random(cfg.n_towns)) * fc, (tr + rng.random(cfg.n_towns)) * fc])
    sizes = np.minimum((1.0 - rng.random(cfg.n_towns)) ** (-1.0 / 1.1), 400.0)
    towns = np.zeros_like(bg)
    for (cx, cy), s in zip(centers, sizes):
        sig = 0.45 * s**0.35
        rad = 4.0 * sig
        c0, c1 = max(int((cx - rad) / fc), 0), min(int((cx + rad) / fc) + 1, fcols)
        r0, r1 = max(int((cy - rad) / fc), 0), min(int((cy + rad) / fc) + 1, frows)
        if c1 <= c0 or r1 <= r0:
            continue
        gx = (np.arange(c0, c1) + 0.5) * fc - cx
        gy = (np.arange(r0, r1) + 0.5) * fc - cy
        k = np.exp(-0.5 * (gy[:, None] ** 2 + gx[None, :] ** 2) / sig**2) * area / (2 * np.pi * sig**2)
        towns[r0:r1, c0:c1] += cfg.town_size * s * k
    # mean-preserving lognormal heterogeneity between fine cells: people and
    # built-up land are patchy at the scale of a few hundred metres
    sd = cfg.pixel_sd
    pop_all = (bg_all + towns) * np.exp(sd * rng.standard_normal(towns.shape) - 0.5 * sd * sd)
    pop = np.where(fmask, pop_all, 0.0)
    urb = expit((np.log10(np.maximum(pop_all / area, 1e-3)) - 3.0) / 0.25)
    # covariates extend two cells past the border so that every point of
    # the domain has a value, as real covariate rasters do
    fcov = binary_dilation(fmask, structure=np.ones((3, 3), bool), iterations=2)
    ccov = binary_dilation(cmask, structure=np.ones((3, 3), bool), iterations=2)

    cities = centers[sizes >= 15.0]
    if len(cities) < 5:
        cities = centers[np.argsort(-sizes)[:5]]
    rough = _resample(relief_hi, lc, ccols, crows, cc)
    travel = _distance_grid(cities, ccols, crows, cc) * 1.5 * np.exp(0.3 * rough) + 5.0
    elev = np.clip(350.0 + 250.0 * _resample(relief_lo, lc, ccols, crows, cc) + 120.0 * rough, 0.0, None)
    distw = _distance_grid(_random_rivers(rng, cfg.width, cfg.height, cfg.n_rivers), ccols, crows, cc)

    population = _to_raster(pop, fc, fmask)
    urbanicity = _to_raster(urb, fc, fcov)
    covars = CovariateSet.from_raw([
        ("DistW", _to_raster(distw, cc, ccov), "log1p-standardize"),
        ("CityA", _to_raster(travel, cc, ccov), "log1p-standardize"),
        ("Elev", _to_raster(elev, cc, ccov), "log1p-standardize"),
        ("PopD", _to_raster(pop_all, fc, fcov), "log1p-standardize"),
        ("UrbR", urbanicity, "unit-scale"),
    ])
    return Landscape(cfg, domain, admin, population, urbanicity, covars, centers)


@lru_cache(maxsize=2)
def cached_landscape(cfg: LandscapeConfig) -> Landscape:
    return synthetic_landscape(cfg)


# ---------------------------------------------------------------- data generation

def simulate_field(mesh: TriangulationMesh, theta: Hyperparameters, rng, fem=None) -> np.ndarray:
    """Basis weights ``w ~ N(0, Q^-1)`` drawn as ``L^-T z``."""
    fem = fem if fem is not None else mesh.fem
    Q = precision(fem, theta).Q
    z = np.random.default_rng(rng).standard_normal(Q.shape[0])
    return SparseCholesky(Q).inv_sqrt_transpose(z)


@dataclass(eq=False)
class TruthSurface:
    """``eta(s) = x(s)^T beta + a(s)^T w`` with point-extracted covariates."""

    mesh: TriangulationMesh
    w: np.ndarray
    beta: np.ndarray
    covars: CovariateSet

    def eta(self, points) -> np.ndarray:
        X = self.covars.design(points)
        proj = project(self.mesh, points)
        out = X @ self.beta + proj.rows @ self.w
        out[proj.outside] = np.nan
        return out

    def risk(self, points) -> np.ndarray:
        return expit(self.eta(points))


def sample_locations(population: Raster, C: int, urban_count: int, rural_count: int, urbanicity: Raster,
                     threshold: float, rng, accept=None):
    """Population-proportional cluster locations with exact urban and rural counts.

    Cells are drawn with probability proportional to their population and the
    point is placed uniformly in the cell; it is urban iff the urbanicity
    raster at the point is at least ``threshold``. Draws of an already full
    class, or rejected by ``accept(points)``, are discarded.
    """
    if urban_count < 0 or rural_count < 0 or urban_count + rural_count != C:
        raise InvalidInputError(f"urban ({urban_count}) + rural ({rural_count}) must equal C ({C})")
    rng = np.random.default_rng(rng)
    p = np.where(population.mask, np.maximum(population.values, 0.0), 0.0).ravel()
    cum = np.cumsum(p)
    total = cum[-1] if cum.size else 0.0
    if not total > 0:
        raise InvalidInputError("population raster has no positive cells")
    need = {True: urban_count, False: rural_count}
    got_pts, got_urb = [], []
    draws = 0
    while need[True] + need[False] > 0:
        batch = min(max(4 * (need[True] + need[False]), 1000), MAX_LOCATION_DRAWS - draws)
        if batch <= 0:
            raise InvalidInputError(
                f"could not place {need[True]} urban and {need[False]} rural clusters in {MAX_LOCATION_DRAWS} draws"
            )
        idx = np.minimum(np.searchsorted(cum, rng.random(batch) * total, side="right"), p.size - 1)
        row, col = np.divmod(idx, population.ncols)
        u = rng.random((batch, 2))
        pts = np.column_stack([
            population.xll + (col + u[:, 0]) * population.cellsize,
            population.yll + (population.nrows - 1 - row + u[:, 1]) * population.cellsize,
        ])
        draws += batch
        ub = extract(urbanicity, pts)
        ok = np.isfinite(ub)
        if accept is not None:
            ok &= np.asarray(accept(pts), dtype=bool)
        is_urb = ub >= threshold
        take = np.zeros(batch, dtype=bool)
        for flag in (True, False):
            cand = np.nonzero(ok & (is_urb == flag))[0][: need[flag]]
            take[cand] = True
            need[flag] -= cand.size
        got_pts.append(pts[take])
        got_urb.append(is_urb[take])
    return np.vstack(got_pts), np.concatenate(got_urb)


def simulate_responses(risk, n, rng, locations=None) -> np.ndarray:
    """Independent ``Binomial(n_c, r_c)`` draws; ``risk`` may be an array or a callable of locations."""
    r = risk(locations) if callable(risk) else np.asarray(risk, dtype=float)
    if not np.all(np.isfinite(r)):
        raise InvalidInputError(f"risk is not finite at location {int(np.argmax(~np.isfinite(r)))}")
    r = np.clip(r, 0.0, 1.0)
    return np.random.default_rng(rng).binomial(np.asarray(n, dtype=np.int64), r).astype(float)


# ---------------------------------------------------------------- scenarios

@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario; readable from a flat ``key = value`` file."""

    name: str = "signalmed"
    scaling: float = 1.0
    rho: float = BASE_RHO
    sigma2: float = BASE_SIGMA2
    beta: tuple = BASE_BETA
    clusters: int = 300
    urban: int = 123
    rural: int = 177
    n_sim: int = 20
    fixed_locations: bool = False
    seed: int = 1
    n_min: int = 15
    n_max: int = 35
    n_eval: int = 1000
    urban_threshold: float = 0.5
    models: tuple = ("unadj", "smoothed", "fulladj")
    mesh_max_edge: float = 25.0
    mesh_max_edge_exterior: float = 50.0
    mesh_extension: float = 150.0
    landscape: LandscapeConfig = field(default_factory=LandscapeConfig)

    def __post_init__(self):
        if self.clusters <= 0 or self.n_sim <= 0 or self.n_eval <= 0 or self.urban < 0 or self.rural < 0:
            raise InvalidInputError("clusters, n_sim and n_eval must be positive; urban and rural nonnegative")
        if self.urban + self.rural != self.clusters:
            raise InvalidInputError(f"urban + rural = {self.urban + self.rural} but clusters = {self.clusters}")
        if not self.scaling > 0:
            raise InvalidInputError("scaling must be positive")
        if not (1 <= self.n_min <= self.n_max):
            raise InvalidInputError("need 1 <= n_min <= n_max")
        if len(self.beta) != len(COVARIATE_NAMES) + 1:
            raise InvalidInputError(f"beta needs {len(COVARIATE_NAMES) + 1} values (intercept first)")

    @property
    def true_theta(self) -> Hyperparameters:
        return Hyperparameters.from_natural(self.sigma2, self.rho)

    @property
    def true_beta(self) -> np.ndarray:
        return self.scaling * np.asarray(self.beta, dtype=float)

    def truth(self) -> dict:
        out = {"rho": self.rho, "sigma2": self.sigma2}
        out.update(zip(("intercept",) + COVARIATE_NAMES, self.true_beta.tolist()))
        return out

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "landscape":
                for lf in dataclasses.fields(v):
                    lines.append(f"landscape_{lf.name} = {getattr(v, lf.name)}")
            elif isinstance(v, tuple):
                lines.append(f"{f.name} = {', '.join(str(x) for x in v)}")
            else:
                lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def _convert(raw: str, default, path, lineno, key):
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"expected a boolean, got {raw!r}")
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(x) for x in items)
            return tuple(items)
        return raw
    except ValueError as exc:
        raise FormatError(f"bad value for {key}: {exc}", path, lineno) from None


def parse_scenario_config(text: str, path=None) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, ``landscape_*`` keys set the landscape."""
    base = ScenarioConfig()
    kw, lkw = {}, {}
    top = {f.name: getattr(base, f.name) for f in dataclasses.fields(base) if f.name != "landscape"}
    land = {f.name: getattr(base.landscape, f.name) for f in dataclasses.fields(base.landscape)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"expected 'key = value', got {line!r}", path, lineno)
        key, val = (s.strip() for s in line.split("=", 1))
        if key in top:
            kw[key] = _convert(val, top[key], path, lineno, key)
        elif key.startswith("landscape_") and key[10:] in land:
            lkw[key[10:]] = _convert(val, land[key[10:]], path, lineno, key)
        else:
            raise FormatError(f"unknown key {key!r}", path, lineno)
    if "models" in kw:
        kw["models"] = tuple(m.lower() for m in kw["models"])
    try:
        return ScenarioConfig(**kw, landscape=LandscapeConfig(**lkw))
    except InvalidInputError as exc:
        raise FormatError(str(exc), path) from None


def read_scenario_config(path) -> ScenarioConfig:
    with open(path) as fh:
        return parse_scenario_config(fh.read(), path)


@dataclass(eq=False)
class ScenarioResult:
    """Per-replicate, per-model estimates and predictive scores."""

    config: ScenarioConfig
    truth: dict
    models: list
    records: list = field(default_factory=list)

    def ok_records(self, model):
        return [r for r in self.records if r["model"] == model and r["status"] == "ok"]

    def failure_rate(self) -> float:
        return sum(r["status"] != "ok" for r in self.records) / max(len(self.records), 1)

    def score_table(self) -> ScoreTable:
        est = {m: [r["estimates"] for r in self.ok_records(m)] for m in self.models}
        pred = {m: [(r["pred_rmse"], r["crps"]) for r in self.ok_records(m)] for m in self.models}
        title = (f"scenario {self.config.name}: scaling {self.config.scaling}, "
                 f"{self.config.clusters} clusters, {self.config.n_sim} replicates")
        return ScoreTable.from_replicates(est, self.truth, pred, title=title)

    def estimates(self, model, param) -> np.ndarray:
        return np.array([r["estimates"][param] for r in self.ok_records(model)])

    def to_json(self) -> str:
        return json.dumps({"config": self.config.to_text(), "truth": self.truth, "models": self.models,
                           "records": self.records}, indent=1, sort_keys=True)

    def replicate_csv(self) -> str:
        params = list(self.truth)
        lines = ["replicate,model,status," + ",".join(params) + ",pred_rmse_logit,crps_logit,n_evals"]
        for r in self.records:
            e = r.get("estimates") or {}
            vals = [repr(float(e[p])) if p in e else "" for p in params]
            lines.append(",".join([str(r["replicate"]), r["model"], r["status"]] + vals
                                  + [repr(float(r.get("pred_rmse", float("nan")))), repr(float(r.get("crps", float("nan")))),
                                     str(r.get("n_evals", 0))]))
        return "\n".join(lines) + "\n"


def _replicate_rng(seed, *key):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *key]))


def scenario_setup(cfg: ScenarioConfig, landscape: Landscape | None = None, mesh: TriangulationMesh | None = None):
    """Landscape, mesh and the replicate-independent draws of a scenario."""
    land = landscape if landscape is not None else cached_landscape(cfg.landscape)
    if mesh is None:
        mesh = build_mesh(land.domain, cfg.mesh_max_edge, cfg.mesh_max_edge_exterior, cfg.mesh_extension)
    rng = _replicate_rng(cfg.seed, 0)
    n_c = rng.integers(cfg.n_min, cfg.n_max + 1, cfg.clusters).astype(float)
    x0, y0, x1, y1 = land.domain.bounds
    evals = []
    while len(evals) < cfg.n_eval:
        cand = rng.uniform([x0, y0], [x1, y1], (2 * cfg.n_eval, 2))
        evals.extend(cand[land.domain.contains(cand)].tolist())
    eval_pts = np.array(evals[: cfg.n_eval])
    fixed = None
    if cfg.fixed_locations:
        fixed = _draw_true_locations(cfg, land, rng)
    return land, mesh, n_c, eval_pts, fixed


def _draw_true_locations(cfg, land, rng):
    return sample_locations(land.population, cfg.clusters, cfg.urban, cfg.rural, land.urbanicity,
                            cfg.urban_threshold, rng, accept=lambda p: land.admin.region_index(p) >= 0)


def simulate_replicate(cfg: ScenarioConfig, land: Landscape, mesh, n_c, i: int, fixed=None):
    """True surface and jittered dataset of replicate ``i``."""
    rng = _replicate_rng(cfg.seed, 1, i)
    w = simulate_field(mesh, cfg.true_theta, rng)
    truth = TruthSurface(mesh, w, cfg.true_beta, land.covariates)
    if fixed is None:
        s_true, urban = _draw_true_locations(cfg, land, rng)
    else:
        s_true, urban = fixed
    s_obs = sample_jitter_many(s_true, urban, land.admin, JitterScheme(), rng)
    y = simulate_responses(truth.risk(s_true), n_c, rng)
    adm = tuple(str(land.admin.ids[k]) for k in land.admin.region_index(s_obs))
    data = Dataset(y, n_c, s_obs, urban, tuple(range(cfg.clusters)), adm)
    return truth, s_true, data


def run_scenario(cfg: ScenarioConfig, models=None, landscape: Landscape | None = None,
                 mesh: TriangulationMesh | None = None, dump_dir=None, progress=None) -> ScenarioResult:
    """Simulate ``cfg.n_sim`` replicates, fit every model and score it.

    Each replicate draws from its own seed-derived stream, so results do not
    depend on execution order. Failed fits are recorded; more than 20% failed
    fits raise :class:`ScenarioError` carrying the partial result.
    """
    if models is None:
        models = [ModelSpec(mode=m) for m in cfg.models]
    land, mesh, n_c, eval_pts, fixed = scenario_setup(cfg, landscape, mesh)
    names = [m.mode for m in models]
    result = ScenarioResult(cfg, cfg.truth(), names)
    for i in range(cfg.n_sim):
        truth, s_true, data = simulate_replicate(cfg, land, mesh, n_c, i, fixed)
        if dump_dir is not None:
            extra = {"true_x_km": s_true[:, 0], "true_y_km": s_true[:, 1]}
            atomic_write_text(Path(dump_dir) / f"{cfg.name}_rep{i:03d}.csv", format_clusters(data, extra))
        eta_true = truth.eta(eval_pts)
        for spec in models:
            rec = {"replicate": i, "model": spec.mode}
            try:
                f = fit(data, spec, mesh, land.covariates, land.admin)
                pred = predict(f, eval_pts, n_samples=0)
                rmse, crps = prediction_scores(pred.eta_mean, pred.eta_sd, eta_true)
                rec.update(status="ok", estimates=f.estimates(), pred_rmse=rmse, crps=crps, n_evals=f.n_evals)
            except (JitterAdjError, np.linalg.LinAlgError, ValueError) as exc:
                log.warning("replicate %d, %s failed: %s", i, spec.mode, exc)
                rec.update(status="failed", message=str(exc))
            result.records.append(rec)
            if progress is not None:
                progress(rec)
    if result.failure_rate() > 0.2:
        raise ScenarioError(f"{result.failure_rate():.0%} of fits failed in scenario {cfg.name}", result=result)
    return result
