"""Command-line entry point: ``jitteradj {mesh,fit,predict,simulate,evaluate}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clusters import read_clusters
from .errors import FormatError, JitterAdjError
from .evaluate import ScoreTable, prediction_scores
from .geometry import read_polygon
from .inference import ModelFit, ModelSpec, aggregate, fit, predict
from .io import atomic_write_text
from .jitter import AdminMap, read_admin_map
from .mesh import build_mesh, read_mesh, write_mesh
from .rasters import TRANSFORMS, CovariateSet, read_raster
from .simulate import read_scenario_config, run_scenario
from .spde import PcPriorConfig

log = logging.getLogger("jitteradj")


class CliError(Exception):
    pass


def _raster_arg(text):
    """``NAME=path[:transform]``; the transform defaults to ``none``."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=path[:transform], got {text!r}")
    name, rest = text.split("=", 1)
    path, tag = rest, "none"
    head, sep, tail = rest.rpartition(":")
    if sep and tail in TRANSFORMS:
        path, tag = head, tail
    if not name or not path:
        raise argparse.ArgumentTypeError(f"expected NAME=path[:transform], got {text!r}")
    return name, path, tag


def _load_covariates(specs) -> CovariateSet:
    return CovariateSet.from_raw([(name, read_raster(path), tag) for name, path, tag in specs])


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jitteradj", description="Geostatistics for jittered survey clusters.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("mesh", help="triangulate a domain polygon")
    m.add_argument("--domain", required=True, help="polygon file (x y per line, km)")
    m.add_argument("--out", required=True)
    m.add_argument("--max-edge", type=float, default=25.0, help="interior max edge, km")
    m.add_argument("--max-edge-exterior", type=float, default=None, help="extension max edge, km")
    m.add_argument("--extension", type=float, default=None, help="extension width, km (default: 15%% of bbox diameter)")

    f = sub.add_parser("fit", help="fit a model to a cluster table")
    f.add_argument("--data", required=True, help="cluster CSV")
    f.add_argument("--mesh", required=True)
    f.add_argument("--raster", action="append", type=_raster_arg, default=[], metavar="NAME=path[:transform]")
    f.add_argument("--admin", help="admin region file; default: the mesh domain as one region")
    f.add_argument("--mode", choices=["unadj", "smoothed", "fulladj"], default="fulladj")
    f.add_argument("--prior-range", type=float, default=160.0, help="R0, km")
    f.add_argument("--prior-range-prob", type=float, default=0.5, help="P(rho < R0)")
    f.add_argument("--prior-sd", type=float, default=1.0, help="S0")
    f.add_argument("--prior-sd-prob", type=float, default=0.05, help="P(sigma > S0)")
    f.add_argument("--rings-urban", type=int, default=5)
    f.add_argument("--rings-rural", type=int, default=10)
    f.add_argument("--points-per-ring", type=int, default=15)
    f.add_argument("--window", type=float, default=5.0, help="smoothing window for --mode smoothed, km")
    f.add_argument("--out", required=True, help="fit JSON")
    f.add_argument("--seed", type=int, default=0)

    r = sub.add_parser("predict", help="predict risk on a grid")
    r.add_argument("--fit", required=True)
    r.add_argument("--mesh", help="override the mesh path stored in the fit")
    r.add_argument("--raster", action="append", type=_raster_arg, default=None, metavar="NAME=path[:transform]")
    r.add_argument("--grid", type=float, default=5.0, dest="cellsize", help="grid cell size, km")
    r.add_argument("--samples", type=int, default=1000)
    r.add_argument("--admin", help="admin regions for areal aggregation")
    r.add_argument("--population", help="population raster for areal aggregation")
    r.add_argument("--areal-out", help="CSV of population-weighted areal risk")
    r.add_argument("--out", required=True, help="grid CSV")
    r.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("simulate", help="run a simulation scenario")
    s.add_argument("--config", required=True, help="scenario file (key = value)")
    s.add_argument("--out-dir", default=".")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.add_argument("--dump-data", action="store_true", help="write each replicate's cluster table")

    e = sub.add_parser("evaluate", help="score predictions or summarize a scenario")
    g = e.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", help="scenario JSON written by simulate")
    g.add_argument("--pred", help="grid CSV written by predict")
    e.add_argument("--truth", help="CSV with x_km, y_km, eta (required with --pred)")
    e.add_argument("--out", required=True)
    return p


def _cmd_mesh(a):
    dom = read_polygon(a.domain)
    ext = a.extension if a.extension is not None else 0.15 * dom.bbox_diameter()
    mesh = build_mesh(dom, a.max_edge, a.max_edge_exterior, ext)
    write_mesh(mesh, a.out)
    log.info("mesh: %d nodes, %d triangles", mesh.n_nodes, mesh.n_triangles)


def _cmd_fit(a):
    data = read_clusters(a.data)
    mesh = read_mesh(a.mesh)
    covars = _load_covariates(a.raster)
    admin = read_admin_map(a.admin) if a.admin else AdminMap.single(mesh.interior_domain)
    spec = ModelSpec(
        mode=a.mode,
        prior=PcPriorConfig(a.prior_range, a.prior_sd, a.prior_range_prob, a.prior_sd_prob),
        rings_urban=a.rings_urban,
        rings_rural=a.rings_rural,
        points_per_ring=a.points_per_ring,
        window=a.window,
    )
    res = fit(data, spec, mesh, covars, admin)
    d = res.to_dict()
    d["inputs"] = {
        "data": str(Path(a.data).resolve()),
        "mesh": str(Path(a.mesh).resolve()),
        "rasters": [[n, str(Path(p).resolve()), t] for n, p, t in a.raster],
        "clusters_used": len(res.clusters_used),
        "clusters_total": len(data),
    }
    atomic_write_text(a.out, json.dumps(d, indent=1) + "\n")
    log.info("fit: rho=%.3f km sigma2=%.4f", res.rho, res.sigma2)


def _grid(bounds, cellsize):
    x0, y0, x1, y1 = bounds
    nx = max(int(np.ceil((x1 - x0) / cellsize)), 1)
    ny = max(int(np.ceil((y1 - y0) / cellsize)), 1)
    xc = x0 + (np.arange(nx) + 0.5) * cellsize
    yc = y0 + (np.arange(ny) + 0.5) * cellsize
    xx, yy = np.meshgrid(xc, yc)
    return np.column_stack([xx.ravel(), yy.ravel()])


def _cmd_predict(a):
    with open(a.fit) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", a.fit, exc.lineno) from None
    inputs = d.get("inputs", {})
    mesh = read_mesh(a.mesh or inputs["mesh"])
    specs = a.raster if a.raster is not None else [tuple(x) for x in inputs.get("rasters", [])]
    covars = _load_covariates(specs)
    mf = ModelFit.from_dict(d, mesh, covars)
    dom = mesh.interior_domain
    pts = _grid(dom.bounds, a.cellsize)
    inside = dom.contains(pts)
    keep = a.areal_out is not None
    pred = predict(mf, pts, n_samples=a.samples, rng=a.seed, keep_samples=keep)
    missing = pred.missing | ~inside
    buf = io.StringIO()
    buf.write(f"# mode={mf.spec.mode}; x_km,y_km: cell centre in km; r_*: risk (probability); "
              f"eta_*: logit scale; cellsize_km={a.cellsize}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x_km", "y_km", "r_median", "r_mean", "r_cv", "eta_mean", "eta_sd", "missing"])
    for i in range(len(pts)):
        if missing[i]:
            w.writerow([repr(float(pts[i, 0])), repr(float(pts[i, 1])), "", "", "", "", "", 1])
        else:
            w.writerow([repr(float(pts[i, 0])), repr(float(pts[i, 1])), repr(float(pred.r_median[i])), repr(float(pred.r_mean[i])),
                        repr(float(pred.r_cv[i])), repr(float(pred.eta_mean[i])), repr(float(pred.eta_sd[i])), 0])
    atomic_write_text(a.out, buf.getvalue())
    if keep:
        if not (a.admin and a.population):
            raise CliError("--areal-out needs --admin and --population")
        pred.missing = missing
        areal = aggregate(pred, read_admin_map(a.admin), read_raster(a.population))
        buf = io.StringIO()
        buf.write(f"# mode={mf.spec.mode}; population-weighted mean risk (probability) and CV per region\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["region_id", "r_mean", "r_cv", "missing"])
        for rid, mu, cv, miss in zip(areal.region_ids, areal.mean, areal.cv, areal.missing):
            w.writerow([rid, "" if miss else repr(float(mu)), "" if miss else repr(float(cv)), int(miss)])
        atomic_write_text(a.areal_out, buf.getvalue())


def _cmd_simulate(a):
    cfg = read_scenario_config(a.config)
    if a.seed is not None:
        from dataclasses import replace

        cfg = replace(cfg, seed=a.seed)
    out = Path(a.out_dir)
    res = run_scenario(cfg, dump_dir=out / "data" if a.dump_data else None,
                       progress=lambda r: log.info("replicate %d %s: %s", r["replicate"], r["model"], r["status"]))
    tab = res.score_table()
    atomic_write_text(out / f"{cfg.name}_scores.txt", tab.to_text())
    atomic_write_text(out / f"{cfg.name}_scores.csv", f"# mode=all models; scenario={cfg.name}; rho in km\n" + tab.to_csv())
    atomic_write_text(out / f"{cfg.name}_replicates.csv",
                      f"# mode=per row; scenario={cfg.name}; rho in km, scores on logit scale\n" + res.replicate_csv())
    atomic_write_text(out / f"{cfg.name}_result.json", res.to_json() + "\n")
    print(tab.to_text(), end="")


def _read_csv_table(path):
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.DictReader(lines))
    if not rows:
        raise FormatError("no rows", path)
    return rows


def _cmd_evaluate(a):
    if a.scenario:
        from .simulate import ScenarioResult, parse_scenario_config

        with open(a.scenario) as fh:
            d = json.load(fh)
        cfg = parse_scenario_config(d["config"], a.scenario)
        # the JSON sorts its keys; restore the parameter order of the config
        truth = {k: d["truth"][k] for k in cfg.truth()}
        res = ScenarioResult(cfg, truth, d["models"], d["records"])
        atomic_write_text(a.out, res.score_table().to_text())
        return
    if not a.truth:
        raise CliError("--pred needs --truth")
    pred = _read_csv_table(a.pred)
    truth = {(r["x_km"], r["y_km"]): r["eta"] for r in _read_csv_table(a.truth)}
    mean, sd, eta = [], [], []
    for i, r in enumerate(pred):
        key = (r["x_km"], r["y_km"])
        if r.get("missing") == "1" or key not in truth:
            continue
        try:
            mean.append(float(r["eta_mean"]))
            sd.append(float(r["eta_sd"]))
            eta.append(float(truth[key]))
        except ValueError as exc:
            raise FormatError(str(exc), a.pred, i + 2) from None
    rmse, crps = prediction_scores(mean, sd, eta)
    with open(a.pred) as fh:
        first = fh.readline()
    mode = first.split("mode=", 1)[1].split(";", 1)[0] if "mode=" in first else "unknown"
    atomic_write_text(a.out, f"# mode={mode}; scores on the logit scale over {len(eta)} locations\n"
                             f"pred_rmse_logit,crps_logit\n{float(rmse)!r},{float(crps)!r}\n")


COMMANDS = {"mesh": _cmd_mesh, "fit": _cmd_fit, "predict": _cmd_predict, "simulate": _cmd_simulate,
            "evaluate": _cmd_evaluate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except (JitterAdjError, CliError, OSError, KeyError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        if isinstance(exc, KeyError):
            msg = f"missing entry {msg}"
        print(f"jitteradj {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
