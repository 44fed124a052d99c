"""Cluster table files: one row per cluster with reported location and counts."""

from __future__ import annotations

import csv
import io

import numpy as np

from .errors import FormatError
from .inference import Dataset
from .io import atomic_write_text

COLUMNS = ("id", "x_km", "y_km", "y", "n", "urban", "admin_id")


def parse_clusters(text: str, path=None) -> Dataset:
    """Parse the CSV form; extra columns are ignored."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise FormatError("empty cluster file", path, 1)
    header = [h.strip() for h in rows[0]]
    missing = [c for c in COLUMNS[:6] if c not in header]
    if missing:
        raise FormatError(f"missing columns {missing}; expected {','.join(COLUMNS)}", path, 1)
    col = {h: i for i, h in enumerate(header)}
    ids, xy, y, n, urban, admin = [], [], [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        cid = row[col["id"]].strip()
        try:
            x = float(row[col["x_km"]])
            yy = float(row[col["y_km"]])
            yc = float(row[col["y"]])
            nc = float(row[col["n"]])
            u = row[col["urban"]].strip()
        except ValueError as exc:
            raise FormatError(f"cluster {cid}: {exc}", path, lineno) from None
        if u not in ("0", "1"):
            raise FormatError(f"cluster {cid}: urban must be 0 or 1, got {u!r}", path, lineno)
        if not (yc == int(yc) and nc == int(nc)):
            raise FormatError(f"cluster {cid}: y and n must be integers", path, lineno)
        if not (nc >= 1 and 0 <= yc <= nc):
            raise FormatError(f"cluster {cid}: need 0 <= y <= n and n >= 1, got y={yc:g}, n={nc:g}", path, lineno)
        if not (np.isfinite(x) and np.isfinite(yy)):
            raise FormatError(f"cluster {cid}: non-finite coordinates", path, lineno)
        ids.append(cid)
        xy.append((x, yy))
        y.append(yc)
        n.append(nc)
        urban.append(u == "1")
        admin.append(row[col["admin_id"]].strip() if "admin_id" in col else "")
    if not ids:
        raise FormatError("no cluster rows", path, 2)
    if len(set(ids)) != len(ids):
        raise FormatError("duplicate cluster ids", path)
    return Dataset(np.array(y), np.array(n), np.array(xy), np.array(urban), tuple(ids), tuple(admin))


def read_clusters(path) -> Dataset:
    with open(path) as fh:
        return parse_clusters(fh.read(), path)


def format_clusters(data: Dataset, extra: dict | None = None) -> str:
    """CSV text with the standard columns, then any ``extra`` per-cluster columns."""
    extra = extra or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(COLUMNS) + list(extra))
    adm = data.admin_id if data.admin_id is not None else [""] * len(data)
    for c in range(len(data)):
        row = [data.ids[c], repr(float(data.coords[c, 0])), repr(float(data.coords[c, 1])),
               int(data.y[c]), int(data.n[c]), int(bool(data.urban[c])), adm[c]]
        row += [repr(float(v[c])) if isinstance(v[c], (float, np.floating)) else v[c] for v in extra.values()]
        w.writerow(row)
    return buf.getvalue()


def write_clusters(data: Dataset, path, extra: dict | None = None) -> None:
    atomic_write_text(path, format_clusters(data, extra))
