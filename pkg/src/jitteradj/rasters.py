"""Covariate rasters: ESRI ASCII grids, transforms, extraction and window means.

Cell indices in this module count columns from the west edge and rows from
the south edge, so a point on a shared cell edge falls in the cell with the
higher index.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

TRANSFORMS = ("log1p-standardize", "unit-scale", "none")
_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


@dataclass(frozen=True, eq=False)
class Raster:
    """Regular grid; ``values`` is stored top row first, like the file format."""

    ncols: int
    nrows: int
    xll: float
    yll: float
    cellsize: float
    values: np.ndarray
    nodata: float = -9999.0

    def __post_init__(self):
        if not self.cellsize > 0:
            raise InvalidInputError("cellsize must be positive")
        vals = np.asarray(self.values, dtype=float)
        if vals.size != self.ncols * self.nrows:
            raise InvalidInputError(
                f"raster has {vals.size} values, header implies {self.ncols * self.nrows}"
            )
        vals = vals.reshape(self.nrows, self.ncols)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @cached_property
    def mask(self) -> np.ndarray:
        """True where the cell holds data."""
        return (self.values != self.nodata) & np.isfinite(self.values)

    def data(self) -> np.ndarray:
        return self.values[self.mask]

    def with_values(self, values) -> "Raster":
        return Raster(self.ncols, self.nrows, self.xll, self.yll, self.cellsize, values, self.nodata)

    def cell_centers(self):
        """Centre coordinates ``(xc, yc)`` of columns and of stored (top-first) rows."""
        xc = self.xll + (np.arange(self.ncols) + 0.5) * self.cellsize
        yc = self.yll + (self.nrows - np.arange(self.nrows) - 0.5) * self.cellsize
        return xc, yc

    @cached_property
    def _sat(self):
        # summed-area tables in south-up orientation, padded with a zero row/column
        m = self.mask[::-1]
        v = np.where(m, self.values[::-1], 0.0)
        s = np.zeros((self.nrows + 1, self.ncols + 1))
        s[1:, 1:] = v.cumsum(0).cumsum(1)
        k = np.zeros((self.nrows + 1, self.ncols + 1))
        k[1:, 1:] = m.cumsum(0).cumsum(1)
        return s, k

    def __eq__(self, other):
        if not isinstance(other, Raster):
            return NotImplemented
        return (
            (self.ncols, self.nrows, self.xll, self.yll, self.cellsize, self.nodata)
            == (other.ncols, other.nrows, other.xll, other.yll, other.cellsize, other.nodata)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def read_raster(path) -> Raster:
    """Parse an ESRI ASCII grid."""
    lines = Path(path).read_text().split("\n")
    header = {}
    i = 0
    while i < len(lines) and len(header) < 6:
        s = lines[i].strip()
        i += 1
        if not s:
            continue
        parts = s.split()
        key = parts[0].lower()
        if key in ("xllcenter", "yllcenter"):
            raise FormatError("cell-centre registration is not supported", path, i)
        if key not in _HEADER_KEYS or len(parts) != 2:
            raise FormatError(f"malformed header line {s!r}", path, i)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise FormatError(f"non-numeric header value {s!r}", path, i) from None
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise FormatError(f"missing header fields {missing}", path)
    try:
        vals = np.array(" ".join(lines[i:]).split(), dtype=float)
    except ValueError as exc:
        raise FormatError(f"non-numeric cell value ({exc})", path) from None
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if vals.size != ncols * nrows:
        raise FormatError(f"expected {ncols * nrows} values, found {vals.size}", path)
    return Raster(ncols, nrows, header["xllcorner"], header["yllcorner"], header["cellsize"], vals,
                  header["nodata_value"])


def format_raster(r: Raster) -> str:
    out = [
        f"ncols {r.ncols}",
        f"nrows {r.nrows}",
        f"xllcorner {float(r.xll)!r}",
        f"yllcorner {float(r.yll)!r}",
        f"cellsize {float(r.cellsize)!r}",
        f"NODATA_value {float(r.nodata)!r}",
    ]
    out += [" ".join(repr(float(v)) for v in row) for row in r.values]
    return "\n".join(out) + "\n"


def write_raster(r: Raster, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, format_raster(r))


def transform(r: Raster, kind: str) -> Raster:
    """Apply a covariate transform over all data cells.

    ``log1p-standardize`` takes ``log(1 + x)`` then centres and scales with the
    population standard deviation; ``unit-scale`` maps to ``[0, 1]``.
    """
    if kind not in TRANSFORMS:
        raise InvalidInputError(f"unknown transform {kind!r}; expected one of {TRANSFORMS}")
    if kind == "none":
        return r
    m = r.mask
    x = r.values[m]
    if x.size == 0:
        raise InvalidInputError("raster has no data cells")
    if kind == "log1p-standardize":
        if np.any(x < 0):
            raise InvalidInputError("log1p transform needs non-negative values")
        lx = np.log1p(x)
        sd = lx.std()
        if not sd > 0:
            raise InvalidInputError("zero variance after log1p; cannot standardize")
        y = (lx - lx.mean()) / sd
    else:
        lo, hi = x.min(), x.max()
        if not hi > lo:
            raise InvalidInputError("constant raster cannot be unit-scaled")
        y = (x - lo) / (hi - lo)
    out = np.array(r.values, dtype=float)
    out[m] = y
    return r.with_values(out)


def _cell_index(r: Raster, pts):
    col = np.floor((pts[:, 0] - r.xll) / r.cellsize).astype(np.int64)
    row_s = np.floor((pts[:, 1] - r.yll) / r.cellsize).astype(np.int64)
    ok = (col >= 0) & (col < r.ncols) & (row_s >= 0) & (row_s < r.nrows)
    return col, row_s, ok


def extract(r: Raster, points) -> np.ndarray:
    """Value of the cell containing each point; NaN marks missing."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    col, row_s, ok = _cell_index(r, pts)
    out = np.full(len(pts), np.nan)
    rows = r.nrows - 1 - row_s[ok]
    v = r.values[rows, col[ok]]
    good = r.mask[rows, col[ok]]
    out[np.nonzero(ok)[0][good]] = v[good]
    return out


def window_average(r: Raster, points, window: float = 5.0) -> np.ndarray:
    """Mean of data cells whose centres fall in the ``window`` x ``window`` square.

    When no cell centre falls inside the square (windows smaller than a
    cell) the containing cell's value is used, so the result tends to
    :func:`extract` as the window shrinks. NaN marks missing.
    """
    if not window > 0:
        raise InvalidInputError("window must be positive")
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    h = 0.5 * window
    cs = r.cellsize
    c0 = np.ceil((pts[:, 0] - h - r.xll) / cs - 0.5).astype(np.int64)
    c1 = np.floor((pts[:, 0] + h - r.xll) / cs - 0.5).astype(np.int64)
    r0 = np.ceil((pts[:, 1] - h - r.yll) / cs - 0.5).astype(np.int64)
    r1 = np.floor((pts[:, 1] + h - r.yll) / cs - 0.5).astype(np.int64)
    c0 = np.clip(c0, 0, r.ncols)
    r0 = np.clip(r0, 0, r.nrows)
    c1 = np.clip(c1 + 1, 0, r.ncols)
    r1 = np.clip(r1 + 1, 0, r.nrows)
    empty = (c1 <= c0) | (r1 <= r0)
    c1 = np.maximum(c1, c0)
    r1 = np.maximum(r1, r0)
    s, k = r._sat
    tot = s[r1, c1] - s[r0, c1] - s[r1, c0] + s[r0, c0]
    cnt = k[r1, c1] - k[r0, c1] - k[r1, c0] + k[r0, c0]
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(cnt > 0, tot / cnt, np.nan)
    if np.any(empty):
        out[empty] = extract(r, pts[empty])
    return out


@dataclass(frozen=True, eq=False)
class CovariateSet:
    """Named, already-transformed covariate rasters.

    ``raw`` keeps the untransformed inputs and ``tags`` the transform applied
    to each, so a design matrix can be rebuilt from files.
    """

    names: tuple
    rasters: tuple
    tags: tuple
    raw: tuple = field(default=())

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise InvalidInputError("covariate names must be unique")
        if not (len(self.names) == len(self.rasters) == len(self.tags)):
            raise InvalidInputError("names, rasters and tags must align")

    @classmethod
    def from_raw(cls, items) -> "CovariateSet":
        """Build from ``(name, raster, transform)`` triples."""
        names, rasters, tags, raw = [], [], [], []
        for name, r, tag in items:
            names.append(name)
            rasters.append(transform(r, tag))
            tags.append(tag)
            raw.append(r)
        return cls(tuple(names), tuple(rasters), tuple(tags), tuple(raw))

    @classmethod
    def empty(cls) -> "CovariateSet":
        return cls((), (), (), ())

    def __len__(self):
        return len(self.names)

    @property
    def n_fixed(self) -> int:
        """Number of fixed effects including the intercept."""
        return len(self.names) + 1

    def design(self, points, window: float | None = None) -> np.ndarray:
        """Design matrix ``[1, x_1(s), ...]``; NaN where any covariate is missing."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        cols = [np.ones(len(pts))]
        for r in self.rasters:
            cols.append(extract(r, pts) if window is None else window_average(r, pts, window))
        return np.column_stack(cols)
