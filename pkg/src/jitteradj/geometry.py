"""Planar polygons in km coordinates, point-in-polygon tests and polygon files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely

from . import kernels
from .errors import FormatError, InvalidInputError

_AREA_EPS = 1e-12


def _as_ring(points) -> np.ndarray:
    ring = np.asarray(points, dtype=float)
    if ring.ndim != 2 or ring.shape[1] != 2:
        raise InvalidInputError("a ring must be a sequence of (x, y) pairs")
    if not np.all(np.isfinite(ring)):
        raise InvalidInputError("ring coordinates must be finite")
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise InvalidInputError("a ring needs at least three distinct vertices")
    return np.ascontiguousarray(ring)


def ring_signed_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon with optional holes.

    Rings are stored open (the closing vertex is implied) with the exterior
    counter-clockwise and holes clockwise.
    """

    exterior: np.ndarray
    holes: tuple = field(default_factory=tuple)

    def __post_init__(self):
        ext = _as_ring(self.exterior)
        if ring_signed_area(ext) < 0:
            ext = ext[::-1].copy()
        holes = []
        for h in self.holes:
            h = _as_ring(h)
            if ring_signed_area(h) > 0:
                h = h[::-1].copy()
            holes.append(h)
        object.__setattr__(self, "exterior", ext)
        object.__setattr__(self, "holes", tuple(holes))
        shp = self.to_shapely()
        if not shapely.LinearRing(ext).is_simple:
            raise InvalidInputError("exterior ring is self-intersecting")
        if shp.area <= _AREA_EPS * max(1.0, self.bbox_diameter() ** 2):
            raise InvalidInputError("polygon has (near) zero area")

    @classmethod
    def rectangle(cls, xmin, ymin, xmax, ymax) -> "Polygon":
        return cls(np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]], float))

    def to_shapely(self) -> shapely.Polygon:
        return shapely.Polygon(self.exterior, [h for h in self.holes])

    @classmethod
    def from_shapely(cls, poly) -> "Polygon":
        if isinstance(poly, shapely.MultiPolygon):
            poly = max(poly.geoms, key=lambda g: g.area)
        return cls(np.asarray(poly.exterior.coords), tuple(np.asarray(r.coords) for r in poly.interiors))

    @property
    def area(self) -> float:
        return abs(ring_signed_area(self.exterior)) - sum(abs(ring_signed_area(h)) for h in self.holes)

    @property
    def bounds(self) -> tuple:
        lo = self.exterior.min(axis=0)
        hi = self.exterior.max(axis=0)
        return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])

    def bbox_diameter(self) -> float:
        x0, y0, x1, y1 = self.bounds
        return float(np.hypot(x1 - x0, y1 - y0))

    def contains(self, points) -> np.ndarray:
        """Ray-casting membership test; points on an edge count as inside."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        inside = kernels.points_in_ring(pts, self.exterior)
        for h in self.holes:
            # hole boundary belongs to the polygon, so only strict hole interior is removed
            in_hole = kernels.points_in_ring(pts, h) & ~kernels.points_on_ring(pts, h)
            inside &= ~in_hole
        return inside

    def boundary_distance(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return shapely.distance(self.to_shapely().boundary, shapely.points(pts))


def densify_ring(ring: np.ndarray, spacing: float) -> np.ndarray:
    """Insert vertices so no ring segment is longer than ``spacing``."""
    out = []
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        seg = np.hypot(*(b - a))
        k = max(1, int(np.ceil(seg / spacing - 1e-9)))
        t = np.arange(k)[:, None] / k
        out.append(a + t * (b - a))
    return np.vstack(out)


def read_polygon(path) -> Polygon:
    """Read a polygon file: blank-line separated rings of ``x y`` lines.

    The first block is the exterior ring, later blocks are holes. Lines
    starting with ``#`` are ignored.
    """
    text = Path(path).read_text()
    return parse_polygon(text.splitlines(), path=path)


def parse_polygon(lines, path=None, first_line=1) -> Polygon:
    rings, cur = [], []
    for lineno, raw in enumerate(lines, start=first_line):
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if cur:
                rings.append(cur)
                cur = []
            continue
        parts = line.split()
        if len(parts) != 2:
            raise FormatError(f"expected 'x y', got {line!r}", path, lineno)
        try:
            cur.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise FormatError(f"non-numeric coordinate in {line!r}", path, lineno) from None
    if cur:
        rings.append(cur)
    if not rings:
        raise FormatError("no rings found", path)
    try:
        return Polygon(np.array(rings[0]), tuple(np.array(r) for r in rings[1:]))
    except InvalidInputError as exc:
        raise FormatError(str(exc), path) from None


def format_polygon(poly: Polygon) -> str:
    blocks = []
    for ring in (poly.exterior, *poly.holes):
        blocks.append("\n".join(f"{float(x)!r} {float(y)!r}" for x, y in ring))
    return "\n\n".join(blocks) + "\n"


def write_polygon(poly: Polygon, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, format_polygon(poly))
