"""Triangulation over an extended domain, FEM matrices and basis projection."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import shapely
from scipy.spatial import Delaunay

from . import kernels
from .errors import AssemblyError, FormatError, InvalidInputError
from .geometry import Polygon, densify_ring, format_polygon, parse_polygon


def _triangular_lattice(bounds, spacing):
    x0, y0, x1, y1 = bounds
    dy = spacing * np.sqrt(3.0) / 2.0
    rows = np.arange(y0 - spacing, y1 + spacing, dy)
    pts = []
    for i, yv in enumerate(rows):
        shift = 0.5 * spacing if i % 2 else 0.0
        xs = np.arange(x0 - spacing + shift, x1 + spacing, spacing)
        pts.append(np.column_stack([xs, np.full_like(xs, yv)]))
    return np.vstack(pts)


def _ring_points(shape, spacing):
    """Densified exterior ring of a shapely polygon."""
    if isinstance(shape, shapely.MultiPolygon):
        shape = max(shape.geoms, key=lambda g: g.area)
    ring = np.asarray(shape.exterior.coords)[:-1]
    return densify_ring(ring, spacing)


class TriangleLocator:
    """Uniform bucket grid over triangle bounding boxes."""

    def __init__(self, nodes, triangles):
        self.nodes = nodes
        self.triangles = triangles
        lo = nodes.min(axis=0)
        hi = nodes.max(axis=0)
        tri_pts = nodes[triangles]
        tmin = tri_pts.min(axis=1)
        tmax = tri_pts.max(axis=1)
        mean_size = float(np.mean(np.max(tmax - tmin, axis=1)))
        cell = max(mean_size, 1e-9 * max(1.0, float(np.max(hi - lo))))
        nx = max(1, int(np.ceil((hi[0] - lo[0]) / cell)))
        ny = max(1, int(np.ceil((hi[1] - lo[1]) / cell)))
        pad = 1e-9 * cell
        i0 = np.clip(np.floor((tmin[:, 0] - pad - lo[0]) / cell).astype(np.int64), 0, nx - 1)
        i1 = np.clip(np.floor((tmax[:, 0] + pad - lo[0]) / cell).astype(np.int64), 0, nx - 1)
        j0 = np.clip(np.floor((tmin[:, 1] - pad - lo[1]) / cell).astype(np.int64), 0, ny - 1)
        j1 = np.clip(np.floor((tmax[:, 1] + pad - lo[1]) / cell).astype(np.int64), 0, ny - 1)
        cells, tris = [], []
        for t in range(len(triangles)):
            ii, jj = np.meshgrid(np.arange(i0[t], i1[t] + 1), np.arange(j0[t], j1[t] + 1))
            c = (jj * nx + ii).ravel()
            cells.append(c)
            tris.append(np.full(c.size, t, dtype=np.int64))
        cells = np.concatenate(cells)
        tris = np.concatenate(tris)
        order = np.argsort(cells, kind="stable")
        self.cell_tris = tris[order]
        counts = np.bincount(cells, minlength=nx * ny)
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.x0, self.y0, self.cell, self.nx, self.ny = float(lo[0]), float(lo[1]), cell, nx, ny

    def kernel_args(self):
        """Grid arguments of :func:`kernels.locate_points` after points, nodes and triangles."""
        return self.x0, self.y0, self.cell, self.nx, self.ny, self.cell_start, self.cell_tris

    def locate(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        return kernels.locate_points(pts, self.nodes, self.triangles, *self.kernel_args())


@dataclass(frozen=True, eq=False)
class TriangulationMesh:
    """Planar triangulation; triangles are stored counter-clockwise."""

    nodes: np.ndarray
    triangles: np.ndarray
    interior_domain: Polygon
    extension_width: float = 0.0

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        tris = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if tris.ndim != 2 or tris.shape[1] != 3:
            raise InvalidInputError("triangles must be an (n, 3) index array")
        if tris.size and (tris.min() < 0 or tris.max() >= len(nodes)):
            raise InvalidInputError("triangle node index out of range")
        area2 = _signed_area2(nodes, tris)
        flip = area2 < 0
        if np.any(flip):
            tris = tris.copy()
            tris[flip] = tris[flip][:, [0, 2, 1]]
        nodes.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "triangles", tris)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def triangle_areas(self) -> np.ndarray:
        return 0.5 * _signed_area2(self.nodes, self.triangles)

    @property
    def area(self) -> float:
        return float(self.triangle_areas().sum())

    def edges(self) -> np.ndarray:
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    def interior_triangles(self) -> np.ndarray:
        return self.interior_domain.contains(self.centroids())

    @cached_property
    def locator(self) -> TriangleLocator:
        return TriangleLocator(self.nodes, self.triangles)

    @cached_property
    def fem(self) -> "FemMatrices":
        return fem_matrices(self)


def _signed_area2(nodes, tris):
    a = nodes[tris[:, 0]]
    b = nodes[tris[:, 1]]
    c = nodes[tris[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])


def build_mesh(domain: Polygon, max_edge_interior: float, max_edge_exterior: float | None = None,
               extension_width: float = 0.0) -> TriangulationMesh:
    """Triangulate ``domain`` plus an outer extension band.

    Nodes are a triangular lattice of spacing ``max_edge_interior`` inside the
    domain, the densified domain boundary, a few graded offset rings and a
    coarser lattice of spacing ``max_edge_exterior`` in the extension band.
    The Delaunay triangulation of these nodes is clipped to the extended
    outline. Holes of ``domain`` are meshed over.
    """
    if not max_edge_interior > 0:
        raise InvalidInputError("max_edge_interior must be positive")
    if not extension_width >= 0:
        raise InvalidInputError("extension_width must be non-negative")
    h = float(max_edge_interior)
    H = float(max_edge_exterior) if max_edge_exterior is not None else h
    if H < h:
        raise InvalidInputError("max_edge_exterior must be at least max_edge_interior")

    outline = Polygon(domain.exterior)
    shp = outline.to_shapely()
    if shp.area < 1e-9 * h * h:
        raise InvalidInputError("degenerate domain polygon")

    boundary = densify_ring(outline.exterior, h)
    lattice = _triangular_lattice(outline.bounds, h)
    inside = outline.contains(lattice)
    lattice = lattice[inside]
    lattice = lattice[outline.boundary_distance(lattice) >= 0.4 * h]
    parts = [boundary, lattice]

    if extension_width > 0:
        offset, spacing = 0.0, h
        while True:
            spacing = min(H, spacing * 1.5)
            if offset + spacing > extension_width - 0.5 * spacing:
                break
            offset += spacing
            parts.append(_ring_points(shp.buffer(offset, quad_segs=8), spacing))
        outer = shp.buffer(extension_width, quad_segs=8)
        outer_ring = _ring_points(outer, H)
        parts.append(outer_ring)
        far = _triangular_lattice(outer.bounds, H)
        far_pts = shapely.points(far)
        keep = shapely.contains(outer, far_pts)
        keep &= shapely.distance(shp, far_pts) >= offset + 0.6 * spacing
        keep &= shapely.distance(outer.exterior, far_pts) >= 0.4 * H
        parts.append(far[keep])
        clip = outer
    else:
        clip = shp

    pts = np.vstack(parts)
    pts = _dedupe(pts, 1e-6 * h)
    tri = Delaunay(pts).simplices.astype(np.int64)
    area2 = _signed_area2(pts, tri)
    tri = tri[np.abs(area2) > 1e-10 * h * h]
    cent = pts[tri].mean(axis=1)
    if extension_width > 0:
        keep = shapely.contains_xy(clip, cent[:, 0], cent[:, 1])
    else:
        keep = outline.contains(cent)
    tri = tri[keep]
    used = np.unique(tri)
    remap = np.full(len(pts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangulationMesh(pts[used], remap[tri], domain, float(extension_width))


def _dedupe(pts, tol):
    key = np.round(pts / tol).astype(np.int64)
    _, idx = np.unique(key, axis=0, return_index=True)
    return pts[np.sort(idx)]


@dataclass(frozen=True, eq=False)
class FemMatrices:
    """Lumped mass ``C`` (diagonal) and stiffness ``G`` matrices."""

    C: sp.csr_matrix
    G: sp.csr_matrix

    @cached_property
    def c_diag(self) -> np.ndarray:
        return self.C.diagonal()

    @cached_property
    def G_Cinv_G(self) -> sp.csr_matrix:
        return (self.G @ sp.diags(1.0 / self.c_diag) @ self.G).tocsr()


def fem_matrices(mesh: TriangulationMesh) -> FemMatrices:
    """Assemble the lumped mass matrix and the P1 stiffness matrix."""
    nodes, tris = mesh.nodes, mesh.triangles
    m = len(nodes)
    area = 0.5 * _signed_area2(nodes, tris)
    bad = np.nonzero(~(area > 0))[0]
    if bad.size:
        raise AssemblyError(f"triangle {int(bad[0])} has zero or negative area", triangle=int(bad[0]))
    p = nodes[tris]
    # edge opposite vertex i, oriented counter-clockwise
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    K = np.einsum("tik,tjk->tij", e, e) / (4.0 * area)[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    G = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(m, m)).tocsr()
    G = ((G + G.T) * 0.5).tocsr()
    cdiag = np.bincount(tris.ravel(), weights=np.repeat(area / 3.0, 3), minlength=m)
    C = sp.diags(cdiag).tocsr()
    return FemMatrices(C, G)


@dataclass(frozen=True, eq=False)
class BasisProjection:
    """Sparse rows ``a(s)`` of piecewise-linear basis values at query points."""

    rows: sp.csr_matrix
    outside: np.ndarray = field(default=None)

    @property
    def inside(self) -> np.ndarray:
        return ~self.outside


def project(mesh: TriangulationMesh, points) -> BasisProjection:
    """Barycentric basis rows; points outside the mesh get empty rows."""
    pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
    tri, bary = mesh.locator.locate(pts)
    outside = tri < 0
    n = len(pts)
    t = np.where(outside, 0, tri)
    cols = mesh.triangles[t]
    vals = np.where(outside[:, None], 0.0, bary)
    rows = np.repeat(np.arange(n), 3)
    A = sp.coo_matrix((vals.ravel(), (rows, cols.ravel())), shape=(n, mesh.n_nodes)).tocsr()
    A.eliminate_zeros()
    return BasisProjection(A, outside)


def format_mesh(mesh: TriangulationMesh) -> str:
    out = [f"# triangulation: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles; units km",
           f"EXTENSION {float(mesh.extension_width)!r}", f"NODES {mesh.n_nodes}"]
    out += [f"{float(x)!r} {float(y)!r}" for x, y in mesh.nodes]
    out.append(f"TRIANGLES {mesh.n_triangles}")
    out += [f"{a} {b} {c}" for a, b, c in mesh.triangles]
    out.append("DOMAIN")
    out.append(format_polygon(mesh.interior_domain).rstrip("\n"))
    return "\n".join(out) + "\n"


def write_mesh(mesh: TriangulationMesh, path) -> None:
    from .io import atomic_write_text

    atomic_write_text(path, format_mesh(mesh))


def read_mesh(path) -> TriangulationMesh:
    lines = Path(path).read_text().splitlines()
    ext = 0.0
    i = 0
    nodes = tris = None
    domain = None
    while i < len(lines):
        line = lines[i].strip()
        if not line or line.startswith("#"):
            i += 1
            continue
        key, *rest = line.split()
        try:
            if key == "EXTENSION":
                ext = float(rest[0])
                i += 1
            elif key == "NODES":
                k = int(rest[0])
                nodes = np.array([[float(v) for v in lines[i + 1 + j].split()] for j in range(k)])
                i += k + 1
            elif key == "TRIANGLES":
                k = int(rest[0])
                tris = np.array([[int(v) for v in lines[i + 1 + j].split()] for j in range(k)], dtype=np.int64)
                i += k + 1
            elif key == "DOMAIN":
                domain = parse_polygon(lines[i + 1:], path=path, first_line=i + 2)
                break
            else:
                raise FormatError(f"unknown section {key!r}", path, i + 1)
        except (ValueError, IndexError) as exc:
            if isinstance(exc, FormatError):
                raise
            raise FormatError(f"malformed {key} section ({exc})", path, i + 1) from None
    if nodes is None or tris is None:
        raise FormatError("mesh file needs NODES and TRIANGLES sections", path)
    if nodes.ndim != 2 or nodes.shape[1] != 2 or tris.ndim != 2 or tris.shape[1] != 3:
        raise FormatError("bad node or triangle row width", path)
    if domain is None:
        hull = shapely.convex_hull(shapely.multipoints(nodes))
        domain = Polygon.from_shapely(hull)
    return TriangulationMesh(nodes, tris, domain, ext)
