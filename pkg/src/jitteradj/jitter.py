"""DHS-style displacement model, constrained sampling and ring integration designs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateDesignError, FormatError, InvalidInputError, JitterRejectionError
from .geometry import Polygon, format_polygon, parse_polygon

MAX_REJECTIONS = 10_000


class AdminMap:
    """Administrative regions; lookups resolve overlaps by first match."""

    def __init__(self, regions):
        regions = [(rid, poly) for rid, poly in regions]
        ids = [rid for rid, _ in regions]
        if len(set(ids)) != len(ids):
            raise InvalidInputError("region ids must be unique")
        if not regions:
            raise InvalidInputError("an admin map needs at least one region")
        self.regions = regions
        self.ids = ids
        self._bounds = np.array([p.bounds for _, p in regions])

    @classmethod
    def single(cls, polygon: Polygon, region_id=0) -> "AdminMap":
        return cls([(region_id, polygon)])

    def __len__(self):
        return len(self.regions)

    def region_index(self, points) -> np.ndarray:
        """Index into ``regions`` of the region containing each point, -1 if none."""
        pts = np.atleast_2d(np.asarray(points, dtype=float)).reshape(-1, 2)
        out = np.full(len(pts), -1, dtype=np.int64)
        for i, (_, poly) in enumerate(self.regions):
            x0, y0, x1, y1 = self._bounds[i]
            cand = np.nonzero(
                (out < 0) & (pts[:, 0] >= x0) & (pts[:, 0] <= x1) & (pts[:, 1] >= y0) & (pts[:, 1] <= y1)
            )[0]
            if cand.size:
                hit = poly.contains(pts[cand])
                out[cand[hit]] = i
        return out

    def lookup(self, points) -> list:
        return [self.ids[i] if i >= 0 else None for i in self.region_index(points)]


def read_admin_map(path) -> AdminMap:
    """Read regions written as ``REGION <id>`` headers followed by polygon blocks."""
    lines = Path(path).read_text().splitlines()
    regions = []
    cur_id, start = None, None
    for i, raw in enumerate(lines + ["REGION __end__"]):
        s = raw.strip()
        if s.startswith("REGION"):
            if cur_id is not None:
                regions.append((cur_id, parse_polygon(lines[start:i], path=path, first_line=start + 1)))
            parts = s.split(maxsplit=1)
            if len(parts) != 2:
                raise FormatError("REGION line needs an id", path, i + 1)
            cur_id = _parse_id(parts[1])
            start = i + 1
        elif cur_id is None and s and not s.startswith("#"):
            raise FormatError("content before first REGION header", path, i + 1)
    return AdminMap(regions)


def _parse_id(s):
    try:
        return int(s)
    except ValueError:
        return s


def format_admin_map(admin: AdminMap) -> str:
    return "".join(f"REGION {rid}\n{format_polygon(p)}\n" for rid, p in admin.regions)


@dataclass(frozen=True)
class JitterScheme:
    """Radii in km; rural clusters use the long tail with probability ``tail_prob``."""

    urban_max: float = 2.0
    rural_max_main: float = 5.0
    rural_max_tail: float = 10.0
    tail_prob: float = 0.01

    def __post_init__(self):
        if not (0 < self.urban_max < self.rural_max_main < self.rural_max_tail):
            raise InvalidInputError("need 0 < urban_max < rural_max_main < rural_max_tail")
        if not (0 < self.tail_prob < 1):
            raise InvalidInputError("tail_prob must be in (0, 1)")

    def max_radius(self, urban: bool) -> float:
        return self.urban_max if urban else self.rural_max_tail

    def radial_cdf(self, r, urban):
        """``P(d <= r)`` for the displacement distance."""
        r = np.maximum(np.asarray(r, dtype=float), 0.0)
        urb = np.minimum(r, self.urban_max) / self.urban_max
        p = self.tail_prob
        rur = (1 - p) * np.minimum(r, self.rural_max_main) / self.rural_max_main + p * np.minimum(
            r, self.rural_max_tail
        ) / self.rural_max_tail
        return np.where(urban, urb, rur)

    def radial_density(self, d, urban):
        """Planar density of the displacement at distance ``d`` (per km^2)."""
        d = np.asarray(d, dtype=float)
        p = self.tail_prob
        urb = (d < self.urban_max) / self.urban_max
        rur = (1 - p) * (d < self.rural_max_main) / self.rural_max_main + p * (d < self.rural_max_tail) / self.rural_max_tail
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(urban, urb, rur) / (2 * np.pi * d)
        return np.where(d == 0, np.inf, dens)


def jitter_logdensity(s_obs, s_true, urban, admin: AdminMap | None, scheme: JitterScheme = JitterScheme()):
    """Log density of the observed location given the true one.

    Returns ``+inf`` at zero displacement (the kernel is singular there) and
    ``-inf`` outside the support or across region borders.
    """
    so = np.atleast_2d(np.asarray(s_obs, dtype=float)).reshape(-1, 2)
    st = np.atleast_2d(np.asarray(s_true, dtype=float)).reshape(-1, 2)
    d = np.hypot(*(so - st).T)
    with np.errstate(divide="ignore"):
        out = np.log(scheme.radial_density(d, urban))
    if admin is not None:
        same = admin.region_index(so) == admin.region_index(st)
        same &= admin.region_index(so) >= 0
        out = np.where(same, out, -np.inf)
    scalar = np.ndim(s_obs) == 1 and np.ndim(s_true) == 1
    return float(out[0]) if scalar else out


def _draw_radius(urban, scheme, rng, size):
    urban = np.broadcast_to(np.asarray(urban, dtype=bool), size)
    tail = rng.random(size) < scheme.tail_prob
    rmax = np.where(urban, scheme.urban_max, np.where(tail, scheme.rural_max_tail, scheme.rural_max_main))
    return rmax


def sample_jitter_many(s_true, urban, admin: AdminMap | None, scheme: JitterScheme, rng) -> np.ndarray:
    """Displace each true location, rejecting draws that leave its region.

    The rural radius component (main or tail) is drawn once per location;
    angle and distance are redrawn on rejection.
    """
    rng = np.random.default_rng(rng)
    st = np.atleast_2d(np.asarray(s_true, dtype=float)).reshape(-1, 2)
    n = len(st)
    rmax = _draw_radius(urban, scheme, rng, n)
    if admin is not None:
        region = admin.region_index(st)
        if np.any(region < 0):
            raise InvalidInputError(f"true location {int(np.argmax(region < 0))} is in no admin region")
    out = np.empty_like(st)
    todo = np.arange(n)
    for _ in range(MAX_REJECTIONS):
        ang = rng.uniform(0.0, 2.0 * np.pi, todo.size)
        dist = rng.uniform(0.0, 1.0, todo.size) * rmax[todo]
        cand = st[todo] + np.column_stack([dist * np.cos(ang), dist * np.sin(ang)])
        if admin is None:
            ok = np.ones(todo.size, dtype=bool)
        else:
            ok = admin.region_index(cand) == region[todo]
        out[todo[ok]] = cand[ok]
        todo = todo[~ok]
        if todo.size == 0:
            return out
    raise JitterRejectionError(
        f"{todo.size} locations exceeded {MAX_REJECTIONS} rejections; region too small for the jitter radius"
    )


def sample_jitter(s_true, urban: bool, admin: AdminMap | None, scheme: JitterScheme, rng) -> np.ndarray:
    return sample_jitter_many(np.asarray(s_true, float)[None, :], np.array([urban]), admin, scheme, rng)[0]


@dataclass(frozen=True, eq=False)
class IntegrationDesign:
    """Candidate true locations and weights, flattened over clusters.

    Points of cluster ``c`` occupy ``offsets[c]:offsets[c+1]``; the first of
    them is the observed location.
    """

    points: np.ndarray
    weights: np.ndarray
    offsets: np.ndarray
    urban: np.ndarray

    @property
    def n_clusters(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def cluster_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_clusters), self.counts)

    def cluster(self, c):
        sl = slice(self.offsets[c], self.offsets[c + 1])
        return self.points[sl], self.weights[sl]

    def to_text(self, cluster_ids=None) -> str:
        ids = cluster_ids if cluster_ids is not None else range(self.n_clusters)
        lines = ["cluster_id,point_index,x_km,y_km,weight"]
        for c, cid in enumerate(ids):
            pts, w = self.cluster(c)
            for k in range(len(w)):
                lines.append(f"{cid},{k},{float(pts[k, 0])!r},{float(pts[k, 1])!r},{float(w[k])!r}")
        return "\n".join(lines) + "\n"


def single_point_design(s_obs, urban=None) -> IntegrationDesign:
    pts = np.atleast_2d(np.asarray(s_obs, dtype=float)).reshape(-1, 2)
    n = len(pts)
    urb = np.zeros(n, bool) if urban is None else np.asarray(urban, dtype=bool)
    return IntegrationDesign(pts.copy(), np.ones(n), np.arange(n + 1, dtype=np.int64), urb)


def ring_template(n_rings: int, points_per_ring: int, max_radius: float, urban: bool, scheme: JitterScheme):
    """Offsets and unconstrained raw weights of one cluster's ring design.

    Ring ``j`` (1-based) sits at radius ``(j - 1/2) * max_radius / n_rings`` and
    carries the displacement mass of the annulus ``[(j-1), j] * step``; the
    innermost disc of radius ``step / 4`` belongs to the centre point and is cut
    from ring 1.
    """
    if n_rings == 0:
        return np.zeros((1, 2)), np.ones(1)
    step = max_radius / n_rings
    radii = (np.arange(1, n_rings + 1) - 0.5) * step
    inner = np.arange(n_rings) * step
    inner[0] = 0.5 * radii[0]
    outer = np.arange(1, n_rings + 1) * step
    ring_mass = scheme.radial_cdf(outer, urban) - scheme.radial_cdf(inner, urban)
    centre_mass = float(scheme.radial_cdf(0.5 * radii[0], urban))
    ang = 2.0 * np.pi * np.arange(points_per_ring) / points_per_ring
    offs = [np.zeros((1, 2))]
    w = [np.array([centre_mass])]
    for j in range(n_rings):
        offs.append(radii[j] * np.column_stack([np.cos(ang), np.sin(ang)]))
        w.append(np.full(points_per_ring, ring_mass[j] / points_per_ring))
    return np.vstack(offs), np.concatenate(w)


def integration_design(s_obs, urban, admin: AdminMap | None, scheme: JitterScheme = JitterScheme(),
                       rings_urban: int = 5, rings_rural: int = 10, points_per_ring: int = 15) -> IntegrationDesign:
    """Ring integration points and normalized weights for every cluster.

    Candidate points outside the observed location's admin region keep their
    slot with weight zero, so each urban cluster has ``1 + rings_urban *
    points_per_ring`` entries and each rural one ``1 + rings_rural *
    points_per_ring``.
    """
    so = np.atleast_2d(np.asarray(s_obs, dtype=float)).reshape(-1, 2)
    urban = np.broadcast_to(np.asarray(urban, dtype=bool), len(so)).copy()
    templates = {
        True: ring_template(rings_urban, points_per_ring, scheme.max_radius(True), True, scheme),
        False: ring_template(rings_rural, points_per_ring, scheme.max_radius(False), False, scheme),
    }
    counts = np.array([len(templates[bool(u)][1]) for u in urban], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    pts = np.empty((offsets[-1], 2))
    raw = np.empty(offsets[-1])
    for c in range(len(so)):
        off, w = templates[bool(urban[c])]
        sl = slice(offsets[c], offsets[c + 1])
        pts[sl] = so[c] + off
        raw[sl] = w
    if admin is not None:
        obs_region = admin.region_index(so)
        bad = np.nonzero(obs_region < 0)[0]
        if bad.size:
            raise InvalidInputError(f"observed location of cluster {int(bad[0])} is in no admin region")
        same = admin.region_index(pts) == np.repeat(obs_region, counts)
        raw = np.where(same, raw, 0.0)
    tot = np.add.reduceat(raw, offsets[:-1])
    bad = np.nonzero(~(tot > 0))[0]
    if bad.size:
        raise DegenerateDesignError(f"all integration weights of cluster {int(bad[0])} are zero", cluster=int(bad[0]))
    weights = raw / np.repeat(tot, counts)
    return IntegrationDesign(pts, weights, offsets, urban)
