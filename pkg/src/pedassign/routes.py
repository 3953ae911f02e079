"""Topologically distinct routes and their intermediate destinations.

Two walkable paths belong to the same route when one can be deformed into
the other without sweeping across an obstacle of at least the configured
minimum extent.  Routes are enumerated combinatorially over gateways (the
maximal walkable gaps between qualifying barriers), and each route is
realized as a chain of intermediate destinations whose upstream borders are
iso-distance contours of the walkable distance to the next target
downstream.  Every border point therefore has the same walkable distance to
the next destination, which is what lets pedestrians follow global detours
without ever turning at a border.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import LineString, Polygon

from .errors import RouteConstructionError, ScenarioError
from .geometry import (
    DEFAULT_RESOLUTION,
    DistanceField,
    OccupancyGrid,
    WalkingGeometry,
    clearance_field,
    distance_field,
    rasterize,
)
from .textio import parse_sections

Signature = tuple[tuple[int, str], ...]  # ((obstacle id, 'left'|'right'), ...)

FRAME_ID = -1  # barrier id of the outer boundary


@dataclass(frozen=True)
class RouteSetConfig:
    """Knobs controlling which obstacles separate routes and which routes survive."""

    min_obstacle_extent: float = 0.5  # obstacles smaller than this never split routes
    max_detour_factor: float = 3.0  # routes longer than factor x shortest are dropped
    resolution: float = DEFAULT_RESOLUTION
    min_gateway_width: float = 0.45  # gaps narrower than a body are treated as walls
    clearance_band: float = 0.30  # steering keeps about a body radius off walls
    clearance_penalty: float = 1.3  # metric cost inside the band

    def __post_init__(self):
        if self.min_obstacle_extent <= 0:
            raise ScenarioError("min_obstacle_extent must be positive")
        if self.max_detour_factor < 1:
            raise ScenarioError("max_detour_factor must be >= 1")


@dataclass(frozen=True)
class Gateway:
    """Maximal walkable gap between two barriers (obstacles or the boundary)."""

    id: int
    a: tuple[float, float]
    b: tuple[float, float]
    barrier_a: int
    barrier_b: int

    @property
    def width(self) -> float:
        return math.hypot(self.b[0] - self.a[0], self.b[1] - self.a[1])

    @property
    def midpoint(self) -> tuple[float, float]:
        return (0.5 * (self.a[0] + self.b[0]), 0.5 * (self.a[1] + self.b[1]))

    @property
    def normal(self) -> tuple[float, float]:
        dx, dy = self.b[0] - self.a[0], self.b[1] - self.a[1]
        w = math.hypot(dx, dy)
        return (-dy / w, dx / w)


@dataclass
class Route:
    """One homotopy class, realized as a chain of crossable border polylines.

    The steering field is a single walkable distance-to-destination solve on
    a domain where every gateway NOT on this route is sealed.  Each border is
    an iso-contour of that field, so a pedestrian descending the gradient
    crosses every border orthogonally and never turns at one.
    """

    id: int
    signature: Signature
    gateway_ids: tuple[int, ...]
    gateway_widths: tuple[float, ...]
    borders: list[np.ndarray]  # upstream border polyline per intermediate destination
    levels: list[float]  # border iso values in border_field, decreasing downstream
    field: DistanceField  # steering: sealed distance with wall-clearance penalty
    border_field: DistanceField  # plain sealed walkable distance; borders are its isos
    length: float  # arc length of the traced representative path
    representative: np.ndarray  # traced polyline, origin anchor to destination

    @property
    def n_intermediate(self) -> int:
        return len(self.borders)


@dataclass
class RouteSet:
    """All routes of a scenario plus the shared grid artifacts the simulator needs."""

    geometry: WalkingGeometry
    grid: OccupancyGrid
    config: RouteSetConfig
    gateways: list[Gateway]
    routes: list[Route]
    destination_field: DistanceField

    def __len__(self) -> int:
        return len(self.routes)

    def by_width_sequence(self) -> dict[tuple[str, ...], Route]:
        """Routes keyed by their door-size sequence ('wide'/'narrow' per passage).

        Only meaningful when gateway widths form two groups; used for
        reporting on the two-wall example scene.
        """
        widths = sorted({round(g.width, 3) for r in self.routes for g in
                         (self.gateways[i] for i in r.gateway_ids)})
        if not widths:
            return {}
        split = 0.5 * (widths[0] + widths[-1])
        out = {}
        for r in self.routes:
            key = tuple("narrow" if self.gateways[i].width <= split else "wide"
                        for i in r.gateway_ids)
            out[key] = r
        return out


# ---------------------------------------------------------------------------
# gateways

def detect_gateways(geometry: WalkingGeometry, config: RouteSetConfig) -> list[Gateway]:
    """Find maximal walkable gaps between qualifying barriers.

    A candidate is the closest-approach segment of a barrier pair; it is kept
    when every interior sample of the segment has exactly that pair as its
    two nearest barriers (this rejects spurious long 'gaps' across open
    rooms) and the segment does not cross a third barrier.  Each side of the
    outer frame counts as its own barrier so an obstacle can open passages
    on several sides.
    """
    xmin, ymin, xmax, ymax = geometry.bounds
    barriers: list = [
        LineString([(xmin, ymin), (xmax, ymin)]),
        LineString([(xmax, ymin), (xmax, ymax)]),
        LineString([(xmax, ymax), (xmin, ymax)]),
        LineString([(xmin, ymax), (xmin, ymin)]),
    ]
    ids = [FRAME_ID] * 4
    for idx, poly in enumerate(geometry.obstacles):
        if _diameter(poly) >= config.min_obstacle_extent:
            barriers.append(poly)
            ids.append(idx)
    candidates = []
    for i in range(len(barriers)):
        for j in range(i + 1, len(barriers)):
            if ids[i] == FRAME_ID and ids[j] == FRAME_ID:
                continue
            seg = _closest_gap_segment(barriers[i], barriers[j])
            if seg is None:
                continue
            (pa, pb) = seg
            width = math.hypot(pb[0] - pa[0], pb[1] - pa[1])
            if width < config.min_gateway_width:
                continue
            if not _gap_is_local(pa, pb, i, j, barriers):
                continue
            if _gap_blocked(pa, pb, i, j, barriers, ids):
                continue
            candidates.append((pa, pb, ids[i], ids[j]))
    candidates.sort(key=lambda c: (round(0.5 * (c[0][0] + c[1][0]), 6),
                                   round(0.5 * (c[0][1] + c[1][1]), 6)))
    return [Gateway(k, pa, pb, ba, bb) for k, (pa, pb, ba, bb) in enumerate(candidates)]


def _diameter(poly: Polygon) -> float:
    pts = np.asarray(poly.exterior.coords)
    d = 0.0
    for i in range(len(pts)):
        dd = np.hypot(pts[:, 0] - pts[i, 0], pts[:, 1] - pts[i, 1]).max()
        d = max(d, float(dd))
    return d


def _boundary_segments(geom) -> list[tuple[np.ndarray, np.ndarray]]:
    if isinstance(geom, Polygon):
        coords = np.asarray(geom.exterior.coords)
    else:
        coords = np.asarray(geom.coords)
    return [(coords[k], coords[k + 1]) for k in range(len(coords) - 1)]


def _closest_gap_segment(ga, gb):
    """Deterministic closest-approach segment between two barriers.

    For parallel faces the whole overlap attains the minimum distance; the
    midpoint of the overlap interval is used so that door segments land in
    the middle of the jamb faces.
    """
    dmin = shapely.distance(ga, gb)
    if dmin <= 1e-9:
        return None
    best = None
    for sa0, sa1 in _boundary_segments(ga):
        for sb0, sb1 in _boundary_segments(gb):
            res = _segment_pair_closest(sa0, sa1, sb0, sb1)
            if res is None:
                continue
            d, pa, pb, overlap = res
            if d <= dmin + 1e-9:
                key = (round(0.5 * (pa[0] + pb[0]), 9), round(0.5 * (pa[1] + pb[1]), 9))
                # prefer parallel-face candidates (longest achieving overlap)
                rank = (-overlap, key)
                if best is None or d < best[0] - 1e-12 or (abs(d - best[0]) <= 1e-12 and rank < best[3]):
                    best = (d, tuple(pa), tuple(pb), rank)
    if best is None:
        return None
    return best[1], best[2]


def _segment_pair_closest(p0, p1, q0, q1):
    """Closest points of two segments; parallel overlaps resolve to interval middles."""
    u = p1 - p0
    v = q1 - q0
    lu, lv = np.hypot(*u), np.hypot(*v)
    if lu < 1e-12 or lv < 1e-12:
        return None
    cross = u[0] * v[1] - u[1] * v[0]
    if abs(cross) < 1e-9 * lu * lv:  # parallel
        # project q endpoints onto p's axis
        t0 = np.dot(q0 - p0, u) / (lu * lu)
        t1 = np.dot(q1 - p0, u) / (lu * lu)
        lo, hi = max(0.0, min(t0, t1)), min(1.0, max(t0, t1))
        if hi >= lo:  # overlapping faces: take the interval middle
            tm = 0.5 * (lo + hi)
            pa = p0 + tm * u
            s = np.clip(np.dot(pa - q0, v) / (lv * lv), 0.0, 1.0)
            pb = q0 + s * v
            return float(np.hypot(*(pa - pb))), pa, pb, float((hi - lo) * lu)
    best = None
    # candidate pairs: each endpoint against the other segment
    for a, (b0, b1, w, lw) in ((p0, (q0, q1, v, lv)), (p1, (q0, q1, v, lv))):
        s = np.clip(np.dot(a - b0, w) / (lw * lw), 0.0, 1.0)
        b = b0 + s * w
        d = float(np.hypot(*(a - b)))
        if best is None or d < best[0]:
            best = (d, a.copy(), b, 0.0)
    for a, (b0, b1, w, lw) in ((q0, (p0, p1, u, lu)), (q1, (p0, p1, u, lu))):
        s = np.clip(np.dot(a - b0, w) / (lw * lw), 0.0, 1.0)
        b = b0 + s * w
        d = float(np.hypot(*(a - b)))
        if best is None or d < best[0]:
            best = (d, b, a.copy(), 0.0)
    return best


def _gap_is_local(pa, pb, i, j, barriers) -> bool:
    """Interior samples of the gap must see exactly barriers i, j as nearest two."""
    for t in np.linspace(0.15, 0.85, 7):
        p = shapely.Point(pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))
        dists = sorted((shapely.distance(b, p), k) for k, b in enumerate(barriers))
        nearest = {dists[0][1], dists[1][1]}
        if nearest != {i, j}:
            return False
        if len(dists) > 2 and dists[2][0] <= dists[1][0] + 1e-9:
            return False  # ambiguous third barrier: not a clean passage
    return True


def _gap_blocked(pa, pb, i, j, barriers, ids) -> bool:
    seg = LineString([pa, pb])
    for k, b in enumerate(barriers):
        if k in (i, j) or ids[k] == FRAME_ID:
            continue
        if seg.distance(b) < 1e-9:
            return True
    return False


# ---------------------------------------------------------------------------
# region graph and candidate gateway sequences

def _gateway_sequences(geometry: WalkingGeometry, grid: OccupancyGrid,
                       gateways: list[Gateway]) -> list[tuple[int, ...]]:
    """Simple paths of gateway crossings from origin to destination regions.

    The walkable raster is cut along every gateway segment and labeled; each
    gateway becomes an edge between the regions on its two sides, and every
    simple region path yields one candidate route.
    """
    h = grid.resolution
    cut = np.zeros(grid.shape, dtype=bool)
    for gw in gateways:
        _stamp_segment(cut, grid, gw.a, gw.b, radius=0.6 * h)
    labels, _ = ndimage.label(grid.walkable & ~cut, structure=_CROSS)

    def side_label(gw: Gateway, sign: float) -> int:
        nx_, ny_ = gw.normal
        mx, my = gw.midpoint
        for k in range(1, 12):
            p = np.array([[mx + sign * nx_ * k * 0.5 * h, my + sign * ny_ * k * 0.5 * h]])
            iy, ix = grid.cell_of(p)
            lab = int(labels[iy[0], ix[0]])
            if lab > 0:
                return lab
        return 0

    edges = []
    for gw in gateways:
        la, lb = side_label(gw, +1.0), side_label(gw, -1.0)
        if la == 0 or lb == 0 or la == lb:
            continue  # degenerate or non-separating gap: cannot carry a route
        edges.append((la, lb, gw.id))

    origin_labels = set(np.unique(labels[grid.region_mask(geometry.origin_region) & (labels > 0)]))
    dest_labels = set(np.unique(labels[grid.region_mask(geometry.destination_region) & (labels > 0)]))
    if not origin_labels or not dest_labels:
        raise ScenarioError("origin or destination has no walkable cells after gateway cuts")

    sequences: list[tuple[int, ...]] = []

    def dfs(node: int, visited: set[int], seq: list[int]):
        if node in dest_labels:
            sequences.append(tuple(seq))
            # a destination region may still lead elsewhere, but routes stop here
            return
        for la, lb, gid in edges:
            nxt = lb if la == node else la if lb == node else None
            if nxt is None or nxt in visited:
                continue
            visited.add(nxt)
            seq.append(gid)
            dfs(nxt, visited, seq)
            seq.pop()
            visited.remove(nxt)

    for start in sorted(origin_labels):
        dfs(start, {start}, [])
    # distinct sequences only (origin may touch several regions)
    return sorted(set(sequences), key=lambda s: (len(s), s))


_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=int)


def _stamp_segment(mask: np.ndarray, grid: OccupancyGrid, a, b, radius: float) -> None:
    h = grid.resolution
    length = math.hypot(b[0] - a[0], b[1] - a[1])
    n = max(2, int(length / (0.25 * h)) + 1)
    ts = np.linspace(0.0, 1.0, n)
    px = a[0] + ts * (b[0] - a[0])
    py = a[1] + ts * (b[1] - a[1])
    r = max(1, int(math.ceil(radius / h)))
    iy, ix = grid.cell_of(np.column_stack([px, py]))
    ny, nx = grid.shape
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            yy = np.clip(iy + dy, 0, ny - 1)
            xx = np.clip(ix + dx, 0, nx - 1)
            mask[yy, xx] = True


# ---------------------------------------------------------------------------
# homotopy signatures from path polylines

def route_signature(path: np.ndarray, geometry: WalkingGeometry, config: RouteSetConfig) -> Signature:
    """Crossing signature of a walkable path w.r.t. qualifying obstacles.

    Each qualifying obstacle casts an upward cut ray from an interior anchor
    point; walking across the ray left-to-right records (id, 'right'),
    right-to-left records (id, 'left').  Adjacent inverse crossings cancel,
    so the result is invariant under deformations that cross no qualifying
    obstacle.
    """
    pts = np.asarray(path, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ScenarioError("path must be a polyline with at least two points")
    _check_path_walkable(pts, geometry, tol=config.resolution)
    events: list[tuple[float, int, str]] = []
    for idx, poly in enumerate(geometry.obstacles):
        if _diameter(poly) < config.min_obstacle_extent:
            continue
        anchor = poly.representative_point()
        # deterministic nudge keeps path vertices off the cut line
        ax = anchor.x + 1e-7 * (idx + 1)
        ay = anchor.y
        for k in range(len(pts) - 1):
            x0, y0 = pts[k]
            x1, y1 = pts[k + 1]
            if not ((x0 < ax <= x1) or (x1 < ax <= x0)):
                continue
            t = (ax - x0) / (x1 - x0)
            ycross = y0 + t * (y1 - y0)
            if ycross <= ay:
                continue  # cut ray points upward from the anchor
            side = "right" if x1 > x0 else "left"
            events.append((k + t, idx, side))
    events.sort(key=lambda e: e[0])
    return _reduce_crossings([(i, s) for _, i, s in events])


def _reduce_crossings(raw: list[tuple[int, str]]) -> Signature:
    stack: list[tuple[int, str]] = []
    for item in raw:
        if stack and stack[-1][0] == item[0] and stack[-1][1] != item[1]:
            stack.pop()  # immediate back-crossing of the same cut
        else:
            stack.append(item)
    return tuple(stack)


def _check_path_walkable(pts: np.ndarray, geometry: WalkingGeometry, tol: float = 0.0) -> None:
    # `tol` forgives grid-deep skims along obstacle faces (cell-center walkability)
    xmin, ymin, xmax, ymax = geometry.bounds
    if (pts[:, 0] < xmin - 1e-9).any() or (pts[:, 0] > xmax + 1e-9).any() or \
       (pts[:, 1] < ymin - 1e-9).any() or (pts[:, 1] > ymax + 1e-9).any():
        raise ScenarioError("path exits the walkable bounds")
    for idx, poly in enumerate(geometry.obstacles):
        probe = poly.buffer(-tol) if tol > 0 else poly
        if probe.is_empty:
            continue
        if shapely.contains_xy(probe, pts[:, 0], pts[:, 1]).any():
            raise ScenarioError(f"path enters obstacle {idx}")


# ---------------------------------------------------------------------------
# intermediate destinations

def _sealed_grid(grid: OccupancyGrid, gateways: list[Gateway],
                 open_ids: tuple[int, ...]) -> OccupancyGrid:
    """Copy of the grid with every gateway not in `open_ids` stamped shut."""
    closed = [gw for gw in gateways if gw.id not in open_ids]
    if not closed:
        return grid
    cut = np.zeros(grid.shape, dtype=bool)
    for gw in closed:
        _stamp_segment(cut, grid, gw.a, gw.b, radius=0.6 * grid.resolution)
    return OccupancyGrid(grid.resolution, grid.origin, grid.walkable & ~cut)


def _wall_cost(grid: OccupancyGrid, config: RouteSetConfig,
               gateways: list[Gateway] | None = None) -> np.ndarray | None:
    """Metric penalty close to physical walls; rounds characteristics off jambs."""
    if config.clearance_penalty <= 1.0 or config.clearance_band <= 0.0:
        return None
    clear = clearance_field(grid)
    return np.where(clear.values < config.clearance_band, config.clearance_penalty, 1.0)


def _build_route_field(seq: tuple[int, ...], gateways: list[Gateway], grid: OccupancyGrid,
                       geometry: WalkingGeometry, cost: np.ndarray | None):
    """Fields, border polylines and iso levels for one gateway sequence.

    The borders come from the plain sealed distance field: working backward
    from the destination, the border anchored at each gateway is the
    iso-contour at the value of that gateway's midpoint, so levels decrease
    downstream.  Steering uses a second solve with the wall-clearance
    penalty, whose characteristics round off door jambs.
    """
    sealed = _sealed_grid(grid, gateways, seq)
    pure = distance_field(sealed, geometry.destination_region)
    steer = distance_field(sealed, geometry.destination_region, cost=cost) \
        if cost is not None else pure
    m = len(seq)
    borders: list[np.ndarray] = [None] * m
    levels: list[float] = [0.0] * m
    prev_level = 0.0
    for k in range(m - 1, -1, -1):
        gw = gateways[seq[k]]
        level = float(pure.sample(np.array([gw.midpoint]))[0])
        if not np.isfinite(level):
            raise RouteConstructionError(
                f"gateway {gw.id} is unreachable from the destination", gw.id)
        if level <= prev_level:
            raise RouteConstructionError(
                f"gateway {gw.id} is not upstream of its successor on this route", gw.id)
        borders[k] = _extract_border(pure, level, gw)
        levels[k] = level
        prev_level = level
    return steer, pure, borders, levels


def _extract_border(fld: DistanceField, level: float, gw: Gateway) -> np.ndarray:
    """Iso-contour component of `fld` at `level`, anchored at the gateway.

    The component must close against non-walkable space on both ends and
    stay local to the gateway; anything else marks a construction failure.
    """
    segments = _marching_squares(fld.values, fld.grid, level)
    if not segments:
        raise RouteConstructionError(f"no iso-contour at gateway {gw.id}", gw.id)
    polylines = _chain_segments(segments)
    mid = np.asarray(gw.midpoint)
    best, best_d = None, np.inf
    for pl in polylines:
        d = float(np.hypot(pl[:, 0] - mid[0], pl[:, 1] - mid[1]).min())
        if d < best_d:
            best, best_d = pl, d
    h = fld.grid.resolution
    if best_d > max(2 * h, 0.5 * gw.width):
        raise RouteConstructionError(
            f"iso-contour does not pass through gateway {gw.id}", gw.id)
    local_radius = 0.5 * gw.width + 2.5
    far = np.hypot(best[:, 0] - mid[0], best[:, 1] - mid[1]).max()
    if far > local_radius:
        raise RouteConstructionError(
            f"border at gateway {gw.id} escapes the gateway neighborhood", gw.id)
    if _polyline_length(best) < 2 * h:
        raise RouteConstructionError(f"border at gateway {gw.id} is degenerate", gw.id)
    closed_loop = np.allclose(best[0], best[-1], atol=1e-9)
    if not closed_loop:
        for end in (best[0], best[-1]):
            if not _near_blocked(fld.grid, end, max_cells=3):
                raise RouteConstructionError(
                    f"border at gateway {gw.id} fails to close against walls", gw.id)
    # deterministic orientation
    if (best[0][0], best[0][1]) > (best[-1][0], best[-1][1]):
        best = best[::-1]
    return best


def _near_blocked(grid: OccupancyGrid, point, max_cells: int) -> bool:
    iy, ix = grid.cell_of(np.array([point]))
    iy, ix = int(iy[0]), int(ix[0])
    ny, nx = grid.shape
    r = max_cells
    y0, y1 = max(0, iy - r), min(ny, iy + r + 1)
    x0, x1 = max(0, ix - r), min(nx, ix + r + 1)
    window = grid.walkable[y0:y1, x0:x1]
    edge = iy - r < 0 or iy + r + 1 > ny or ix - r < 0 or ix + r + 1 > nx
    return bool((~window).any() or edge)


def _marching_squares(values: np.ndarray, grid: OccupancyGrid, level: float):
    """Linear-interpolated level-set segments over squares of walkable cell centers."""
    ny, nx = values.shape
    h = grid.resolution
    x0 = grid.origin[0] + 0.5 * h
    y0 = grid.origin[1] + 0.5 * h
    v = values
    finite = np.isfinite(v)
    ok = finite[:-1, :-1] & finite[:-1, 1:] & finite[1:, :-1] & finite[1:, 1:]
    iy, ix = np.nonzero(ok)
    segs = []
    for cy, cx in zip(iy.tolist(), ix.tolist()):
        c00 = v[cy, cx] - level
        c10 = v[cy, cx + 1] - level
        c01 = v[cy + 1, cx] - level
        c11 = v[cy + 1, cx + 1] - level
        case = (c00 > 0) | ((c10 > 0) << 1) | ((c11 > 0) << 2) | ((c01 > 0) << 3)
        if case in (0, 15):
            continue
        bx = x0 + cx * h
        by = y0 + cy * h

        def interp(f0, f1, p0, p1):
            t = f0 / (f0 - f1) if f0 != f1 else 0.5
            return (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1]))

        bottom = interp(c00, c10, (bx, by), (bx + h, by))
        right = interp(c10, c11, (bx + h, by), (bx + h, by + h))
        top = interp(c01, c11, (bx, by + h), (bx + h, by + h))
        left = interp(c00, c01, (bx, by), (bx, by + h))
        table = {
            1: [(bottom, left)], 14: [(bottom, left)],
            2: [(bottom, right)], 13: [(bottom, right)],
            3: [(left, right)], 12: [(left, right)],
            4: [(right, top)], 11: [(right, top)],
            6: [(bottom, top)], 9: [(bottom, top)],
            7: [(left, top)], 8: [(left, top)],
        }
        if case in (5, 10):  # saddle: resolve by cell-center average
            center = 0.25 * (c00 + c10 + c01 + c11)
            if (case == 5) == (center > 0):
                segs.extend([(bottom, right), (left, top)])
            else:
                segs.extend([(bottom, left), (right, top)])
        else:
            segs.extend(table[case])
    return segs


def _chain_segments(segs) -> list[np.ndarray]:
    """Join level-set segments into polylines via shared endpoints."""
    def key(p):
        return (round(p[0], 6), round(p[1], 6))

    adj: dict[tuple, list[tuple]] = {}
    for a, b in segs:
        adj.setdefault(key(a), []).append((a, b))
        adj.setdefault(key(b), []).append((b, a))
    seen = set()
    polylines = []
    for a, b in segs:
        if (key(a), key(b)) in seen or (key(b), key(a)) in seen:
            continue
        chain = [a, b]
        seen.add((key(a), key(b)))
        # extend forward then backward
        for _ in range(2):
            while True:
                tail = chain[-1]
                options = [nb for (p, nb) in adj.get(key(tail), [])
                           if (key(tail), key(nb)) not in seen and (key(nb), key(tail)) not in seen]
                if not options:
                    break
                nxt = min(options, key=key)
                seen.add((key(tail), key(nxt)))
                chain.append(nxt)
            chain.reverse()
        polylines.append(np.asarray(chain, dtype=float))
    return polylines


def _polyline_length(pts: np.ndarray) -> float:
    d = np.diff(pts, axis=0)
    return float(np.hypot(d[:, 0], d[:, 1]).sum())


# ---------------------------------------------------------------------------
# tracing and enumeration

def trace_route(fld: DistanceField, dest_mask: np.ndarray, grid: OccupancyGrid,
                start, max_length: float) -> np.ndarray | None:
    """Descend a route's steering field from `start`; None when the walk stalls."""
    h = grid.resolution
    step = 0.5 * h
    pos = np.asarray(start, dtype=float).copy()
    pts = [pos.copy()]
    travelled = 0.0
    while travelled < max_length:
        iy, ix = grid.cell_of(pos[None, :])
        if dest_mask[iy[0], ix[0]]:
            return np.asarray(pts)
        d = fld.steering(pos[None, :])[0]
        if d[0] == 0.0 and d[1] == 0.0:
            return None
        nxt = pos + d * step
        if not grid.is_walkable_at(nxt[None, :])[0]:
            # slide along the blocking face
            for trial in (np.array([d[0], 0.0]), np.array([0.0, d[1]])):
                cand = pos + trial * step
                if (trial[0] or trial[1]) and grid.is_walkable_at(cand[None, :])[0]:
                    nxt = cand
                    break
            else:
                return None
        pos = nxt
        travelled += step
        pts.append(pos.copy())
    return None


def enumerate_routes(geometry: WalkingGeometry, config: RouteSetConfig | None = None) -> RouteSet:
    """All homotopy-distinct routes within the detour bound, shortest first.

    Ordering is by traced representative length (rounded to 1e-6 m), ties by
    signature; ids are 1-based in that order.  Output is a pure function of
    geometry and config.
    """
    config = config or RouteSetConfig()
    grid = rasterize(geometry, config.resolution)
    gateways = detect_gateways(geometry, config)
    sequences = _gateway_sequences(geometry, grid, gateways)
    if not sequences:
        raise ScenarioError("no walkable connection from origin to destination")
    dest_field = distance_field(grid, geometry.destination_region)
    dest_mask = grid.region_mask(geometry.destination_region) & grid.walkable
    start = geometry.origin_region.representative_point()
    start = (start.x, start.y)
    shortest = float(dest_field.sample(np.array([start]))[0])
    if not np.isfinite(shortest):
        raise ScenarioError("origin is not connected to the destination")
    max_len = config.max_detour_factor * shortest + 10.0

    cost = _wall_cost(grid, config, gateways)
    built = []
    for seq in sequences:
        steer, pure, borders, levels = _build_route_field(seq, gateways, grid, geometry, cost)
        if not np.isfinite(float(steer.sample(np.array([start]))[0])):
            continue
        rep = trace_route(steer, dest_mask, grid, start, max_len)
        if rep is None:
            continue
        length = _polyline_length(rep)
        if length > config.max_detour_factor * shortest:
            continue
        sig = route_signature(rep, geometry, config)
        built.append((round(length, 6), sig, seq, borders, levels, steer, pure, length, rep))

    built.sort(key=lambda item: (item[0], item[1]))
    routes = []
    seen_sigs = set()
    for rank, (_, sig, seq, borders, levels, steer, pure, length, rep) in enumerate(built, start=1):
        if sig in seen_sigs:
            raise ScenarioError(f"two gateway sequences produced the same signature {sig}")
        seen_sigs.add(sig)
        routes.append(Route(
            id=rank,
            signature=sig,
            gateway_ids=tuple(seq),
            gateway_widths=tuple(gateways[g].width for g in seq),
            borders=list(borders),
            levels=list(levels),
            field=steer,
            border_field=pure,
            length=length,
            representative=rep,
        ))
    if not routes:
        raise ScenarioError("no route satisfies the detour bound")
    return RouteSet(geometry, grid, config, gateways, routes, dest_field)


def build_intermediate_destinations(signature: Signature, geometry: WalkingGeometry,
                                    grid: OccupancyGrid, config: RouteSetConfig | None = None) -> Route:
    """Construct the Route realizing a given signature (must be enumerable)."""
    config = config or RouteSetConfig(resolution=grid.resolution)
    route_set = enumerate_routes(geometry, config)
    for route in route_set.routes:
        if route.signature == tuple(signature):
            return route
    raise ScenarioError(f"signature {signature} is not realizable in this geometry")


# ---------------------------------------------------------------------------
# route-set export

def save_route_set(route_set: RouteSet, path: str | Path, header: str = "") -> None:
    out = []
    if header:
        out.extend(f"# {line}" for line in header.splitlines())
    cfg = route_set.config
    out += ["[routeset]",
            f"resolution = {cfg.resolution}",
            f"min_obstacle_extent = {cfg.min_obstacle_extent}",
            f"max_detour_factor = {cfg.max_detour_factor}",
            f"min_gateway_width = {cfg.min_gateway_width}",
            f"clearance_band = {cfg.clearance_band}",
            f"clearance_penalty = {cfg.clearance_penalty}",
            f"n_routes = {len(route_set.routes)}", ""]
    for gw in route_set.gateways:
        out += ["[gateway]",
                f"id = {gw.id}",
                f"a = {gw.a[0]:.6f} {gw.a[1]:.6f}",
                f"b = {gw.b[0]:.6f} {gw.b[1]:.6f}",
                f"barriers = {gw.barrier_a} {gw.barrier_b}", ""]
    for route in route_set.routes:
        sig = " ".join(f"{i}:{side}" for i, side in route.signature)
        out += ["[route]",
                f"id = {route.id}",
                f"signature = {sig}",
                f"gateways = {' '.join(str(g) for g in route.gateway_ids)}",
                f"length = {route.length:.6f}", ""]
        for border, level in zip(route.borders, route.levels):
            out += ["[border]", f"route = {route.id}", f"level = {level:.6f}"]
            out.extend(f"{x:.6f} {y:.6f}" for x, y in border)
            out.append("")
    Path(path).write_text("\n".join(out), encoding="utf-8")


def load_route_set(path: str | Path, geometry: WalkingGeometry) -> RouteSet:
    """Rebuild a RouteSet (including steering fields) from an export file."""
    sections = parse_sections(Path(path).read_text(encoding="utf-8"))
    head = next(s for s in sections if s.name == "routeset")
    config = RouteSetConfig(
        min_obstacle_extent=float(head.require("min_obstacle_extent")),
        max_detour_factor=float(head.require("max_detour_factor")),
        resolution=float(head.require("resolution")),
        min_gateway_width=float(head.get("min_gateway_width", "0.45")),
        clearance_band=float(head.get("clearance_band", "0.25")),
        clearance_penalty=float(head.get("clearance_penalty", "1.5")),
    )
    grid = rasterize(geometry, config.resolution)
    gateways = []
    for s in sections:
        if s.name != "gateway":
            continue
        a = s.floats("a")
        b = s.floats("b")
        br = [int(x) for x in s.require("barriers").split()]
        gateways.append(Gateway(int(s.require("id")), (a[0], a[1]), (b[0], b[1]), br[0], br[1]))
    dest_field = distance_field(grid, geometry.destination_region)
    dest_mask = grid.region_mask(geometry.destination_region) & grid.walkable
    start = geometry.origin_region.representative_point()

    routes = []
    route_secs = [s for s in sections if s.name == "route"]
    border_secs = [s for s in sections if s.name == "border"]
    for rs in route_secs:
        rid = int(rs.require("id"))
        sig = tuple()
        sig_raw = rs.get("signature", "")
        if sig_raw:
            sig = tuple((int(tok.split(":")[0]), tok.split(":")[1]) for tok in sig_raw.split())
        gids = tuple(int(x) for x in rs.get("gateways", "").split())
        borders, levels = [], []
        for bs in border_secs:
            if int(bs.require("route")) != rid:
                continue
            borders.append(np.asarray(bs.rows, dtype=float))
            levels.append(float(bs.require("level")))
        sealed = _sealed_grid(grid, gateways, gids)
        pure = distance_field(sealed, geometry.destination_region)
        cost = _wall_cost(grid, config, gateways)
        steer = distance_field(sealed, geometry.destination_region, cost=cost) \
            if cost is not None else pure
        rep = trace_route(steer, dest_mask, grid, (start.x, start.y),
                          config.max_detour_factor * 1000.0)
        routes.append(Route(
            id=rid, signature=sig, gateway_ids=gids,
            gateway_widths=tuple(gateways[g].width for g in gids),
            borders=borders, levels=levels, field=steer, border_field=pure,
            length=float(rs.require("length")),
            representative=rep if rep is not None else np.zeros((0, 2)),
        ))
    routes.sort(key=lambda r: r.id)
    return RouteSet(geometry, grid, config, gateways, routes, dest_field)
