"""2D walking environments and walkable distance fields.

A scenario is a rectangular walkable area with polygonal obstacles plus an
origin and a destination region.  Steering is driven by distance fields:
geodesic (walkable) distance to a target, solved with a fast-marching
eikonal scheme on the occupancy grid, so that level sets stay close to
circular instead of inheriting the grid metric.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely
from scipy import ndimage
from shapely.geometry import LineString, Polygon, box

from .errors import ScenarioError
from .textio import Section, parse_sections

DEFAULT_RESOLUTION = 0.10  # m per cell, well under one body diameter

_SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class WalkingGeometry:
    """Polygonal obstacles plus origin/destination regions inside a bounding box."""

    obstacles: tuple[Polygon, ...]
    origin_region: Polygon
    destination_region: Polygon
    bounds: tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

    @property
    def width(self) -> float:
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self) -> float:
        return self.bounds[3] - self.bounds[1]

    def frame(self) -> LineString:
        """Boundary of the walkable bounding box, treated as one barrier."""
        return box(*self.bounds).exterior


@dataclass
class OccupancyGrid:
    """Boolean walkability raster; cell (iy, ix) center is at origin + (ix+.5, iy+.5)*h."""

    resolution: float
    origin: tuple[float, float]
    walkable: np.ndarray  # bool, shape (ny, nx)

    @property
    def shape(self) -> tuple[int, int]:
        return self.walkable.shape

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        ny, nx = self.walkable.shape
        xs = self.origin[0] + (np.arange(nx) + 0.5) * self.resolution
        ys = self.origin[1] + (np.arange(ny) + 0.5) * self.resolution
        return np.meshgrid(xs, ys)

    def cell_of(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer cell indices (iy, ix) for an (n, 2) array of points, clipped to the grid."""
        pts = np.atleast_2d(points)
        ix = np.floor((pts[:, 0] - self.origin[0]) / self.resolution).astype(np.int64)
        iy = np.floor((pts[:, 1] - self.origin[1]) / self.resolution).astype(np.int64)
        ny, nx = self.walkable.shape
        return (np.minimum(np.maximum(iy, 0), ny - 1),
                np.minimum(np.maximum(ix, 0), nx - 1))

    def is_walkable_at(self, points: np.ndarray) -> np.ndarray:
        iy, ix = self.cell_of(points)
        return self.walkable[iy, ix]

    def region_mask(self, region: Polygon) -> np.ndarray:
        xs, ys = self.cell_centers()
        return shapely.contains_xy(region, xs.ravel(), ys.ravel()).reshape(self.walkable.shape)


@dataclass
class DistanceField:
    """Walkable distance to a target region or curve, with interpolated gradients.

    Sampling uses bilinear interpolation over the walkable corner cells only
    (weights of wall cells are dropped and the rest renormalized), on arrays
    padded with one invalid ghost ring so no bounds checks are needed.
    """

    grid: OccupancyGrid
    values: np.ndarray  # float64, +inf on non-walkable cells

    def __post_init__(self):
        gx, gy = _field_gradients(self.values, self.grid.resolution)
        ok = self.grid.walkable & np.isfinite(self.values)
        self._ok = np.pad(ok.astype(np.float64), 1).ravel()
        self._vz = np.pad(np.where(ok, self.values, 0.0), 1).ravel()
        self._gxz = np.pad(np.where(ok, gx, 0.0), 1).ravel()
        self._gyz = np.pad(np.where(ok, gy, 0.0), 1).ravel()
        self._stride = self.grid.shape[1] + 2

    def _weights(self, points: np.ndarray):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        h = self.grid.resolution
        ny, nx = self.grid.shape
        u = (pts[:, 0] - self.grid.origin[0]) / h + 0.5  # +1 ghost shift, -0.5 center
        v = (pts[:, 1] - self.grid.origin[1]) / h + 0.5
        i0 = np.minimum(np.maximum(np.floor(u).astype(np.int64), 0), nx)
        j0 = np.minimum(np.maximum(np.floor(v).astype(np.int64), 0), ny)
        fu = u - i0
        fv = v - j0
        flat = j0 * self._stride + i0
        idx = np.empty((len(pts), 4), dtype=np.int64)
        idx[:, 0] = flat
        idx[:, 1] = flat + 1
        idx[:, 2] = flat + self._stride
        idx[:, 3] = flat + self._stride + 1
        w = np.empty((len(pts), 4))
        w[:, 0] = (1 - fu) * (1 - fv)
        w[:, 1] = fu * (1 - fv)
        w[:, 2] = (1 - fu) * fv
        w[:, 3] = fu * fv
        w *= self._ok.take(idx)
        return idx, w, w.sum(axis=1)

    def sample(self, points: np.ndarray) -> np.ndarray:
        """Bilinear field value at points; +inf where no walkable support exists."""
        idx, w, den = self._weights(points)
        num = (w * self._vz.take(idx)).sum(axis=1)
        out = np.full(len(num), np.inf)
        ok = den > 1e-12
        out[ok] = num[ok] / den[ok]
        return out

    def gradient(self, points: np.ndarray) -> np.ndarray:
        """Bilinear gradient (d/dx, d/dy) at points; zero where unsupported."""
        idx, w, den = self._weights(points)
        out = np.zeros((len(den), 2))
        ok = den > 1e-12
        out[ok, 0] = (w * self._gxz.take(idx)).sum(axis=1)[ok] / den[ok]
        out[ok, 1] = (w * self._gyz.take(idx)).sum(axis=1)[ok] / den[ok]
        return out

    def sample_with_gradient(self, points: np.ndarray):
        """Value and gradient in one interpolation pass."""
        idx, w, den = self._weights(points)
        val = np.full(len(den), np.inf)
        grad = np.zeros((len(den), 2))
        ok = den > 1e-12
        val[ok] = (w * self._vz.take(idx)).sum(axis=1)[ok] / den[ok]
        grad[ok, 0] = (w * self._gxz.take(idx)).sum(axis=1)[ok] / den[ok]
        grad[ok, 1] = (w * self._gyz.take(idx)).sum(axis=1)[ok] / den[ok]
        return val, grad

    def steering(self, points: np.ndarray) -> np.ndarray:
        """Unit descent direction at points; zero vector on/near the target."""
        g = self.gradient(points)
        norm = np.hypot(g[:, 0], g[:, 1])
        out = np.zeros_like(g)
        ok = norm > 1e-9
        out[ok] = -g[ok] / norm[ok, None]
        return out


def steering_direction(fld: DistanceField, position) -> np.ndarray:
    """Unit vector of steepest descent at one position (zero when on the target)."""
    return fld.steering(np.atleast_2d(np.asarray(position, dtype=float)))[0]


# ---------------------------------------------------------------------------
# scenario files

def parse_scenario(text: str) -> WalkingGeometry:
    """Parse scenario text (sections: bounds, obstacle*, origin, destination)."""
    sections = parse_sections(text)
    bounds = None
    obstacles: list[Polygon] = []
    origin = destination = None
    for sec in sections:
        if sec.name == "bounds":
            lo = sec.floats("min")
            hi = sec.floats("max")
            if len(lo) != 2 or len(hi) != 2:
                raise ScenarioError(f"[bounds] needs 'min = x y' and 'max = x y' (line {sec.line})")
            bounds = (lo[0], lo[1], hi[0], hi[1])
        elif sec.name == "obstacle":
            obstacles.append(_polygon_from_rows(sec))
        elif sec.name == "origin":
            origin = _polygon_from_rows(sec)
        elif sec.name == "destination":
            destination = _polygon_from_rows(sec)
        else:
            raise ScenarioError(f"unknown scenario section [{sec.name}] at line {sec.line}")
    if bounds is None or origin is None or destination is None:
        raise ScenarioError("scenario needs [bounds], [origin] and [destination] sections")
    geometry = WalkingGeometry(tuple(obstacles), origin, destination, bounds)
    validate_geometry(geometry)
    return geometry


def load_geometry(path: str | Path) -> WalkingGeometry:
    """Load and validate a scenario file."""
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {p}")
    return parse_scenario(p.read_text(encoding="utf-8"))


def write_scenario(geometry: WalkingGeometry, path: str | Path, comment: str = "") -> None:
    out = []
    if comment:
        out.extend(f"# {line}" for line in comment.splitlines())
    xmin, ymin, xmax, ymax = geometry.bounds
    out += ["[bounds]", f"min = {xmin:.2f} {ymin:.2f}", f"max = {xmax:.2f} {ymax:.2f}", ""]
    for poly in geometry.obstacles:
        out.append("[obstacle]")
        out.extend(f"{x:.2f} {y:.2f}" for x, y in _ring_coords(poly))
        out.append("")
    for name, poly in (("origin", geometry.origin_region), ("destination", geometry.destination_region)):
        out.append(f"[{name}]")
        out.extend(f"{x:.2f} {y:.2f}" for x, y in _ring_coords(poly))
        out.append("")
    Path(path).write_text("\n".join(out), encoding="utf-8")


def _ring_coords(poly: Polygon):
    coords = list(poly.exterior.coords)
    return coords[:-1] if coords[0] == coords[-1] else coords


def _polygon_from_rows(sec: Section) -> Polygon:
    if len(sec.rows) < 3:
        raise ScenarioError(f"section [{sec.name}] at line {sec.line} needs at least 3 vertices")
    for row in sec.rows:
        if len(row) != 2:
            raise ScenarioError(f"section [{sec.name}] at line {sec.line}: vertex rows must be 'x y'")
    poly = Polygon([(r[0], r[1]) for r in sec.rows])
    # normalize orientation to counter-clockwise
    return shapely.geometry.polygon.orient(poly, sign=1.0)


def validate_geometry(geometry: WalkingGeometry) -> None:
    """Check all structural invariants; raises ScenarioError naming the offender."""
    xmin, ymin, xmax, ymax = geometry.bounds
    if not (xmax > xmin and ymax > ymin):
        raise ScenarioError("bounds are empty or inverted")
    frame = box(*geometry.bounds)
    for idx, poly in enumerate(geometry.obstacles):
        if not poly.is_valid or poly.is_empty:
            raise ScenarioError(f"obstacle {idx} is not a simple polygon")
        if not frame.covers(poly):
            raise ScenarioError(f"obstacle {idx} extends outside the bounds")
    for i in range(len(geometry.obstacles)):
        for j in range(i + 1, len(geometry.obstacles)):
            inter = geometry.obstacles[i].intersection(geometry.obstacles[j])
            if inter.area > 1e-9:
                raise ScenarioError(f"obstacles {i} and {j} overlap")
    for name, region in (("origin", geometry.origin_region), ("destination", geometry.destination_region)):
        if not region.is_valid or region.is_empty:
            raise ScenarioError(f"{name} region is not a simple polygon")
        if not frame.covers(region):
            raise ScenarioError(f"{name} region extends outside the bounds")
        for idx, poly in enumerate(geometry.obstacles):
            if region.intersection(poly).area > 1e-9:
                raise ScenarioError(f"{name} region overlaps obstacle {idx}")
    # origin and destination must live in one walkable connected component
    grid = rasterize(geometry, DEFAULT_RESOLUTION, check_connected=False)
    if not _connected(grid, geometry):
        raise ScenarioError("origin and destination are not connected through walkable space")


# ---------------------------------------------------------------------------
# rasterization

def rasterize(geometry: WalkingGeometry, resolution: float, check_connected: bool = True) -> OccupancyGrid:
    """Boolean occupancy raster: a cell is non-walkable iff its center is inside an obstacle.

    Deterministic for identical inputs.  Raises ScenarioError when the chosen
    resolution disconnects origin from destination.
    """
    if resolution <= 0:
        raise ScenarioError("resolution must be positive")
    xmin, ymin, xmax, ymax = geometry.bounds
    nx = max(1, int(math.ceil((xmax - xmin) / resolution - 1e-9)))
    ny = max(1, int(math.ceil((ymax - ymin) / resolution - 1e-9)))
    grid = OccupancyGrid(resolution, (xmin, ymin), np.ones((ny, nx), dtype=bool))
    xs, ys = grid.cell_centers()
    flat_x, flat_y = xs.ravel(), ys.ravel()
    blocked = np.zeros(flat_x.shape, dtype=bool)
    for poly in geometry.obstacles:
        blocked |= shapely.contains_xy(poly, flat_x, flat_y)
    grid.walkable = ~blocked.reshape((ny, nx))
    if check_connected and not _connected(grid, geometry):
        raise ScenarioError(
            f"resolution {resolution} m disconnects origin from destination; use a finer grid"
        )
    return grid


def _connected(grid: OccupancyGrid, geometry: WalkingGeometry) -> bool:
    labels, _ = ndimage.label(grid.walkable, structure=np.ones((3, 3), dtype=int))
    o_mask = grid.region_mask(geometry.origin_region) & grid.walkable
    d_mask = grid.region_mask(geometry.destination_region) & grid.walkable
    if not o_mask.any() or not d_mask.any():
        return False
    return bool(set(np.unique(labels[o_mask])) & set(np.unique(labels[d_mask])))


# ---------------------------------------------------------------------------
# eikonal distance fields

def distance_field(grid: OccupancyGrid, target, cost: np.ndarray | None = None) -> DistanceField:
    """Walkable distance to `target` (a shapely polygon/line or point array).

    Solved with a fast-marching scheme using both the axis and the diagonal
    stencil, which keeps free-space level sets circular to well under one
    cell over domain-scale distances; each corner turned can add up to one
    cell diagonal.  An optional per-cell cost multiplier (>= 1) makes travel
    through marked cells expensive, e.g. to keep steering characteristics a
    body width away from walls.
    """
    seeds_idx, seeds_val = _seed_cells(grid, target)
    if len(seeds_idx) == 0:
        raise ScenarioError("distance-field target does not intersect walkable space")
    values = _solve_eikonal(grid.walkable, seeds_idx, seeds_val, grid.resolution, cost)
    return DistanceField(grid, values)


def _seed_cells(grid: OccupancyGrid, target) -> tuple[np.ndarray, np.ndarray]:
    """Walkable cells seeding the wavefront, with sub-cell initial distances."""
    h = grid.resolution
    ny, nx = grid.shape
    if isinstance(target, np.ndarray):
        target = LineString(target) if len(target) > 1 else shapely.Point(target[0])
    xs, ys = grid.cell_centers()
    flat_x, flat_y = xs.ravel(), ys.ravel()
    walk = grid.walkable.ravel()
    if isinstance(target, Polygon):
        inside = shapely.contains_xy(target, flat_x, flat_y) & walk
        # collar of outside cells seeded with their true distance to the region
        near = ~inside & walk
        pts = shapely.points(np.column_stack([flat_x[near], flat_y[near]]))
        dist = shapely.distance(target, pts)
        collar = dist <= 2 * h
        idx_in = np.flatnonzero(inside)
        idx_near = np.flatnonzero(near)[collar]
        idx = np.concatenate([idx_in, idx_near])
        val = np.concatenate([np.zeros(len(idx_in)), dist[collar]])
    else:
        pts = shapely.points(np.column_stack([flat_x, flat_y]))
        dist = shapely.distance(target, pts)
        sel = (dist <= 1.5 * h) & walk
        idx = np.flatnonzero(sel)
        val = dist[sel]
    return idx, val


def _solve_eikonal(walkable: np.ndarray, seed_idx: np.ndarray, seed_val: np.ndarray,
                   h: float, cost: np.ndarray | None = None) -> np.ndarray:
    """Fast-marching solve of |grad T| = cost on the walkable cells.

    Updates combine the 4-neighbor quadratic with the 45-degree rotated
    (diagonal) quadratic and one-sided fallbacks, taking the smallest
    candidate.  Runs on flat python lists; numpy scalar indexing would
    dominate the runtime otherwise.
    """
    ny, nx = walkable.shape
    n = ny * nx
    walk = walkable.ravel().tolist()
    costs = None if cost is None else cost.ravel().tolist()
    T = [math.inf] * n
    heap: list[tuple[float, int]] = []
    for i, v in zip(seed_idx.tolist(), seed_val.tolist()):
        if walk[i] and v < T[i]:
            T[i] = v
            heap.append((v, i))
    heapq.heapify(heap)
    frozen = bytearray(n)
    g0 = h * _SQRT2
    push = heapq.heappush
    pop = heapq.heappop
    inf = math.inf

    while heap:
        tv, ci = pop(heap)
        if frozen[ci]:
            continue
        frozen[ci] = 1
        cy, cx = divmod(ci, nx)
        for dy in (-1, 0, 1):
            yy = cy + dy
            if yy < 0 or yy >= ny:
                continue
            base = yy * nx
            for dx in (-1, 0, 1):
                if dx == 0 and dy == 0:
                    continue
                xx = cx + dx
                if xx < 0 or xx >= nx:
                    continue
                mi = base + xx
                if frozen[mi] or not walk[mi]:
                    continue
                if costs is None:
                    hh, g = h, g0
                else:
                    c = costs[mi]
                    hh, g = h * c, g0 * c
                # axis neighbors of the cell being updated
                a = T[mi - 1] if xx > 0 and walk[mi - 1] else inf
                t = T[mi + 1] if xx + 1 < nx and walk[mi + 1] else inf
                if t < a:
                    a = t
                b = T[mi - nx] if yy > 0 and walk[mi - nx] else inf
                t = T[mi + nx] if yy + 1 < ny and walk[mi + nx] else inf
                if t < b:
                    b = t
                # diagonal neighbors, grouped into the rotated axis pair
                d1 = inf
                if yy > 0 and xx > 0 and walk[mi - nx - 1]:
                    d1 = T[mi - nx - 1]
                if yy + 1 < ny and xx + 1 < nx and walk[mi + nx + 1]:
                    t = T[mi + nx + 1]
                    if t < d1:
                        d1 = t
                d2 = inf
                if yy > 0 and xx + 1 < nx and walk[mi - nx + 1]:
                    d2 = T[mi - nx + 1]
                if yy + 1 < ny and xx > 0 and walk[mi + nx - 1]:
                    t = T[mi + nx - 1]
                    if t < d2:
                        d2 = t
                # axis stencil
                if a < inf and b < inf:
                    diff = a - b
                    if -hh < diff < hh:
                        cand = 0.5 * (a + b + math.sqrt(2.0 * hh * hh - diff * diff))
                    else:
                        cand = (a if a < b else b) + hh
                elif a < inf:
                    cand = a + hh
                elif b < inf:
                    cand = b + hh
                else:
                    cand = inf
                # rotated stencil
                if d1 < inf and d2 < inf:
                    diff = d1 - d2
                    if -g < diff < g:
                        c2 = 0.5 * (d1 + d2 + math.sqrt(2.0 * g * g - diff * diff))
                    else:
                        c2 = (d1 if d1 < d2 else d2) + g
                elif d1 < inf:
                    c2 = d1 + g
                elif d2 < inf:
                    c2 = d2 + g
                else:
                    c2 = inf
                if c2 < cand:
                    cand = c2
                if cand < T[mi]:
                    T[mi] = cand
                    push(heap, (cand, mi))

    values = np.array(T, dtype=np.float64).reshape(ny, nx)
    values[~walkable] = np.inf
    return values


def _field_gradients(values: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Central differences falling back to one-sided next to walls."""
    ny, nx = values.shape
    padded = np.pad(values, 1, constant_values=np.inf)
    center = padded[1:-1, 1:-1]
    right, left = padded[1:-1, 2:], padded[1:-1, :-2]
    up, down = padded[2:, 1:-1], padded[:-2, 1:-1]

    def one_axis(plus, minus):
        fp, fm = np.isfinite(plus), np.isfinite(minus)
        g = np.zeros_like(center)
        both = fp & fm
        g[both] = (plus[both] - minus[both]) / (2 * h)
        only_p = fp & ~fm
        g[only_p] = (plus[only_p] - center[only_p]) / h
        only_m = fm & ~fp
        g[only_m] = (center[only_m] - minus[only_m]) / h
        g[~np.isfinite(center)] = 0.0
        return g

    return one_axis(right, left), one_axis(up, down)


def clearance_field(grid: OccupancyGrid) -> DistanceField:
    """Euclidean distance to the nearest non-walkable cell (wall repulsion input)."""
    dist = ndimage.distance_transform_edt(grid.walkable, sampling=grid.resolution)
    return DistanceField(grid, np.asarray(dist, dtype=np.float64))


def region_distance_outside(grid: OccupancyGrid, region: Polygon) -> np.ndarray:
    """Per-cell Euclidean distance to `region` (0 inside); used for exit detection."""
    inside = grid.region_mask(region)
    dist = ndimage.distance_transform_edt(~inside, sampling=grid.resolution)
    return np.asarray(dist, dtype=np.float64)
