"""Microscopic pedestrian simulation along assigned routes.

Pedestrians enter at the origin as a Poisson process, walk by a circular
social-force rule steered with the chained route distance fields, and leave
a travel-time record when they reach the destination.  One run is a pure
function of its inputs and seed; the engine keeps all per-pedestrian state
in flat numpy arrays so desk-scale demand levels stay cheap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import RunError
from .geometry import DistanceField, clearance_field, region_distance_outside
from .routes import RouteSet

SPEED_CAP_FACTOR = 1.3  # hard cap on |v| relative to the desired speed


@dataclass(frozen=True)
class ForceParameters:
    """Circular-repulsion force set; accelerations in m/s^2, ranges in m."""

    name: str = "default"
    relaxation_time: float = 0.5
    ped_strength: float = 5.0
    ped_range: float = 0.18
    anisotropy: float = 0.5  # weight of forces from behind (1 = isotropic)
    wall_strength: float = 2.5
    wall_range: float = 0.08
    cutoff: float = 1.6  # pair cutoff = hash cell size = 2x the effective interaction range
    distance_clamp: float = 0.05  # min center distance used in the force law


@dataclass(frozen=True)
class SpeedDistribution:
    """Uniform walking-speed bands mixed over two population groups (m/s)."""

    name: str = "adult_30_50"
    bands: tuple[tuple[float, float], ...] = ((0.97, 1.62), (0.71, 1.19))
    mix: tuple[float, ...] = (0.5, 0.5)

    def __post_init__(self):
        if len(self.bands) != len(self.mix) or not self.bands:
            raise RunError("speed distribution needs one mix weight per band")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise RunError("speed mix weights must sum to 1")
        for lo, hi in self.bands:
            if not 0.0 < lo <= hi <= 3.0:
                raise RunError("speed bands must lie within (0, 3.0] m/s")

    def draw(self, rng: np.random.Generator) -> float:
        k = int(rng.choice(len(self.bands), p=self.mix))
        lo, hi = self.bands[k]
        return float(rng.uniform(lo, hi))

    def mean(self) -> float:
        return float(sum(w * 0.5 * (lo + hi) for w, (lo, hi) in zip(self.mix, self.bands)))


@dataclass(frozen=True)
class SimulationConfig:
    demand: float = 1.0  # pedestrians per second
    duration: float = 600.0
    time_step: float = 0.05
    window: tuple[float, float] = (300.0, 600.0)
    seed: int = 1
    radius: float = 0.20
    speeds: SpeedDistribution = field(default_factory=SpeedDistribution)
    forces: ForceParameters = field(default_factory=ForceParameters)
    trajectory_interval: float = 0.0  # seconds between trajectory samples; 0 = off
    spawn_attempts: int = 30

    def __post_init__(self):
        if self.demand <= 0:
            raise RunError("demand must be positive")
        if not (0 < self.time_step <= 0.1):
            raise RunError("time_step must be in (0, 0.1]")
        t0, t1 = self.window
        if not (t0 < t1 <= self.duration):
            raise RunError("measurement window must satisfy t_start < t_end <= duration")


@dataclass
class PedestrianState:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    desired_speed: float
    radius: float
    route_id: int
    progress_index: int
    depart_time: float | None
    arrive_time: float | None = None


@dataclass(frozen=True)
class TravelTimeRecord:
    pedestrian_id: int
    route_id: int
    depart_s: float
    arrive_s: float


@dataclass
class RouteStats:
    mean: float | None
    count: int


def social_force(p: PedestrianState, neighbors: list[PedestrianState],
                 clearance: DistanceField, steering: np.ndarray,
                 params: ForceParameters = ForceParameters()) -> np.ndarray:
    """Acceleration on one pedestrian: driving + circular repulsion + wall term.

    Scalar reference implementation of the array kernel in Simulation._forces;
    the two must agree (covered by tests).
    """
    e = np.asarray(steering, dtype=float)
    acc = (p.desired_speed * e - p.velocity) / params.relaxation_time
    for q in neighbors:
        d = p.position - q.position
        dist = max(float(np.hypot(*d)), params.distance_clamp)
        n = d / dist
        w = params.anisotropy + (1 - params.anisotropy) * 0.5 * (1 + float(np.dot(e, -n)))
        acc = acc + w * params.ped_strength * math.exp((p.radius + q.radius - dist) / params.ped_range) * n
    c = float(clearance.sample(p.position[None, :])[0])
    if np.isfinite(c):
        g = clearance.gradient(p.position[None, :])[0]
        gn = float(np.hypot(*g))
        if gn > 1e-9:
            acc = acc + (g / gn) * params.wall_strength * math.exp((p.radius - c) / params.wall_range)
    return acc


def _pair_indices(pos: np.ndarray, cell: float):
    """All index pairs closer than `cell`, via a uniform hash over sorted cell keys."""
    n = len(pos)
    if n < 2:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    cx = np.floor(pos[:, 0] / cell).astype(np.int64)
    cy = np.floor(pos[:, 1] / cell).astype(np.int64)
    cx -= cx.min()
    cy -= cy.min()
    stride = cy.max() + 2
    key = cx * stride + cy
    order = np.argsort(key, kind="stable")
    skey = key[order]
    left_parts, right_parts = [], []
    for dx, dy in ((0, 0), (0, 1), (1, -1), (1, 0), (1, 1)):
        target = skey + dx * stride + dy
        lo = np.searchsorted(skey, target, side="left")
        hi = np.searchsorted(skey, target, side="right")
        if dx == 0 and dy == 0:
            lo = np.arange(n) + 1  # same cell: only later-sorted partners
        cnt = np.maximum(hi - lo, 0)
        tot = int(cnt.sum())
        if tot == 0:
            continue
        left = np.repeat(np.arange(n), cnt)
        offs = np.arange(tot) - np.repeat(np.cumsum(cnt) - cnt, cnt)
        right = np.repeat(lo, cnt) + offs
        left_parts.append(order[left])
        right_parts.append(order[right])
    if not left_parts:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    i = np.concatenate(left_parts)
    j = np.concatenate(right_parts)
    d = pos[i] - pos[j]
    keep = (d[:, 0] ** 2 + d[:, 1] ** 2) < cell * cell
    return i[keep], j[keep]


class Simulation:
    """One seeded run over a route set; step() advances the world by one tick."""

    def __init__(self, route_set: RouteSet, config: SimulationConfig,
                 route_probabilities: np.ndarray):
        probs = np.asarray(route_probabilities, dtype=float)
        if len(probs) != len(route_set.routes):
            raise RunError(f"need {len(route_set.routes)} route probabilities, got {len(probs)}")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-9:
            raise RunError("route probabilities must be non-negative and sum to 1")
        self.route_set = route_set
        self.config = config
        self.probs = probs
        self.rng = np.random.default_rng(config.seed)
        grid = route_set.grid
        self.grid = grid
        self.clearance = clearance_field(grid)
        self.origin_exit = region_distance_outside(grid, route_set.geometry.origin_region)
        self.dest_mask = grid.region_mask(route_set.geometry.destination_region) & grid.walkable
        self.origin_mask = grid.region_mask(route_set.geometry.origin_region) & grid.walkable
        # cells where a disc of the configured radius fits; spawn candidates
        self.spawn_ok = self.origin_mask & (self.clearance.values >= config.radius)
        ox, oy, oX, oY = route_set.geometry.origin_region.bounds
        self._origin_bbox = (ox, oy, oX, oY)

        # per-route steering field; border (pure-distance) field drives crossings
        self.fields: list[DistanceField] = [r.field for r in route_set.routes]
        self.border_fields: list[DistanceField] = [r.border_field for r in route_set.routes]
        n_routes = len(route_set.routes)
        max_prog = max(r.n_intermediate for r in route_set.routes) + 1
        # border iso level awaiting each progress state; NaN = none left
        self.level_lut = np.full((n_routes, max_prog), np.nan)
        for ri, route in enumerate(route_set.routes):
            for k, level in enumerate(route.levels):
                self.level_lut[ri, k] = level
        self.max_prog_per_route = np.array([r.n_intermediate for r in route_set.routes])

        # pedestrian arrays (active only)
        self.pos = np.zeros((0, 2))
        self.vel = np.zeros((0, 2))
        self.v0 = np.zeros(0)
        self.radius = np.zeros(0)
        self.route = np.zeros(0, dtype=np.int64)
        self.prog = np.zeros(0, dtype=np.int64)
        self.depart = np.full(0, np.nan)
        self.spawn_t = np.zeros(0)
        self.pid = np.zeros(0, dtype=np.int64)

        self.time = 0.0
        self.next_id = 0
        self.records: list[TravelTimeRecord] = []
        self.pending: list[tuple[int, float, float]] = []  # (route, v0, radius)
        self.spawned = 0
        self.deferred_spawns = 0
        self.projection_events = 0
        self.trajectory: list[tuple[float, int, float, float, int]] = []
        self._next_traj_t = 0.0

    # -- spawning ----------------------------------------------------------

    def _try_place(self, radius: float, near_pos: np.ndarray,
                   near_rad: np.ndarray) -> np.ndarray | None:
        ox, oy, oX, oY = self._origin_bbox
        h = self.grid.resolution
        gx0, gy0 = self.grid.origin
        ny, nx = self.grid.shape
        for _ in range(self.config.spawn_attempts):
            x = self.rng.uniform(ox, oX)
            y = self.rng.uniform(oy, oY)
            ix = min(max(int((x - gx0) / h), 0), nx - 1)
            iy = min(max(int((y - gy0) / h), 0), ny - 1)
            if not self.spawn_ok[iy, ix]:
                continue
            if len(near_pos):
                d2 = (near_pos[:, 0] - x) ** 2 + (near_pos[:, 1] - y) ** 2
                if (d2 < (near_rad + radius) ** 2).any():
                    continue
            return np.array([x, y])
        return None

    def _spawn_step(self, dt: float) -> None:
        arrivals = [*self.pending]
        self.pending.clear()
        for _ in range(int(self.rng.poisson(self.config.demand * dt))):
            route = int(self.rng.choice(len(self.probs), p=self.probs))
            v0 = self.config.speeds.draw(self.rng)
            arrivals.append((route, v0, self.config.radius))
        if not arrivals:
            return
        # overlap checks only need pedestrians near the origin strip
        ox, oy, oX, oY = self._origin_bbox
        margin = 2 * self.config.radius + 0.1
        if len(self.pos):
            nearby = ((self.pos[:, 0] > ox - margin) & (self.pos[:, 0] < oX + margin) &
                      (self.pos[:, 1] > oy - margin) & (self.pos[:, 1] < oY + margin))
        else:
            nearby = np.zeros(0, dtype=bool)
        near_pos = self.pos[nearby]
        near_rad = self.radius[nearby]
        saturated = False
        for route, v0, radius in arrivals:
            if saturated:
                self.pending.append((route, v0, radius))
                continue
            p = self._try_place(radius, near_pos, near_rad)
            if p is None:
                # origin saturated: stop trying this step, keep arrival order
                self.pending.append((route, v0, radius))
                self.deferred_spawns += 1
                saturated = True
                continue
            near_pos = np.vstack([near_pos, p[None, :]]) if len(near_pos) else p[None, :]
            near_rad = np.append(near_rad, radius)
            steer = self.fields[route].steering(p[None, :])[0]
            self.pos = np.vstack([self.pos, p[None, :]])
            self.vel = np.vstack([self.vel, (v0 * steer)[None, :]])
            self.v0 = np.append(self.v0, v0)
            self.radius = np.append(self.radius, radius)
            self.route = np.append(self.route, route)
            self.prog = np.append(self.prog, 0)
            self.depart = np.append(self.depart, np.nan)
            self.spawn_t = np.append(self.spawn_t, self.time)
            self.pid = np.append(self.pid, self.next_id)
            self.next_id += 1
            self.spawned += 1

    # -- forces ------------------------------------------------------------

    def _steering_and_cross(self) -> tuple[np.ndarray, np.ndarray]:
        """Per route: unit descent of the steering field, value of the border field."""
        steer = np.zeros_like(self.pos)
        cross_val = np.full(len(self.pos), np.inf)
        for k in np.unique(self.route):
            sel = self.route == k
            pts = self.pos[sel]
            grad = self.fields[k].gradient(pts)
            norm = np.hypot(grad[:, 0], grad[:, 1])
            unit = np.zeros_like(grad)
            okn = norm > 1e-9
            unit[okn] = -grad[okn] / norm[okn, None]
            steer[sel] = unit
            cross_val[sel] = self.border_fields[k].sample(pts)
        return steer, cross_val

    def _forces(self, steer: np.ndarray) -> np.ndarray:
        prm = self.config.forces
        acc = (self.v0[:, None] * steer - self.vel) / prm.relaxation_time
        i, j = _pair_indices(self.pos, prm.cutoff)
        if len(i):
            d = self.pos[i] - self.pos[j]
            dist = np.maximum(np.hypot(d[:, 0], d[:, 1]), prm.distance_clamp)
            n = d / dist[:, None]
            mag = prm.ped_strength * np.exp((self.radius[i] + self.radius[j] - dist) / prm.ped_range)
            iso = 1 - prm.anisotropy
            w_i = prm.anisotropy + iso * 0.5 * (1 - (steer[i] * n).sum(axis=1))
            w_j = prm.anisotropy + iso * 0.5 * (1 + (steer[j] * n).sum(axis=1))
            fx_i, fy_i = w_i * mag * n[:, 0], w_i * mag * n[:, 1]
            fx_j, fy_j = w_j * mag * n[:, 0], w_j * mag * n[:, 1]
            npeds = len(self.pos)
            acc[:, 0] += np.bincount(i, weights=fx_i, minlength=npeds)
            acc[:, 1] += np.bincount(i, weights=fy_i, minlength=npeds)
            acc[:, 0] -= np.bincount(j, weights=fx_j, minlength=npeds)
            acc[:, 1] -= np.bincount(j, weights=fy_j, minlength=npeds)
        c, g = self.clearance.sample_with_gradient(self.pos)
        gn = np.hypot(g[:, 0], g[:, 1])
        ok = (gn > 1e-9) & np.isfinite(c)
        mag = np.zeros(len(c))
        mag[ok] = prm.wall_strength * np.exp(np.minimum((self.radius[ok] - c[ok]) / prm.wall_range, 8.0))
        acc[ok] += (g[ok] / gn[ok, None]) * mag[ok, None]
        return acc

    # -- stepping ----------------------------------------------------------

    def step(self, dt: float | None = None) -> None:
        dt = self.config.time_step if dt is None else dt
        if dt == 0.0:
            return
        self._spawn_step(dt)
        if len(self.pos):
            steer, cross_val = self._steering_and_cross()
            self._advance_progress(cross_val)
            acc = self._forces(steer)
            self.vel += acc * dt
            speed = np.hypot(self.vel[:, 0], self.vel[:, 1])
            cap = SPEED_CAP_FACTOR * self.v0
            over = speed > cap
            self.vel[over] *= (cap[over] / speed[over])[:, None]
            new_pos = self.pos + self.vel * dt
            self._project_walkable(new_pos)
            self.pos = new_pos
            self._update_departures()
            self._remove_arrivals()
        self.time += dt
        self._record_trajectory()

    def _project_walkable(self, new_pos: np.ndarray) -> None:
        iy, ix = self.grid.cell_of(new_pos)
        bad = ~self.grid.walkable[iy, ix]
        if bad.any():
            self.projection_events += int(bad.sum())
            idx = np.flatnonzero(bad)
            c = self.clearance.sample(new_pos[idx])
            g = self.clearance.gradient(new_pos[idx])
            gn = np.hypot(g[:, 0], g[:, 1])
            fix = gn > 1e-9
            h = self.grid.resolution
            new_pos[idx[fix]] += (g[fix] / gn[fix, None]) * (h - np.minimum(c[fix], h))[:, None]
            iy2, ix2 = self.grid.cell_of(new_pos[idx])
            still = ~self.grid.walkable[iy2, ix2]
            new_pos[idx[still]] = self.pos[idx[still]]  # give up: stay put this tick
            self.vel[idx] = 0.0
        xmin, ymin, xmax, ymax = self.route_set.geometry.bounds
        np.clip(new_pos[:, 0], xmin + 1e-6, xmax - 1e-6, out=new_pos[:, 0])
        np.clip(new_pos[:, 1], ymin + 1e-6, ymax - 1e-6, out=new_pos[:, 1])
        iy3, ix3 = self.grid.cell_of(new_pos)
        if (~self.grid.walkable[iy3, ix3]).any():
            raise RunError("pedestrian stuck inside an obstacle after projection")

    def _update_departures(self) -> None:
        undeparted = np.isnan(self.depart)
        if not undeparted.any():
            return
        iy, ix = self.grid.cell_of(self.pos[undeparted])
        fully_out = self.origin_exit[iy, ix] >= self.radius[undeparted]
        sel = np.flatnonzero(undeparted)[fully_out]
        self.depart[sel] = self.time

    def _advance_progress(self, cross_val: np.ndarray) -> None:
        # cross the next border when the disc touches it (downstream field iso test)
        level = self.level_lut[self.route, self.prog]
        crossed = cross_val <= level + self.radius
        if crossed.any():
            self.prog[crossed] += 1

    def _remove_arrivals(self) -> None:
        iy, ix = self.grid.cell_of(self.pos)
        arrived = self.dest_mask[iy, ix]
        if arrived.any():
            for idx in np.flatnonzero(arrived):
                depart = self.depart[idx]
                if math.isnan(depart):
                    depart = self.spawn_t[idx]
                self.records.append(TravelTimeRecord(
                    pedestrian_id=int(self.pid[idx]),
                    route_id=self.route_set.routes[self.route[idx]].id,
                    depart_s=float(depart),
                    arrive_s=float(self.time),
                ))
            keep = ~arrived
            self.pos = self.pos[keep]
            self.vel = self.vel[keep]
            self.v0 = self.v0[keep]
            self.radius = self.radius[keep]
            self.route = self.route[keep]
            self.prog = self.prog[keep]
            self.depart = self.depart[keep]
            self.spawn_t = self.spawn_t[keep]
            self.pid = self.pid[keep]

    def _record_trajectory(self) -> None:
        ti = self.config.trajectory_interval
        if ti <= 0:
            return
        if self.time + 1e-9 >= self._next_traj_t:
            for k in range(len(self.pos)):
                self.trajectory.append((self.time, int(self.pid[k]),
                                        float(self.pos[k, 0]), float(self.pos[k, 1]),
                                        int(self.prog[k])))
            self._next_traj_t += ti

    # -- conservation and views ---------------------------------------------

    def in_system(self) -> int:
        return len(self.pos)

    def check_conservation(self) -> None:
        if self.spawned != len(self.records) + self.in_system():
            raise RunError("pedestrian conservation violated")

    def snapshot(self) -> list[PedestrianState]:
        out = []
        for k in range(len(self.pos)):
            out.append(PedestrianState(
                id=int(self.pid[k]), position=self.pos[k].copy(), velocity=self.vel[k].copy(),
                desired_speed=float(self.v0[k]), radius=float(self.radius[k]),
                route_id=self.route_set.routes[self.route[k]].id,
                progress_index=int(self.prog[k]),
                depart_time=None if math.isnan(self.depart[k]) else float(self.depart[k]),
            ))
        return out

    def add_pedestrian(self, position, desired_speed: float, route_index: int,
                       radius: float | None = None) -> int:
        """Place one pedestrian directly (test and probe hook, bypasses spawning)."""
        p = np.asarray(position, dtype=float)
        steer = self.fields[route_index].steering(p[None, :])[0]
        self.pos = np.vstack([self.pos, p[None, :]])
        self.vel = np.vstack([self.vel, (desired_speed * steer)[None, :]])
        self.v0 = np.append(self.v0, desired_speed)
        self.radius = np.append(self.radius, self.config.radius if radius is None else radius)
        self.route = np.append(self.route, route_index)
        self.prog = np.append(self.prog, 0)
        self.depart = np.append(self.depart, np.nan)
        self.spawn_t = np.append(self.spawn_t, self.time)
        self.pid = np.append(self.pid, self.next_id)
        self.next_id += 1
        self.spawned += 1
        return int(self.pid[-1])


def run_simulation(route_set: RouteSet, config: SimulationConfig,
                   route_probabilities) -> list[TravelTimeRecord]:
    """Run one full simulation; returns every completed travel-time record."""
    sim = Simulation(route_set, config, route_probabilities)
    steps = int(round(config.duration / config.time_step))
    for _ in range(steps):
        sim.step()
    sim.check_conservation()
    return sim.records


def average_travel_times(records: list[TravelTimeRecord],
                         window: tuple[float, float],
                         route_ids: list[int]) -> dict[int, RouteStats]:
    """Per-route mean travel time over arrivals inside the closed window."""
    t0, t1 = window
    if not t0 < t1:
        raise RunError("window must satisfy t_start < t_end")
    sums = {rid: 0.0 for rid in route_ids}
    counts = {rid: 0 for rid in route_ids}
    for rec in records:
        if t0 <= rec.arrive_s <= t1 and rec.route_id in sums:
            sums[rec.route_id] += rec.arrive_s - rec.depart_s
            counts[rec.route_id] += 1
    return {rid: RouteStats(mean=(sums[rid] / counts[rid]) if counts[rid] else None,
                            count=counts[rid])
            for rid in route_ids}
