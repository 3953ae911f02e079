"""Experiment pipeline: resolved configuration, runs, CSV emission and figures.

The same functions back the command-line client and the HTTP service.  Every
emitted file starts with (or embeds) the fully resolved configuration so any
output can be reproduced from its own header; nothing time- or host-
dependent is written, which keeps reruns byte-identical.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import plots
from .assign import (
    AnalyticEvaluator,
    AssignmentResult,
    SweepTask,
    UpdateParams,
    load_latency_spec,
    run_assignment,
    run_sweep,
)
from .errors import ConfigError, RunError, ScenarioError
from .geometry import WalkingGeometry, load_geometry, parse_scenario
from .routes import RouteSet, RouteSetConfig, enumerate_routes, save_route_set
from .simulate import ForceParameters, SimulationConfig, SpeedDistribution
from .textio import parse_sections

PAPER_DEMANDS = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0, 6.0]
PAPER_SEEDS = [1, 2, 3, 4, 5]

_KNOWN_KEYS = {
    "experiment": {"scenario", "output", "demands", "seeds", "workers", "oracle"},
    "assignment": {"alpha", "initial_delta", "delta_min", "delta_max", "delta_up",
                   "delta_down", "termination_s", "max_iterations", "min_samples"},
    "simulation": {"duration", "time_step", "window", "resolution", "radius",
                   "trajectory_interval", "spawn_attempts"},
    "speeds": {"name", "band_1", "band_2", "mix"},
    "forces": {"name", "relaxation_time", "ped_strength", "ped_range", "anisotropy",
               "wall_strength", "wall_range", "cutoff", "distance_clamp"},
    "routes": {"min_obstacle_extent", "max_detour_factor", "min_gateway_width",
               "clearance_band", "clearance_penalty"},
}


@dataclass
class ExperimentConfig:
    scenario: str = "data:two_walls"
    output: str = "out"
    demands: list[float] = field(default_factory=lambda: list(PAPER_DEMANDS))
    seeds: list[int] = field(default_factory=lambda: list(PAPER_SEEDS))
    workers: int = 1
    oracle: str | None = None  # latency-spec path switches to the analytic evaluator
    params: UpdateParams = field(default_factory=UpdateParams)
    termination_s: float = 0.5
    max_iterations: int = 100
    min_samples: int = 10
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    resolution: float = 0.10
    routes: RouteSetConfig = field(default_factory=RouteSetConfig)

    def echo(self) -> str:
        """Full resolved configuration, one key per line (embedded in outputs)."""
        sim = self.simulation
        frc = sim.forces
        spd = sim.speeds
        lines = [
            f"scenario = {self.scenario}",
            f"demands = {' '.join(f'{d:g}' for d in self.demands)}",
            f"seeds = {' '.join(str(s) for s in self.seeds)}",
            f"oracle = {self.oracle or 'off'}",
            f"alpha = {self.params.alpha:g}",
            f"initial_delta = {self.params.delta:g}",
            f"delta_bounds = {self.params.delta_bounds[0]:g} {self.params.delta_bounds[1]:g}",
            f"delta_up = {self.params.delta_up_factor:g}",
            f"delta_down = {self.params.delta_down_factor:g}",
            f"termination_s = {self.termination_s:g}",
            f"max_iterations = {self.max_iterations}",
            f"min_samples = {self.min_samples}",
            f"duration = {sim.duration:g}",
            f"time_step = {sim.time_step:g}",
            f"window = {sim.window[0]:g} {sim.window[1]:g}",
            f"resolution = {self.resolution:g}",
            f"radius = {sim.radius:g}",
            f"speed_model = {spd.name}",
            f"speed_bands = {' | '.join(f'{lo:g}..{hi:g}' for lo, hi in spd.bands)}",
            f"speed_mix = {' '.join(f'{m:g}' for m in spd.mix)}",
            f"force_model = {frc.name}",
            f"relaxation_time = {frc.relaxation_time:g}",
            f"ped_strength = {frc.ped_strength:g}",
            f"ped_range = {frc.ped_range:g}",
            f"anisotropy = {frc.anisotropy:g}",
            f"wall_strength = {frc.wall_strength:g}",
            f"wall_range = {frc.wall_range:g}",
            f"cutoff = {frc.cutoff:g}",
            f"min_obstacle_extent = {self.routes.min_obstacle_extent:g}",
            f"max_detour_factor = {self.routes.max_detour_factor:g}",
        ]
        return "\n".join(lines)


def parse_experiment_config(text: str, overrides: dict | None = None) -> ExperimentConfig:
    """Build a resolved config from file text plus CLI-style overrides."""
    cfg = ExperimentConfig()
    values: dict[str, dict[str, str]] = {}
    for sec in parse_sections(text):
        if sec.name not in _KNOWN_KEYS:
            raise ConfigError(f"unknown config section [{sec.name}] (line {sec.line})")
        for key in sec.values:
            if key not in _KNOWN_KEYS[sec.name]:
                raise ConfigError(f"unknown key '{key}' in section [{sec.name}] (line {sec.line})")
        values.setdefault(sec.name, {}).update(sec.values)

    exp = values.get("experiment", {})
    cfg.scenario = exp.get("scenario", cfg.scenario)
    cfg.output = exp.get("output", cfg.output)
    if "demands" in exp:
        cfg.demands = [float(t) for t in exp["demands"].split()]
    if "seeds" in exp:
        cfg.seeds = [int(t) for t in exp["seeds"].split()]
    if "workers" in exp:
        cfg.workers = int(exp["workers"])
    if exp.get("oracle") not in (None, "", "off"):
        cfg.oracle = exp["oracle"]

    asn = values.get("assignment", {})
    cfg.params = UpdateParams(
        alpha=float(asn.get("alpha", cfg.params.alpha)),
        delta=float(asn.get("initial_delta", cfg.params.delta)),
        delta_bounds=(float(asn.get("delta_min", cfg.params.delta_bounds[0])),
                      float(asn.get("delta_max", cfg.params.delta_bounds[1]))),
        delta_up_factor=float(asn.get("delta_up", cfg.params.delta_up_factor)),
        delta_down_factor=float(asn.get("delta_down", cfg.params.delta_down_factor)),
    )
    cfg.termination_s = float(asn.get("termination_s", cfg.termination_s))
    cfg.max_iterations = int(asn.get("max_iterations", cfg.max_iterations))
    cfg.min_samples = int(asn.get("min_samples", cfg.min_samples))

    sim = values.get("simulation", {})
    spd = values.get("speeds", {})
    frc = values.get("forces", {})
    speeds = SpeedDistribution(
        name=spd.get("name", "adult_30_50"),
        bands=tuple(tuple(float(x) for x in spd[k].split())
                    for k in ("band_1", "band_2") if k in spd) or SpeedDistribution().bands,
        mix=tuple(float(x) for x in spd["mix"].split()) if "mix" in spd else (0.5, 0.5),
    )
    fd = ForceParameters()
    forces = ForceParameters(
        name=frc.get("name", fd.name),
        relaxation_time=float(frc.get("relaxation_time", fd.relaxation_time)),
        ped_strength=float(frc.get("ped_strength", fd.ped_strength)),
        ped_range=float(frc.get("ped_range", fd.ped_range)),
        anisotropy=float(frc.get("anisotropy", fd.anisotropy)),
        wall_strength=float(frc.get("wall_strength", fd.wall_strength)),
        wall_range=float(frc.get("wall_range", fd.wall_range)),
        cutoff=float(frc.get("cutoff", fd.cutoff)),
        distance_clamp=float(frc.get("distance_clamp", fd.distance_clamp)),
    )
    window = tuple(float(x) for x in sim["window"].split()) if "window" in sim else (300.0, 600.0)
    cfg.simulation = SimulationConfig(
        demand=1.0,
        duration=float(sim.get("duration", 600.0)),
        time_step=float(sim.get("time_step", 0.05)),
        window=(window[0], window[1]),
        seed=1,
        radius=float(sim.get("radius", 0.20)),
        speeds=speeds,
        forces=forces,
        trajectory_interval=float(sim.get("trajectory_interval", 0.0)),
        spawn_attempts=int(sim.get("spawn_attempts", 30)),
    )
    cfg.resolution = float(sim.get("resolution", 0.10))

    rts = values.get("routes", {})
    rd = RouteSetConfig()
    cfg.routes = RouteSetConfig(
        min_obstacle_extent=float(rts.get("min_obstacle_extent", rd.min_obstacle_extent)),
        max_detour_factor=float(rts.get("max_detour_factor", rd.max_detour_factor)),
        resolution=cfg.resolution,
        min_gateway_width=float(rts.get("min_gateway_width", rd.min_gateway_width)),
        clearance_band=float(rts.get("clearance_band", rd.clearance_band)),
        clearance_penalty=float(rts.get("clearance_penalty", rd.clearance_penalty)),
    )

    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key == "demands":
            cfg.demands = [float(t) for t in val]
        elif key == "seeds":
            cfg.seeds = [int(t) for t in val]
        elif key == "output":
            cfg.output = str(val)
        elif key == "workers":
            cfg.workers = int(val)
        elif key == "oracle":
            cfg.oracle = str(val)
        else:
            raise ConfigError(f"unknown override '{key}'")
    return cfg


def load_experiment_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    return parse_experiment_config(p.read_text(encoding="utf-8"), overrides)


# ---------------------------------------------------------------------------
# scenario + route set resolution

def resolve_scenario(source: str) -> WalkingGeometry:
    """`data:<name>` loads a packaged scenario, anything else is a file path."""
    if source.startswith("data:"):
        name = source.split(":", 1)[1]
        ref = resources.files("pedassign.data").joinpath(f"{name}.scene")
        if not ref.is_file():
            raise ScenarioError(f"packaged scenario '{name}' not found")
        return parse_scenario(ref.read_text(encoding="utf-8"))
    return load_geometry(source)


_ROUTE_SET_CACHE: dict[tuple, RouteSet] = {}


def build_route_set(cfg: ExperimentConfig) -> RouteSet:
    """Enumerate routes for the config's scenario; cached per process."""
    key = (cfg.scenario, cfg.routes.min_obstacle_extent, cfg.routes.max_detour_factor,
           cfg.routes.resolution, cfg.routes.min_gateway_width)
    if key not in _ROUTE_SET_CACHE:
        geometry = resolve_scenario(cfg.scenario)
        _ROUTE_SET_CACHE[key] = enumerate_routes(geometry, cfg.routes)
    return _ROUTE_SET_CACHE[key]


# ---------------------------------------------------------------------------
# CSV emission (schemas are stable; readers below round-trip them)

def _write_csv(path: Path, echo: str, fieldnames: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    for line in echo.splitlines():
        buf.write(f"# {line}\n")
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue(), encoding="utf-8")


def read_csv(path: str | Path) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header-comment metadata plus data rows of any emitted CSV."""
    meta: dict[str, str] = {}
    data_lines = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if "=" in body:
                k, _, v = body.partition("=")
                meta[k.strip()] = v.strip()
        else:
            data_lines.append(line)
    rows = list(csv.DictReader(io.StringIO("\n".join(data_lines))))
    return meta, rows


def _fmt(x: float | None, spec: str = ".6f") -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "nan"
    return format(x, spec)


def iteration_rows(result: AssignmentResult, route_ids: list[int]) -> list[dict]:
    rows = []
    for it in result.history:
        row: dict = {"iter": it.index}
        for pos, rid in enumerate(route_ids):
            row[f"p_{rid}"] = _fmt(float(it.probabilities[pos]), ".9f")
        for rid in route_ids:
            row[f"tt_{rid}"] = _fmt(it.stats[rid].mean)
        for rid in route_ids:
            row[f"n_{rid}"] = it.stats[rid].count
        row["delta"] = _fmt(it.delta)
        row["dp"] = _fmt(it.dp, ".9f")
        row["spread"] = _fmt(it.spread if math.isfinite(it.spread) else None)
        row["terminated"] = int(result.terminated and it.index == result.history[-1].index)
        rows.append(row)
    return rows


def iteration_fieldnames(route_ids: list[int]) -> list[str]:
    return (["iter"] + [f"p_{r}" for r in route_ids] + [f"tt_{r}" for r in route_ids]
            + [f"n_{r}" for r in route_ids] + ["delta", "dp", "spread", "terminated"])


def run_csv_name(demand: float, seed: int) -> str:
    return f"assign_d{demand:g}_s{seed}.csv"


def write_run_csv(out_dir: Path, cfg: ExperimentConfig, route_ids: list[int],
                  task: SweepTask, result: AssignmentResult) -> Path:
    echo = (f"pedassign run output: one row per assignment iteration\n"
            f"demand = {task.demand:g}\nseed = {task.seed}\n"
            f"route_ids = {' '.join(str(r) for r in route_ids)}\n"
            f"selected_iter = {result.selected_iteration}\n"
            f"terminated = {int(result.terminated)}\n{cfg.echo()}")
    path = out_dir / run_csv_name(task.demand, task.seed)
    _write_csv(path, echo, iteration_fieldnames(route_ids), iteration_rows(result, route_ids))
    return path


def summary_fieldnames(route_ids: list[int]) -> list[str]:
    return (["demand", "seed", "selected_iter"] + [f"p_{r}" for r in route_ids]
            + [f"tt_{r}" for r in route_ids] + ["spread"])


def summary_row(task: SweepTask, result: AssignmentResult, route_ids: list[int]) -> dict:
    sel = result.selected
    row: dict = {"demand": f"{task.demand:g}", "seed": task.seed,
                 "selected_iter": result.selected_iteration}
    for pos, rid in enumerate(route_ids):
        row[f"p_{rid}"] = _fmt(float(sel.probabilities[pos]), ".9f")
    for rid in route_ids:
        row[f"tt_{rid}"] = _fmt(sel.stats[rid].mean)
    row["spread"] = _fmt(sel.spread if math.isfinite(sel.spread) else None)
    return row


def write_records_csv(path: Path, records, echo: str) -> None:
    rows = [{"ped_id": r.pedestrian_id, "route_id": r.route_id,
             "depart_s": _fmt(r.depart_s), "arrive_s": _fmt(r.arrive_s)}
            for r in records]
    _write_csv(path, echo, ["ped_id", "route_id", "depart_s", "arrive_s"], rows)


def write_trajectories_csv(path: Path, samples, echo: str) -> None:
    """Decimated trajectory samples: (t, ped_id, x, y, progress) tuples."""
    rows = [{"t_s": _fmt(t, ".2f"), "ped_id": pid, "x_m": _fmt(x, ".3f"),
             "y_m": _fmt(y, ".3f"), "progress": prog}
            for t, pid, x, y, prog in samples]
    _write_csv(path, echo, ["t_s", "ped_id", "x_m", "y_m", "progress"], rows)


# ---------------------------------------------------------------------------
# pipeline operations (shared by CLI and service)

@dataclass
class RoutesArtifacts:
    route_set: RouteSet
    files: list[Path]


def pipeline_routes(cfg: ExperimentConfig) -> RoutesArtifacts:
    """Enumerate routes, export the route set and draw the overlay figure."""
    route_set = build_route_set(cfg)
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    export = out_dir / "routes.txt"
    save_route_set(route_set, export, header=cfg.echo())
    overlay = out_dir / "routes_overlay.svg"
    plots.route_overlay(route_set, overlay, config_echo=cfg.echo())
    return RoutesArtifacts(route_set=route_set, files=[export, overlay])


@dataclass
class AssignArtifacts:
    results: dict[SweepTask, AssignmentResult | Exception]
    route_ids: list[int]
    files: list[Path]
    failures: list[str]


def pipeline_assign(cfg: ExperimentConfig) -> AssignArtifacts:
    """Run the (demand x seed) sweep, emitting per-run CSVs, plots and a summary."""
    out_dir = Path(cfg.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    files: list[Path] = []
    failures: list[str] = []

    if cfg.oracle:
        latencies = load_latency_spec(Path(cfg.oracle).read_text(encoding="utf-8"))
        route_ids = list(range(1, len(latencies) + 1))
        results: dict[SweepTask, AssignmentResult | Exception] = {}
        for demand in cfg.demands:
            for seed in cfg.seeds:
                task = SweepTask(demand, seed)
                try:
                    evaluator = AnalyticEvaluator(latencies, demand=demand)
                    results[task] = run_assignment(
                        evaluator, params=cfg.params,
                        termination_threshold=cfg.termination_s,
                        max_iterations=cfg.max_iterations,
                        min_samples=cfg.min_samples, base_seed=seed)
                except Exception as exc:
                    results[task] = exc
    else:
        route_set = build_route_set(cfg)
        route_ids = [r.id for r in route_set.routes]
        results = run_sweep(route_set, cfg.simulation, cfg.demands, cfg.seeds,
                            params=cfg.params, termination_threshold=cfg.termination_s,
                            max_iterations=cfg.max_iterations, min_samples=cfg.min_samples,
                            workers=cfg.workers)

    summary_rows = []
    for task in sorted(results, key=lambda t: (t.demand, t.seed)):
        outcome = results[task]
        if isinstance(outcome, Exception):
            failures.append(f"demand {task.demand:g} seed {task.seed}: {outcome}")
            continue
        files.append(write_run_csv(out_dir, cfg, route_ids, task, outcome))
        plot_path = out_dir / f"assign_d{task.demand:g}_s{task.seed}.svg"
        plots.iteration_panels(
            _plot_rows(outcome, route_ids), route_ids, plot_path,
            title=f"demand {task.demand:g} ped/s, seed {task.seed}",
            config_echo=cfg.echo())
        files.append(plot_path)
        summary_rows.append(summary_row(task, outcome, route_ids))

    if summary_rows:
        summary_path = out_dir / "sweep_summary.csv"
        _write_csv(summary_path,
                   f"pedassign sweep summary: selected iteration per (demand, seed)\n"
                   f"route_ids = {' '.join(str(r) for r in route_ids)}\n{cfg.echo()}",
                   summary_fieldnames(route_ids), summary_rows)
        files.append(summary_path)
    if failures:
        fail_path = out_dir / "failures.txt"
        fail_path.write_text("\n".join(failures) + "\n", encoding="utf-8")
        files.append(fail_path)
    if not summary_rows:
        raise RunError("every run in the sweep failed; see failures.txt")
    return AssignArtifacts(results=results, route_ids=route_ids, files=files, failures=failures)


def _plot_rows(result: AssignmentResult, route_ids: list[int]) -> list[dict]:
    rows = []
    for it in result.history:
        row = {"iter": it.index}
        for pos, rid in enumerate(route_ids):
            row[f"p_{rid}"] = float(it.probabilities[pos])
        for rid in route_ids:
            mean = it.stats[rid].mean
            row[f"tt_{rid}"] = float("nan") if mean is None else mean
        rows.append(row)
    return rows


@dataclass
class SummaryArtifacts:
    rows: list[dict]
    missing: list[str]
    files: list[Path]


def pipeline_summary(results_dir: str | Path, out_dir: str | Path | None = None) -> SummaryArtifacts:
    """Aggregate selected iterations from per-run CSVs in a directory."""
    rdir = Path(results_dir)
    run_files = sorted(rdir.glob("assign_d*_s*.csv"))
    if not run_files:
        raise RunError(f"no assignment run CSVs found in {rdir}")
    out = Path(out_dir) if out_dir else rdir
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    missing: list[str] = []
    route_ids: list[int] = []
    echo = ""
    for path in run_files:
        try:
            meta, data = read_csv(path)
            route_ids = [int(t) for t in meta["route_ids"].split()]
            sel = int(meta["selected_iter"])
            sel_row = next(r for r in data if int(r["iter"]) == sel)
            row = {"demand": float(meta["demand"]), "seed": int(meta["seed"]),
                   "selected_iter": sel}
            for rid in route_ids:
                row[f"p_{rid}"] = float(sel_row[f"p_{rid}"])
                row[f"tt_{rid}"] = float(sel_row[f"tt_{rid}"])
            row["spread"] = float(sel_row["spread"])
            rows.append(row)
            echo = "\n".join(f"{k} = {v}" for k, v in meta.items())
        except Exception as exc:
            missing.append(f"{path.name}: {exc}")
    if not rows:
        raise RunError("no readable run CSVs; aggregation impossible")
    rows.sort(key=lambda r: (r["demand"], r["seed"]))

    out_rows = []
    for row in rows:
        out_row = {"demand": f"{row['demand']:g}", "seed": row["seed"],
                   "selected_iter": row["selected_iter"]}
        for rid in route_ids:
            out_row[f"p_{rid}"] = _fmt(row[f"p_{rid}"], ".9f")
            out_row[f"tt_{rid}"] = _fmt(row[f"tt_{rid}"])
        out_row["spread"] = _fmt(row["spread"])
        out_rows.append(out_row)
    csv_path = out / "equilibrium_vs_demand.csv"
    _write_csv(csv_path, f"pedassign equilibrium vs demand\n"
               f"route_ids = {' '.join(str(r) for r in route_ids)}\n{echo}",
               summary_fieldnames(route_ids), out_rows)
    plot_path = out / "equilibrium_vs_demand.svg"
    plots.summary_panels(rows, route_ids, plot_path, config_echo=echo)
    return SummaryArtifacts(rows=rows, missing=missing, files=[csv_path, plot_path])
