"""HTTP service exposing the experiment pipeline.

Endpoints accept scenarios either inline or as server-side paths and write
their file products under the requested output directory.  Error responses
carry a `code` ("config" | "scenario" | "run") that clients map to exit
codes.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, model_validator

from . import __version__, experiment
from .assign import AnalyticEvaluator, UpdateParams, load_latency_spec, probability_shift, run_assignment
from .errors import ConfigError, PedassignError, RunError, ScenarioError
from .experiment import ExperimentConfig, parse_experiment_config, resolve_scenario
from .geometry import parse_scenario
from .routes import RouteSetConfig, enumerate_routes
from .simulate import average_travel_times, run_simulation


class ScenarioSource(BaseModel):
    path: str | None = None
    text: str | None = None
    name: str | None = None  # packaged scenario, e.g. "two_walls"

    @model_validator(mode="after")
    def _one_source(self):
        if sum(x is not None for x in (self.path, self.text, self.name)) != 1:
            raise ValueError("provide exactly one of path, text, name")
        return self

    def geometry(self):
        if self.text is not None:
            return parse_scenario(self.text)
        if self.name is not None:
            return resolve_scenario(f"data:{self.name}")
        return resolve_scenario(self.path)


class HealthResponse(BaseModel):
    status: str
    version: str


class ValidateResponse(BaseModel):
    valid: bool
    n_obstacles: int
    bounds: tuple[float, float, float, float]


class ShiftRequest(BaseModel):
    t_max: float
    t_min: float
    alpha: float = 0.1
    delta: float = 1.0


class ShiftResponse(BaseModel):
    dp: float


class RoutesRequest(BaseModel):
    scenario: ScenarioSource
    resolution: float = 0.10
    min_obstacle_extent: float = 0.5
    max_detour_factor: float = 3.0
    out_dir: str | None = None


class BorderModel(BaseModel):
    level: float
    points: list[tuple[float, float]]


class RouteModel(BaseModel):
    id: int
    signature: list[tuple[int, str]]
    gateway_ids: list[int]
    gateway_widths: list[float]
    length: float
    borders: list[BorderModel]


class RoutesResponse(BaseModel):
    routes: list[RouteModel]
    files: list[str] = Field(default_factory=list)


class SimulateRequest(BaseModel):
    scenario: ScenarioSource
    probabilities: list[float]
    demand: float
    seed: int = 1
    duration: float = 600.0
    window: tuple[float, float] = (300.0, 600.0)
    resolution: float = 0.10
    records_path: str | None = None


class RouteStatsModel(BaseModel):
    route_id: int
    mean_travel_time: float | None
    count: int


class SimulateResponse(BaseModel):
    n_records: int
    stats: list[RouteStatsModel]
    records_path: str | None = None


class AssignOracleRequest(BaseModel):
    latencies: list[tuple[float, float]]  # (free_flow, slope) per route
    demand: float = 1.0
    alpha: float = 0.1
    termination_s: float = 0.5
    max_iterations: int = 100


class IterationModel(BaseModel):
    index: int
    probabilities: list[float]
    spread: float | None
    delta: float
    dp: float


class AssignResponse(BaseModel):
    terminated: bool
    selected_iteration: int
    selected_probabilities: list[float]
    iterations: list[IterationModel]


class SweepRequest(BaseModel):
    config_text: str | None = None
    config_path: str | None = None
    output: str | None = None
    demands: list[float] | None = None
    seeds: list[int] | None = None
    workers: int | None = None
    oracle: str | None = None

    @model_validator(mode="after")
    def _one_config(self):
        if (self.config_text is None) == (self.config_path is None):
            raise ValueError("provide exactly one of config_text, config_path")
        return self


class SweepRunModel(BaseModel):
    demand: float
    seed: int
    ok: bool
    selected_iteration: int | None = None
    terminated: bool | None = None
    probabilities: list[float] | None = None
    error: str | None = None


class SweepResponse(BaseModel):
    runs: list[SweepRunModel]
    route_ids: list[int]
    files: list[str]
    failures: list[str]


class SummaryRequest(BaseModel):
    results_dir: str
    out_dir: str | None = None


class SummaryResponse(BaseModel):
    n_runs: int
    missing: list[str]
    files: list[str]


def _http_error(exc: PedassignError) -> HTTPException:
    if isinstance(exc, ConfigError):
        code, status = "config", 422
    elif isinstance(exc, ScenarioError):
        code, status = "scenario", 422
    else:
        code, status = "run", 500
    return HTTPException(status_code=status, detail={"code": code, "message": str(exc)})


def create_app() -> FastAPI:
    app = FastAPI(title="pedassign", version=__version__)

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/scenario/validate", response_model=ValidateResponse)
    def validate(source: ScenarioSource):
        try:
            geo = source.geometry()
        except PedassignError as exc:
            raise _http_error(exc) from exc
        return ValidateResponse(valid=True, n_obstacles=len(geo.obstacles), bounds=geo.bounds)

    @app.post("/shift", response_model=ShiftResponse)
    def shift(req: ShiftRequest):
        try:
            dp = probability_shift(req.t_max, req.t_min,
                                   UpdateParams(alpha=req.alpha, delta=req.delta))
        except PedassignError as exc:
            raise _http_error(exc) from exc
        return ShiftResponse(dp=dp)

    @app.post("/routes", response_model=RoutesResponse)
    def routes(req: RoutesRequest):
        try:
            geo = req.scenario.geometry()
            cfg = RouteSetConfig(min_obstacle_extent=req.min_obstacle_extent,
                                 max_detour_factor=req.max_detour_factor,
                                 resolution=req.resolution)
            route_set = enumerate_routes(geo, cfg)
        except PedassignError as exc:
            raise _http_error(exc) from exc
        files = []
        if req.out_dir:
            from .routes import save_route_set
            from . import plots
            out = Path(req.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            export = out / "routes.txt"
            save_route_set(route_set, export)
            overlay = out / "routes_overlay.svg"
            plots.route_overlay(route_set, overlay)
            files = [str(export), str(overlay)]
        return RoutesResponse(routes=[
            RouteModel(
                id=r.id, signature=list(r.signature), gateway_ids=list(r.gateway_ids),
                gateway_widths=list(r.gateway_widths), length=r.length,
                borders=[BorderModel(level=lvl, points=[(float(x), float(y)) for x, y in b])
                         for b, lvl in zip(r.borders, r.levels)],
            ) for r in route_set.routes
        ], files=files)

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate(req: SimulateRequest):
        try:
            geo = req.scenario.geometry()
            route_set = enumerate_routes(geo, RouteSetConfig(resolution=req.resolution))
            from .simulate import SimulationConfig
            cfg = SimulationConfig(demand=req.demand, duration=req.duration,
                                   window=req.window, seed=req.seed)
            records = run_simulation(route_set, cfg, np.asarray(req.probabilities))
            stats = average_travel_times(records, cfg.window, [r.id for r in route_set.routes])
        except PedassignError as exc:
            raise _http_error(exc) from exc
        records_path = None
        if req.records_path:
            from .experiment import write_records_csv
            write_records_csv(Path(req.records_path), records,
                              f"pedassign travel-time records\ndemand = {req.demand:g}\nseed = {req.seed}")
            records_path = req.records_path
        return SimulateResponse(
            n_records=len(records),
            stats=[RouteStatsModel(route_id=rid, mean_travel_time=s.mean, count=s.count)
                   for rid, s in stats.items()],
            records_path=records_path)

    @app.post("/assign/oracle", response_model=AssignResponse)
    def assign_oracle(req: AssignOracleRequest):
        try:
            evaluator = AnalyticEvaluator(list(req.latencies), demand=req.demand)
            result = run_assignment(evaluator, params=UpdateParams(alpha=req.alpha),
                                    termination_threshold=req.termination_s,
                                    max_iterations=req.max_iterations)
        except PedassignError as exc:
            raise _http_error(exc) from exc
        return AssignResponse(
            terminated=result.terminated,
            selected_iteration=result.selected_iteration,
            selected_probabilities=[float(p) for p in result.selected.probabilities],
            iterations=[IterationModel(
                index=it.index, probabilities=[float(p) for p in it.probabilities],
                spread=it.spread if np.isfinite(it.spread) else None,
                delta=it.delta, dp=it.dp) for it in result.history])

    @app.post("/sweep", response_model=SweepResponse)
    def sweep(req: SweepRequest):
        overrides = {"output": req.output, "workers": req.workers, "oracle": req.oracle,
                     "demands": req.demands, "seeds": req.seeds}
        try:
            if req.config_text is not None:
                cfg = parse_experiment_config(req.config_text, overrides)
            else:
                cfg = experiment.load_experiment_config(req.config_path, overrides)
            artifacts = experiment.pipeline_assign(cfg)
        except PedassignError as exc:
            raise _http_error(exc) from exc
        runs = []
        for task in sorted(artifacts.results, key=lambda t: (t.demand, t.seed)):
            outcome = artifacts.results[task]
            if isinstance(outcome, Exception):
                runs.append(SweepRunModel(demand=task.demand, seed=task.seed, ok=False,
                                          error=str(outcome)))
            else:
                runs.append(SweepRunModel(
                    demand=task.demand, seed=task.seed, ok=True,
                    selected_iteration=outcome.selected_iteration,
                    terminated=outcome.terminated,
                    probabilities=[float(p) for p in outcome.selected.probabilities]))
        return SweepResponse(runs=runs, route_ids=artifacts.route_ids,
                             files=[str(f) for f in artifacts.files],
                             failures=artifacts.failures)

    @app.post("/summary", response_model=SummaryResponse)
    def summary(req: SummaryRequest):
        try:
            artifacts = experiment.pipeline_summary(req.results_dir, req.out_dir)
        except PedassignError as exc:
            raise _http_error(exc) from exc
        return SummaryResponse(n_runs=len(artifacts.rows), missing=artifacts.missing,
                               files=[str(f) for f in artifacts.files])

    return app


app = create_app()
