"""Iterative search for the travel-time user equilibrium over routes.

Each iteration runs one evaluation (a seeded simulation or an analytic
latency oracle), then moves probability mass from the slowest route to the
fastest one.  The shift is alpha * ((t_max - t_min)/(t_max + t_min))**delta
with delta adapted against oscillation.  The loop stops when the largest and
smallest route mean differ by at most the termination threshold; otherwise
the iteration closest to that condition is reported.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, RunError
from .simulate import RouteStats, SimulationConfig, average_travel_times, run_simulation
from .textio import parse_sections


@dataclass(frozen=True)
class UpdateParams:
    alpha: float = 0.1
    delta: float = 1.0
    delta_bounds: tuple[float, float] = (0.25, 4.0)
    delta_up_factor: float = 1.5
    delta_down_factor: float = 2.0 / 3.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.delta <= 0:
            raise ConfigError("delta must be positive")
        lo, hi = self.delta_bounds
        if not lo <= self.delta <= hi:
            raise ConfigError("delta must lie within delta_bounds")


@dataclass
class IterationResult:
    index: int  # 1-based
    probabilities: np.ndarray  # vector used for this iteration's evaluation
    stats: dict[int, RouteStats]  # keyed by route id
    t_max: float
    t_min: float
    argmax_route: int | None
    argmin_route: int | None
    delta: float  # exponent in effect when the shift after this iteration was computed
    dp: float  # realized shift applied after this iteration (0 when none)

    @property
    def spread(self) -> float:
        return self.t_max - self.t_min


@dataclass
class AssignmentResult:
    history: list[IterationResult]
    terminated: bool
    selected_iteration: int  # 1-based index into history
    termination_threshold: float

    @property
    def selected(self) -> IterationResult:
        return self.history[self.selected_iteration - 1]


def probability_shift(t_max: float, t_min: float, params: UpdateParams) -> float:
    """Shift of choice probability from the slowest to the fastest route.

    Scale-invariant in the travel times: only the normalized spread enters.
    """
    if t_min <= 0:
        raise RunError("travel times must be strictly positive")
    if t_max < t_min:
        raise RunError("t_max must be >= t_min")
    return params.alpha * ((t_max - t_min) / (t_max + t_min)) ** params.delta


def eligible_routes(probabilities: np.ndarray, stats: dict[int, RouteStats],
                    route_ids: list[int], min_samples: int) -> list[int]:
    """Routes that may enter the min/max selection: carrying flow and measured."""
    out = []
    for pos, rid in enumerate(route_ids):
        s = stats[rid]
        if probabilities[pos] > 0 and s.mean is not None and s.count >= min_samples:
            out.append(rid)
    return out


def extreme_routes(stats: dict[int, RouteStats], eligible: list[int]) -> tuple[int, int]:
    """(slowest, fastest) among eligible route ids; ties go to the lowest id."""
    slowest = max(eligible, key=lambda rid: (stats[rid].mean, -rid))
    fastest = min(eligible, key=lambda rid: (stats[rid].mean, rid))
    return slowest, fastest


def update_ratios(current: np.ndarray, route_ids: list[int],
                  argmax_route: int | None, argmin_route: int | None,
                  dp: float) -> tuple[np.ndarray, float]:
    """Move `dp` mass from the slowest to the fastest route, clamped at zero.

    Returns the new vector and the realized shift.  A no-op (with a warning)
    when fewer than two routes are available to trade mass.
    """
    if dp < 0:
        raise RunError("probability shift must be non-negative")
    out = current.copy()
    if argmax_route is None or argmin_route is None or argmax_route == argmin_route:
        if dp > 0:
            warnings.warn("fewer than two eligible routes: probabilities unchanged", stacklevel=2)
        return out, 0.0
    hi = route_ids.index(argmax_route)
    lo = route_ids.index(argmin_route)
    realized = min(dp, out[hi])
    out[hi] -= realized
    out[lo] += realized
    return out, realized


def adapt_delta(prev_pair: tuple[int, int] | None, pair: tuple[int, int] | None,
                delta: float, params: UpdateParams) -> float:
    """Speed up while the same (slowest, fastest) pair persists; damp on swaps."""
    if prev_pair is None or pair is None:
        return delta
    lo, hi = params.delta_bounds
    if pair == prev_pair:
        return max(lo, delta * params.delta_down_factor)
    if pair == (prev_pair[1], prev_pair[0]):
        return min(hi, delta * params.delta_up_factor)
    return delta


def check_termination(stats: dict[int, RouteStats], eligible: list[int],
                      threshold: float) -> bool:
    """True when the eligible route means differ by at most `threshold` seconds."""
    if not eligible:
        return False
    means = [stats[rid].mean for rid in eligible]
    return max(means) - min(means) <= threshold


# ---------------------------------------------------------------------------
# evaluators

class SimulationEvaluator:
    """Evaluates a probability vector by running one seeded simulation."""

    def __init__(self, route_set, config: SimulationConfig):
        self.route_set = route_set
        self.config = config
        self.route_ids = [r.id for r in route_set.routes]

    def __call__(self, probabilities: np.ndarray, iteration: int, base_seed: int):
        # fresh noise per iteration, reproducible from the base seed
        seed = int(np.random.SeedSequence([base_seed, iteration]).generate_state(1)[0])
        cfg = replace(self.config, seed=seed)
        records = run_simulation(self.route_set, cfg, probabilities)
        return average_travel_times(records, cfg.window, self.route_ids)


class AnalyticEvaluator:
    """Closed-form per-route latencies t_i(x_i) with x_i = p_i * demand.

    Noiseless stand-in for the simulator; sample counts are reported as a
    large constant so the sample threshold never masks a carrying route.
    """

    ORACLE_COUNT = 1_000_000

    def __init__(self, latencies: list[tuple[float, float]], demand: float = 1.0):
        # each route: (free_flow, slope), t = free_flow + slope * x
        if not latencies:
            raise ConfigError("analytic evaluator needs at least one route latency")
        self.latencies = latencies
        self.demand = demand
        self.route_ids = list(range(1, len(latencies) + 1))

    def __call__(self, probabilities: np.ndarray, iteration: int, base_seed: int):
        out: dict[int, RouteStats] = {}
        for pos, (a, b) in enumerate(self.latencies):
            p = float(probabilities[pos])
            if p <= 0:
                out[pos + 1] = RouteStats(mean=None, count=0)
            else:
                out[pos + 1] = RouteStats(mean=a + b * p * self.demand, count=self.ORACLE_COUNT)
        return out


def load_latency_spec(text: str) -> list[tuple[float, float]]:
    """Parse a latency-spec file: one [route] section per route."""
    latencies = []
    for sec in parse_sections(text):
        if sec.name != "route":
            raise ConfigError(f"unexpected section [{sec.name}] in latency spec (line {sec.line})")
        latencies.append((float(sec.require("free_flow")), float(sec.require("slope"))))
    if not latencies:
        raise ConfigError("latency spec defines no routes")
    return latencies


# ---------------------------------------------------------------------------
# the assignment loop

def run_assignment(evaluator, params: UpdateParams | None = None,
                   termination_threshold: float = 0.5,
                   max_iterations: int = 100,
                   min_samples: int = 10,
                   base_seed: int = 1,
                   on_iteration=None) -> AssignmentResult:
    """Iterate evaluate -> terminate? -> adapt delta -> shift mass.

    Starts from the uniform split.  `evaluator(probabilities, iteration,
    base_seed)` returns per-route stats keyed by route id.  When the loop
    never meets the termination condition the reported iteration is the one
    with the smallest spread (earliest on ties).
    """
    params = params or UpdateParams()
    route_ids = list(evaluator.route_ids)
    n = len(route_ids)
    probs = np.full(n, 1.0 / n)
    delta = params.delta
    history: list[IterationResult] = []
    prev_pair: tuple[int, int] | None = None
    terminated = False

    for it in range(1, max_iterations + 1):
        try:
            stats = evaluator(probs, it, base_seed)
        except Exception as exc:  # preserve partial history for diagnosis
            if not history:
                raise RunError(f"evaluator failed on iteration {it}: {exc}") from exc
            warnings.warn(f"evaluator failed on iteration {it}: {exc}; stopping early", stacklevel=2)
            break
        elig = eligible_routes(probs, stats, route_ids, min_samples)
        if elig:
            pair = extreme_routes(stats, elig)
            t_max = stats[pair[0]].mean
            t_min = stats[pair[1]].mean
        else:
            pair = None
            t_max = t_min = float("inf")
        result = IterationResult(
            index=it, probabilities=probs.copy(), stats=stats,
            t_max=t_max, t_min=t_min,
            argmax_route=pair[0] if pair else None,
            argmin_route=pair[1] if pair else None,
            delta=delta, dp=0.0,
        )
        history.append(result)
        if on_iteration is not None:
            on_iteration(result)
        if elig and check_termination(stats, elig, termination_threshold):
            terminated = True
            break
        if it == max_iterations:
            break
        delta = adapt_delta(prev_pair, pair, delta, params)
        result.delta = delta
        if pair is not None and pair[0] != pair[1] and np.isfinite(t_max):
            dp = probability_shift(t_max, t_min, replace(params, delta=delta))
        else:
            dp = 0.0
        probs, realized = update_ratios(probs, route_ids,
                                        pair[0] if pair else None,
                                        pair[1] if pair else None, dp)
        result.dp = realized
        prev_pair = pair

    if terminated:
        selected = history[-1].index
    else:
        selected = min(history, key=lambda r: (r.spread, r.index)).index
    return AssignmentResult(history=history, terminated=terminated,
                            selected_iteration=selected,
                            termination_threshold=termination_threshold)


# ---------------------------------------------------------------------------
# sweeps over demand x seed

@dataclass(frozen=True)
class SweepTask:
    demand: float
    seed: int


def _run_one(task: SweepTask, route_set, sim_config: SimulationConfig,
             params: UpdateParams, threshold: float, max_iterations: int,
             min_samples: int):
    cfg = replace(sim_config, demand=task.demand, seed=task.seed)
    evaluator = SimulationEvaluator(route_set, cfg)
    result = run_assignment(evaluator, params=params,
                            termination_threshold=threshold,
                            max_iterations=max_iterations,
                            min_samples=min_samples,
                            base_seed=task.seed)
    return task, result


def run_sweep(route_set, sim_config: SimulationConfig, demands: list[float],
              seeds: list[int], params: UpdateParams | None = None,
              termination_threshold: float = 0.5, max_iterations: int = 100,
              min_samples: int = 10, workers: int = 1,
              on_result=None) -> dict[SweepTask, AssignmentResult | Exception]:
    """One assignment run per (demand, seed); failures recorded, sweep continues."""
    if not demands or not seeds:
        raise ConfigError("sweep needs non-empty demand and seed lists")
    params = params or UpdateParams()
    tasks = [SweepTask(d, s) for d in demands for s in seeds]
    results: dict[SweepTask, AssignmentResult | Exception] = {}

    def record(task, outcome):
        results[task] = outcome
        if on_result is not None:
            on_result(task, outcome)

    if workers <= 1:
        for task in tasks:
            try:
                record(task, _run_one(task, route_set, sim_config, params,
                                      termination_threshold, max_iterations, min_samples)[1])
            except Exception as exc:
                record(task, exc)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                pool.submit(_run_one, task, route_set, sim_config, params,
                            termination_threshold, max_iterations, min_samples): task
                for task in tasks
            }
            for fut, task in futures.items():
                try:
                    record(task, fut.result()[1])
                except Exception as exc:
                    record(task, exc)
    return results
