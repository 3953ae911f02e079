"""Command-line client for the experiment pipeline.

By default commands run in-process; `--server URL` forwards the same request
to a running service instead.  Exit codes: 0 ok, 2 config error, 3 scenario
error, 4 run failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiment
from .errors import ConfigError, PedassignError, RunError, ScenarioError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SCENARIO = 3
EXIT_RUN = 4


def _exit_code(exc: PedassignError) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, ScenarioError):
        return EXIT_SCENARIO
    return EXIT_RUN


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pedassign",
                                     description="Pedestrian route assignment toolkit")
    parser.add_argument("--server", default=None,
                        help="base URL of a running pedassign service (default: in-process)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_routes = sub.add_parser("routes", help="enumerate routes and draw the overlay")
    p_routes.add_argument("scenario", help="scenario file path or data:<name>")
    p_routes.add_argument("--out", default="out")
    p_routes.add_argument("--resolution", type=float, default=0.10)
    p_routes.add_argument("--min-extent", type=float, default=0.5)
    p_routes.add_argument("--max-detour", type=float, default=3.0)

    p_assign = sub.add_parser("assign", help="run the assignment sweep from a config file")
    p_assign.add_argument("config", help="experiment config file")
    p_assign.add_argument("--out", default=None)
    p_assign.add_argument("--workers", type=int, default=None)
    p_assign.add_argument("--demand-list", default=None,
                          help="space/comma separated demands overriding the config")
    p_assign.add_argument("--seed-list", default=None,
                          help="space/comma separated seeds overriding the config")
    p_assign.add_argument("--oracle", default=None,
                          help="latency-spec file: use the analytic evaluator")

    p_summary = sub.add_parser("summary", help="aggregate per-run CSVs into the demand chart")
    p_summary.add_argument("results_dir")
    p_summary.add_argument("--out", default=None)

    p_serve = sub.add_parser("serve", help="run the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _split_list(raw: str | None) -> list[str] | None:
    if raw is None:
        return None
    return [tok for tok in raw.replace(",", " ").split() if tok]


def _cmd_routes(args) -> int:
    if args.server:
        import httpx
        source = {"name": args.scenario.split(":", 1)[1]} if args.scenario.startswith("data:") \
            else {"path": args.scenario}
        resp = httpx.post(f"{args.server}/routes", json={
            "scenario": source, "resolution": args.resolution,
            "min_obstacle_extent": args.min_extent, "max_detour_factor": args.max_detour,
            "out_dir": args.out}, timeout=None)
        return _report_http(resp, lambda body: print(
            f"{len(body['routes'])} routes -> {', '.join(body['files'])}"))
    cfg = experiment.ExperimentConfig(scenario=args.scenario, output=args.out)
    cfg.routes = experiment.RouteSetConfig(
        min_obstacle_extent=args.min_extent, max_detour_factor=args.max_detour,
        resolution=args.resolution)
    artifacts = experiment.pipeline_routes(cfg)
    print(f"{len(artifacts.route_set.routes)} routes")
    for route in artifacts.route_set.routes:
        widths = " ".join(f"{w:.2f}" for w in route.gateway_widths)
        print(f"  route {route.id}: length {route.length:.2f} m, "
              f"{route.n_intermediate} intermediate destinations, gate widths [{widths}]")
    for f in artifacts.files:
        print(f"wrote {f}")
    return EXIT_OK


def _cmd_assign(args) -> int:
    overrides = {
        "output": args.out,
        "workers": args.workers,
        "oracle": args.oracle,
        "demands": _split_list(args.demand_list),
        "seeds": _split_list(args.seed_list),
    }
    if args.server:
        import httpx
        resp = httpx.post(f"{args.server}/sweep", json={
            "config_path": args.config, "output": args.out, "workers": args.workers,
            "oracle": args.oracle,
            "demands": [float(x) for x in overrides["demands"]] if overrides["demands"] else None,
            "seeds": [int(x) for x in overrides["seeds"]] if overrides["seeds"] else None,
        }, timeout=None)
        return _report_http(resp, lambda body: print(
            f"{sum(r['ok'] for r in body['runs'])}/{len(body['runs'])} runs ok; "
            f"files: {len(body['files'])}"))
    cfg = experiment.load_experiment_config(args.config, overrides)
    artifacts = experiment.pipeline_assign(cfg)
    ok = sum(1 for v in artifacts.results.values() if not isinstance(v, Exception))
    print(f"{ok}/{len(artifacts.results)} runs completed")
    for f in artifacts.files:
        print(f"wrote {f}")
    if artifacts.failures:
        for line in artifacts.failures:
            print(f"FAILED {line}", file=sys.stderr)
        return EXIT_RUN
    return EXIT_OK


def _cmd_summary(args) -> int:
    if args.server:
        import httpx
        resp = httpx.post(f"{args.server}/summary", json={
            "results_dir": args.results_dir, "out_dir": args.out}, timeout=None)
        return _report_http(resp, lambda body: print(
            f"aggregated {body['n_runs']} runs -> {', '.join(body['files'])}"))
    artifacts = experiment.pipeline_summary(args.results_dir, args.out)
    print(f"aggregated {len(artifacts.rows)} runs")
    for line in artifacts.missing:
        print(f"skipped {line}", file=sys.stderr)
    for f in artifacts.files:
        print(f"wrote {f}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import app
    uvicorn.run(app, host=args.host, port=args.port)
    return EXIT_OK


def _report_http(resp, on_ok) -> int:
    if resp.status_code == 200:
        on_ok(resp.json())
        return EXIT_OK
    try:
        detail = resp.json().get("detail", {})
        code = detail.get("code", "run")
        message = detail.get("message", resp.text)
    except Exception:
        code, message = "run", resp.text
    print(f"error ({code}): {message}", file=sys.stderr)
    return {"config": EXIT_CONFIG, "scenario": EXIT_SCENARIO}.get(code, EXIT_RUN)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "routes": _cmd_routes,
        "assign": _cmd_assign,
        "summary": _cmd_summary,
        "serve": _cmd_serve,
    }[args.command]
    try:
        return handler(args)
    except PedassignError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
