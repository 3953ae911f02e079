"""Vector-graphic emitters for route overlays, iteration traces and sweep summaries.

Every figure embeds the resolved run configuration in its SVG metadata so a
plot can be reproduced from the file alone.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "pedassign"  # deterministic SVG ids

import matplotlib.pyplot as plt
import numpy as np

ROUTE_COLORS = ["#d4a017", "#1f77b4", "#2ca02c", "#d62728", "#9467bd", "#8c564b"]


def _save(fig, path: Path, config_echo: str) -> None:
    fig.savefig(path, format="svg", metadata={"Description": config_echo})
    plt.close(fig)


def route_overlay(route_set, path: str | Path, config_echo: str = "") -> None:
    """Scene with obstacles, regions, route polylines and border curves."""
    geo = route_set.geometry
    xmin, ymin, xmax, ymax = geo.bounds
    fig, ax = plt.subplots(figsize=(9, 9 * (ymax - ymin) / (xmax - xmin) + 0.6))
    ax.add_patch(plt.Rectangle((xmin, ymin), xmax - xmin, ymax - ymin,
                               fill=False, edgecolor="black", lw=1.5))
    for poly in geo.obstacles:
        xs, ys = poly.exterior.xy
        ax.fill(xs, ys, color="#c23b22", alpha=0.9, lw=0)
    for region, color in ((geo.origin_region, "#e8d44d"), (geo.destination_region, "#7bbf6a")):
        xs, ys = region.exterior.xy
        ax.fill(xs, ys, color=color, alpha=0.8, lw=0)
    for route in route_set.routes:
        color = ROUTE_COLORS[(route.id - 1) % len(ROUTE_COLORS)]
        rep = route.representative
        if rep is not None and len(rep):
            ax.plot(rep[:, 0], rep[:, 1], color=color, lw=1.8,
                    label=f"route {route.id}")
            mid = rep[len(rep) // 2]
            ax.annotate(str(route.id), xy=(mid[0], mid[1]), fontsize=13,
                        fontweight="bold", color=color,
                        xytext=(mid[0], mid[1] + 0.25))
        for border in route.borders:
            ax.plot(border[:, 0], border[:, 1], color="#2c6fbb", lw=2.2, alpha=0.85)
    ax.set_xlim(xmin - 0.5, xmax + 0.5)
    ax.set_ylim(ymin - 0.5, ymax + 0.5)
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="upper center", ncol=max(1, len(route_set.routes)), fontsize=8)
    fig.tight_layout()
    _save(fig, Path(path), config_echo)


def iteration_panels(history_rows: list[dict], route_ids: list[int],
                     path: str | Path, title: str = "", config_echo: str = "") -> None:
    """Two stacked panels: choice ratios (percent) and mean travel times per iteration."""
    iters = [row["iter"] for row in history_rows]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for rid in route_ids:
        color = ROUTE_COLORS[(rid - 1) % len(ROUTE_COLORS)]
        ax1.plot(iters, [100 * row[f"p_{rid}"] for row in history_rows],
                 marker="o", ms=3, color=color, label=f"route {rid}")
        tts = [row[f"tt_{rid}"] for row in history_rows]
        ax2.plot(iters, [t if t == t else np.nan for t in tts],
                 marker="o", ms=3, color=color, label=f"route {rid}")
    ax1.set_ylabel("route choice ratio [%]")
    ax2.set_ylabel("mean travel time [s]")
    ax2.set_xlabel("iteration")
    ax1.grid(alpha=0.3)
    ax2.grid(alpha=0.3)
    ax1.legend(fontsize=8, ncol=2)
    if title:
        ax1.set_title(title)
    fig.tight_layout()
    _save(fig, Path(path), config_echo)


def summary_panels(rows: list[dict], route_ids: list[int], path: str | Path,
                   config_echo: str = "") -> None:
    """Selected-iteration ratios and travel times vs demand, one marker per seed."""
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(8, 7), sharex=True)
    for rid in route_ids:
        color = ROUTE_COLORS[(rid - 1) % len(ROUTE_COLORS)]
        xs = [row["demand"] for row in rows]
        ax1.scatter(xs, [100 * row[f"p_{rid}"] for row in rows], s=18, color=color,
                    label=f"route {rid}", alpha=0.8)
        ax2.scatter(xs, [row[f"tt_{rid}"] for row in rows], s=18, color=color, alpha=0.8)
        # per-demand seed means as a trend line
        demands = sorted({row["demand"] for row in rows})
        p_mean = [np.mean([row[f"p_{rid}"] for row in rows if row["demand"] == d]) for d in demands]
        t_vals = [[row[f"tt_{rid}"] for row in rows
                   if row["demand"] == d and row[f"tt_{rid}"] == row[f"tt_{rid}"]] for d in demands]
        t_mean = [np.mean(v) if v else np.nan for v in t_vals]
        ax1.plot(demands, [100 * p for p in p_mean], color=color, lw=1.2, alpha=0.7)
        ax2.plot(demands, t_mean, color=color, lw=1.2, alpha=0.7)
    ax1.set_ylabel("route choice ratio [%]")
    ax2.set_ylabel("mean travel time [s]")
    ax2.set_xlabel("demand [ped/s]")
    ax1.grid(alpha=0.3)
    ax2.grid(alpha=0.3)
    ax1.legend(fontsize=8, ncol=2)
    fig.tight_layout()
    _save(fig, Path(path), config_echo)
