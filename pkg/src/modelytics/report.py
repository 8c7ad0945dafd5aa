"""Figure rendering for CLI reports.

Every plotting command in the CLI funnels through here so that the
matplotlib Agg backend is selected once and figures always land in
files, never on a display.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def _finish(fig, out_path: str) -> str:
    out_path = os.path.abspath(out_path)
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def stats_figure(rows: list[dict], out_path: str) -> str:
    """Bar chart of compression ratio per (class, attribute)."""
    labels = [f"{r['class']}.{r['attribute']}" for r in rows]
    ratios = [r["ratio"] if r["ratio"] is not None else 0.0 for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(labels)), 4))
    ax.bar(labels, ratios, color="#4878a8")
    ax.set_ylabel("compression ratio")
    ax.set_ylim(0, 1)
    ax.set_title("stored scalars vs raw points")
    for tick in ax.get_xticklabels():
        tick.set_rotation(30)
        tick.set_ha("right")
    return _finish(fig, out_path)


def bench_figure(result: dict, out_path: str) -> str:
    """Two panels: compression ratio, and read latency vs the raw baseline."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.bar(["ratio"], [result["ratio"]], color="#4878a8")
    ax1.set_ylim(min(0.0, result["ratio"]), 1)
    ax1.set_title(f"{result['signal']} signal, {result['points']} points")
    ax1.set_ylabel("compression ratio")
    ax2.bar(["encoded", "raw scan"],
            [result["read_us"], result["baseline_us"]],
            color=["#4878a8", "#a84848"])
    ax2.set_yscale("log")
    ax2.set_ylabel("mean read latency (us)")
    ax2.set_title(f"speedup {result['speedup']:.1f}x")
    return _finish(fig, out_path)


def anomalies_figure(points: list[tuple], alerts: list[tuple], out_path: str) -> str:
    """Scored values over time with alerting rows highlighted.

    points and alerts are (timestamp_ms, value) pairs.
    """
    fig, ax = plt.subplots(figsize=(9, 4))
    if points:
        ax.plot([p[0] for p in points], [p[1] for p in points],
                ".", color="#b0b8c0", markersize=2, label="scored")
    if alerts:
        ax.plot([a[0] for a in alerts], [a[1] for a in alerts],
                "x", color="#c03030", markersize=6, label="suspicious")
    ax.set_xlabel("timestamp (ms)")
    ax.set_ylabel("value")
    ax.set_title("anomaly scan")
    ax.legend(loc="upper right")
    return _finish(fig, out_path)
