"""Report emission: JSON metrics, CSV tables, per-graph prediction matrices,
rendered figures, and a human-readable summary.

Metrics JSON is written with sorted keys and no timestamps so identical runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import json
import math
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


class ReportError(RuntimeError):
    pass


def ensure_out_dir(out_dir: str, force: bool) -> None:
    """Create the output directory; refuse to reuse a non-empty one without force."""
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ReportError(f"output directory {out_dir!r} is not empty; pass --force to overwrite")
    os.makedirs(out_dir, exist_ok=True)


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return value


def write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, sort_keys=True, indent=2)
        fh.write("\n")


def write_csv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_matrix(path: str, matrix: np.ndarray) -> None:
    np.savetxt(path, matrix, delimiter=",", fmt="%.17g")


def read_matrix(path: str) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def find_nan_metrics(payload, prefix="") -> list[str]:
    """Paths of non-finite numeric leaves inside a metrics payload."""
    bad = []
    if isinstance(payload, dict):
        for k, v in payload.items():
            bad.extend(find_nan_metrics(v, f"{prefix}{k}."))
    elif isinstance(payload, (list, tuple)):
        for i, v in enumerate(payload):
            bad.extend(find_nan_metrics(v, f"{prefix}{i}."))
    elif isinstance(payload, float) and not math.isfinite(payload):
        bad.append(prefix.rstrip("."))
    return bad


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_metric_bars(path: str, labels: list[str], metric_sets: dict[str, list[float]],
                       title: str) -> None:
    """Grouped bars, one group per metric, one bar per labelled method."""
    metrics = list(metric_sets)
    x = np.arange(len(metrics))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(6, 3.2))
    for i, label in enumerate(labels):
        vals = [metric_sets[m][i] for m in metrics]
        ax.bar(x + i * width, vals, width, label=label)
    ax.set_xticks(x + width * (len(labels) - 1) / 2)
    ax.set_xticklabels(metrics)
    ax.set_ylabel("percent")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_histogram(path: str, values: list[float], xlabel: str, title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.hist([v for v in values if math.isfinite(v)], bins=15, color="#4878a8", alpha=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("graphs")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_curve(path: str, xs, series: dict[str, list[float]], xlabel: str,
                 ylabel: str, title: str, logx: bool = False) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, ys in series.items():
        ax.plot(xs, ys, marker="o", markersize=3, label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_training_curve(path: str, train_curve: list[float],
                          val_curve: list[tuple[int, float]]) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(np.arange(1, len(train_curve) + 1), train_curve, lw=0.6, alpha=0.7,
            label="train")
    if val_curve:
        steps, vals = zip(*val_curve)
        ax.plot(steps, vals, marker="o", markersize=3, color="crimson", label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("flow-matching loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_mode_bars(path: str, proportions: dict[str, dict[str, float]], title: str) -> None:
    """Mode-frequency bars for the coupled-edge toy (one bar cluster per mode)."""
    modes = ["both_present", "both_absent", "invalid"]
    labels = list(proportions)
    x = np.arange(len(modes))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    for i, label in enumerate(labels):
        vals = [proportions[label].get(m, 0.0) for m in modes]
        ax.bar(x + i * width, vals, width, label=label)
    ax.set_xticks(x + width * (len(labels) - 1) / 2)
    ax.set_xticklabels(["both present", "both absent", "invalid"])
    ax.set_ylabel("proportion of samples")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


# ---------------------------------------------------------------------------
# Top-level emission
# ---------------------------------------------------------------------------

def emit_report(results: dict, out_dir: str, force: bool = False,
                strict: bool = False) -> int:
    """Write metrics JSON, per-graph CSV predictions, tables, figures, and a
    summary. Returns the process exit code (nonzero only for NaN metrics in
    strict mode)."""
    ensure_out_dir(out_dir, force)
    figures_dir = os.path.join(out_dir, "figures")
    tables_dir = os.path.join(out_dir, "tables")
    os.makedirs(figures_dir, exist_ok=True)
    os.makedirs(tables_dir, exist_ok=True)

    metrics = results.get("metrics", {})
    write_json(os.path.join(out_dir, "metrics.json"), metrics)

    preds = results.get("predictions", {})
    if preds:
        pred_dir = os.path.join(out_dir, "reconstructions")
        os.makedirs(pred_dir, exist_ok=True)
        for gid, matrix in preds.items():
            write_matrix(os.path.join(pred_dir, f"pred_{gid}.csv"), matrix)

    for name, (header, rows) in results.get("tables", {}).items():
        write_csv(os.path.join(tables_dir, f"{name}.csv"), header, rows)

    per_graph = results.get("per_graph_rows")
    if per_graph:
        write_csv(os.path.join(tables_dir, "per_graph_metrics.csv"),
                  per_graph[0], per_graph[1])

    for render in results.get("figures", []):
        render(figures_dir)

    nan_paths = find_nan_metrics(_jsonable(metrics))
    lines = [results.get("title", "experiment report"), "=" * 40]
    headline = metrics.get("headline", {})
    if not headline and not preds and not results.get("tables"):
        lines.append("no results (0 rows)")
    for key in sorted(headline):
        lines.append(f"{key:>24}: {headline[key]}")
    for extra in results.get("summary_lines", []):
        lines.append(extra)
    if nan_paths:
        lines.append("")
        lines.append("FLAGGED non-finite metrics:")
        for p in nan_paths:
            lines.append(f"  - {p}")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")

    if nan_paths and strict:
        return 2
    return 0
