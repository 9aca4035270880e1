"""Delimited reports and the figures rendered next to them.

Every writer is deterministic: floats are serialized with repr, rows keep
caller order, and PNGs are stripped of volatile metadata so re-running a
command reproduces identical bytes.
"""

from __future__ import annotations

import csv
import math
import os
from typing import Iterable, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import METRIC_COLUMNS

__all__ = [
    "format_cell", "write_csv", "write_metrics_csv", "write_probe_csv",
    "fig_training_curves", "fig_probe_bars", "fig_sweep", "fig_zeroshot",
    "PROBE_REPORT_NOTES",
]

PROBE_REPORT_NOTES = (
    "scores: micro-averaged F1 for presence and localization; "
    "accuracy for free_space and reachability (balanced pairs)",
    "reachability uses the same category taxonomy as the other tasks, "
    "sized by sim.category_count rather than an external object list",
)


def format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: str, columns: Sequence[str], rows: Iterable[Sequence],
              comments: Sequence[str] = ()) -> None:
    """Comment lines ('# ...') precede the header so spreadsheet imports can
    skip them; cells are repr-formatted for float round-tripping."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([format_cell(v) for v in row])


def write_metrics_csv(path: str, rows: list[dict], label_column: str = "split",
                      comments: Sequence[str] = ()) -> None:
    """Rows are {label_column: name, **metric_row}; NaN cells stay 'nan'."""
    columns = [label_column, *METRIC_COLUMNS]
    body = [[r[label_column]] + [r.get(c, float("nan")) for c in METRIC_COLUMNS]
            for r in rows]
    write_csv(path, columns, body, comments)


def write_probe_csv(path: str, rows: list[dict]) -> None:
    columns = ["task", "pretraining", "pooling", "metric", "score", "null"]
    body = [[r["task"], r["pretraining"], r["pooling"], r["metric"],
             r["score"], r.get("null", float("nan"))] for r in rows]
    write_csv(path, columns, body, comments=PROBE_REPORT_NOTES)


# ---------------------------------------------------------------------------
# Figures

_SAVE_KW = dict(dpi=110, metadata={"Software": None})


def _finish(fig, out_path: str) -> str:
    os.makedirs(os.path.dirname(out_path) or ".", exist_ok=True)
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
    return out_path


def _read_csv_rows(path: str) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def fig_training_curves(csv_path: str, out_path: str) -> str:
    """Two panels from a training log: losses/entropy and validation SR/SPL."""
    header, rows = _read_csv_rows(csv_path)
    col = {name: i for i, name in enumerate(header)}
    steps = [float(r[col["step"]]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    for name in ("loss_policy", "loss_value", "entropy"):
        ax1.plot(steps, [float(r[col[name]]) for r in rows], label=name)
    ax1.set_xlabel("env steps")
    ax1.legend(fontsize=8)
    ax1.set_title("optimization")
    for name in ("sr_val", "spl_val"):
        vals = [float(r[col[name]]) for r in rows]
        ax2.plot(steps, vals, label=name)
    ax2.set_xlabel("env steps")
    ax2.set_ylim(-0.05, 1.05)
    ax2.legend(fontsize=8)
    ax2.set_title("validation")
    fig.tight_layout()
    return _finish(fig, out_path)


def fig_probe_bars(rows: list[dict], out_path: str) -> str:
    """Grouped bars: one group per task, one bar per (pretraining, pooling)."""
    tasks = sorted({r["task"] for r in rows})
    variants = sorted({(r["pretraining"], r["pooling"]) for r in rows})
    width = 0.8 / max(len(variants), 1)
    fig, ax = plt.subplots(figsize=(1.8 * len(tasks) + 3, 3.6))
    for vi, variant in enumerate(variants):
        xs, ys = [], []
        for ti, task in enumerate(tasks):
            match = [r for r in rows
                     if r["task"] == task
                     and (r["pretraining"], r["pooling"]) == variant]
            if match:
                xs.append(ti + vi * width)
                ys.append(match[0]["score"])
        ax.bar(xs, ys, width=width, label="/".join(variant))
    ax.set_xticks([t + 0.4 - width / 2 for t in range(len(tasks))])
    ax.set_xticklabels(tasks, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.legend(fontsize=7)
    ax.set_title("linear probes on frozen features")
    fig.tight_layout()
    return _finish(fig, out_path)


def fig_sweep(rows: list[dict], out_path: str) -> str:
    """Proxy-task score vs navigation SR, one point per backbone."""
    fig, ax = plt.subplots(figsize=(4.6, 3.6))
    for r in rows:
        ax.scatter(r["proxy_score"], r["sr"], s=40)
        ax.annotate(r["backbone"], (r["proxy_score"], r["sr"]),
                    textcoords="offset points", xytext=(5, 3), fontsize=8)
    ax.set_xlabel("proxy classification score")
    ax.set_ylabel("navigation success rate")
    ax.set_xlim(-0.05, 1.05)
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("encoder sweep")
    fig.tight_layout()
    return _finish(fig, out_path)


def fig_zeroshot(rows: list[dict], out_path: str) -> str:
    """SR bars per (policy, category split)."""
    labels = [f"{r['policy']}\n{r['categories']}" for r in rows]
    fig, ax = plt.subplots(figsize=(1.1 * len(rows) + 2.5, 3.6))
    bars = ax.bar(range(len(rows)), [r["sr"] for r in rows])
    for b, r in zip(bars, rows):
        sigma = r.get("sigma")
        if sigma is not None and not (isinstance(sigma, float) and math.isnan(sigma)):
            ax.errorbar(b.get_x() + b.get_width() / 2, r["sr"], yerr=sigma,
                        fmt="none", ecolor="black", capsize=3)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("success rate")
    ax.set_title("goal-text navigation transfer")
    fig.tight_layout()
    return _finish(fig, out_path)
