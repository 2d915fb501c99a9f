"""Optional PNG figures written next to the CSV outputs.

Uses the non-interactive Agg backend and strips PNG metadata so the files are
byte-identical across runs.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="png", dpi=100, metadata=_META)
    plt.close(fig)
    return path


def plot_lift_timelines(path, runs) -> Path:
    """Cumulative slip detections over lift time, one line per run."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for run in runs:
        t = [row[1] for row in run.timeline]
        total = [row[3] for row in run.timeline]
        label = f"{run.cls} compensation {'on' if run.compensate else 'off'}"
        ax.step(t, total, where="post", label=label)
        if run.fall_time_s is not None:
            ax.axvline(run.fall_time_s, linestyle="--", color="grey")
    ax.set_xlabel("time since lift (s)")
    ax.set_ylabel("slip detections")
    ax.legend(loc="upper left", fontsize=8)
    return _save(fig, path)


def plot_sweep(path, sweep) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    by_cls: dict = {}
    for r in sweep.runs:
        by_cls.setdefault(r.cls, []).append((r.count, r.slip_events))
    for cls, pts in by_cls.items():
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=cls)
    ax.axhline(1, linestyle=":", color="grey")
    ax.set_xlabel("consecutive contact detections")
    ax.set_ylabel("slip events during lift")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_accuracy(path, report) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for unit in sorted({r.unit for r in report.rows}):
        rows = [r for r in report.rows if r.unit == unit]
        ax.plot([r.threshold for r in rows], [r.accuracy for r in rows], marker="o",
                label=f"sensor {unit}")
    ax.set_xlabel("brightness threshold")
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_csr(path, tables: dict) -> Path:
    """Bar chart per grouping, `tables` maps grouping name to {group: rate}."""
    fig, axes = plt.subplots(1, len(tables), figsize=(3.2 * len(tables), 3.2), squeeze=False)
    for ax, (name, table) in zip(axes[0], tables.items()):
        ax.bar(list(table), list(table.values()))
        ax.set_title(name)
        ax.set_ylim(0, 1)
        ax.tick_params(axis="x", labelrotation=45, labelsize=7)
    return _save(fig, path)
