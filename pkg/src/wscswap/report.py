"""Comparison table (CSV) and one bar plot per metric."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import HIGHER_IS_BETTER, MetricReport, relative_performance  # noqa: E402

METRICS = ("id_retrieval", "id_csim", "id_consis", "pose_err", "exp_err", "psnr")
LABELS = {
    "id_retrieval": "ID retrieval",
    "id_csim": "ID-CSim",
    "id_consis": "ID-Consis",
    "pose_err": "Pose error",
    "exp_err": "Expression error",
    "psnr": "Self-swap PSNR (dB)",
}


def write_table(reports: dict, path, baseline: str | None = None) -> Path:
    path = Path(path)
    header = ["method", *METRICS]
    if baseline is not None:
        header += [f"rel_{m}" for m in METRICS]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for name, r in reports.items():
            row = [name] + ["" if getattr(r, m) is None else f"{getattr(r, m):.6g}" for m in METRICS]
            if baseline is not None:
                rel = relative_performance(reports[baseline], r)
                row += ["" if rel[m] is None else f"{100 * rel[m]:+.2f}%" for m in METRICS]
            w.writerow(row)
    return path


def plot_metric(reports: dict, metric: str, path) -> Path:
    names = [n for n, r in reports.items() if getattr(r, metric) is not None]
    values = [getattr(reports[n], metric) for n in names]
    fig, ax = plt.subplots(figsize=(1.2 * max(len(names), 2) + 1.5, 3.2))
    bars = ax.bar(names, values, color="#4c72b0", edgecolor="black", linewidth=0.6)
    ax.bar_label(bars, fmt="%.3g", fontsize=8)
    arrow = "higher is better" if HIGHER_IS_BETTER[metric] else "lower is better"
    ax.set_ylabel(LABELS[metric])
    ax.set_title(f"{LABELS[metric]} ({arrow})", fontsize=10)
    ax.axhline(0, color="black", linewidth=0.6)
    ax.tick_params(axis="x", labelrotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def write_report(reports: dict, out_dir, baseline: str | None = None) -> list:
    """Returns the written files: ``metrics.csv`` then one PNG per metric with data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for r in reports.values():
        if not isinstance(r, MetricReport):
            raise TypeError("reports must map labels to MetricReport")
    files = [write_table(reports, out_dir / "metrics.csv", baseline)]
    for m in METRICS:
        if any(getattr(r, m) is not None for r in reports.values()):
            files.append(plot_metric(reports, m, out_dir / f"{m}.png"))
    return files
