"""Figures for sweep results (rendered off-screen to PNG files)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SWEEP_METRICS = ("precision", "recall", "f1", "auc")
_LABELS = {
    "density": "average activities per account",
    "splits": "split accounts per user (s)",
    "alpha": "Katz threshold percentile (alpha)",
    "d": "embedding length d",
    "pq": "p/q",
    "clusters": "clusters c",
}


def plot_sweep(rows, parameter: str, out_dir, metrics=SWEEP_METRICS) -> list[Path]:
    """One PNG per metric, ``sweep_<parameter>_<metric>.png``; returns the paths."""
    out_dir = Path(out_dir)
    xs = [float(r["value"]) for r in rows]
    paths = []
    for m in metrics:
        ys = [float("nan") if r.get(m) is None else float(r[m]) for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(xs, ys, marker="o")
        if parameter == "pq" and min(xs) > 0:
            ax.set_xscale("log", base=2)
        ax.set_xlabel(_LABELS.get(parameter, parameter))
        ax.set_ylabel(m)
        ax.set_ylim(0.0, 1.02)
        ax.grid(True, alpha=0.3)
        fig.tight_layout()
        path = out_dir / f"sweep_{parameter}_{m}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths
