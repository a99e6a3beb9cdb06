"""Evaluation-return curves from a metrics file."""

from __future__ import annotations

import csv
import logging
import math
from pathlib import Path

log = logging.getLogger(__name__)


def read_eval_series(metrics_path) -> list[tuple[int, float, float]]:
    """(env_step, eval_return_mean, eval_return_std) for every evaluation row; bad rows are skipped."""
    series = []
    with open(metrics_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            mean = row.get("eval_return_mean")
            if mean is None and row.get("env_step") is None:
                log.warning("%s:%d: malformed row skipped", metrics_path, lineno)
                continue
            if not mean:
                continue
            try:
                step = int(row["env_step"])
                value = float(mean)
                std = float(row.get("eval_return_std") or "nan")
            except (TypeError, ValueError, KeyError):
                log.warning("%s:%d: malformed row skipped", metrics_path, lineno)
                continue
            if not math.isfinite(value):
                log.warning("%s:%d: non-finite evaluation return skipped", metrics_path, lineno)
                continue
            series.append((step, value, std))
    return series


def export_curves(metrics_path, out_path) -> list[tuple[int, float, float]]:
    """Write a line plot to ``out_path`` and the plotted series to ``out_path`` with a .csv suffix."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = read_eval_series(metrics_path)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path.with_suffix(".csv"), "w", encoding="utf-8") as fh:
        fh.write("env_step,eval_return_mean,eval_return_std\n")
        for step, mean, std in series:
            fh.write(f"{step},{mean!r},{std!r}\n")

    fig, ax = plt.subplots(figsize=(6, 4))
    if series:
        steps = [s for s, _, _ in series]
        means = [m for _, m, _ in series]
        stds = [0.0 if math.isnan(d) else d for _, _, d in series]
        ax.plot(steps, means, marker="o")
        ax.fill_between(steps, [m - d for m, d in zip(means, stds)], [m + d for m, d in zip(means, stds)], alpha=0.2)
    ax.set_xlabel("environment step")
    ax.set_ylabel("evaluation return")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return series
