"""Optional figures rendered from the report CSVs (matplotlib, headless)."""
from __future__ import annotations

from pathlib import Path

import numpy as np

SCORE_TITLES = {
    "corrected_qd_score": "Corrected QD-Score",
    "reproducibility_score": "Reproducibility-Score",
    "average_reproducibility": "Average reproducibility",
    "average_fitness": "Average fitness",
    "weighted_regret": "Weighted regret",
}


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.," else "_" for c in name)


def score_boxplots(metric_rows: list[dict], out_dir: Path) -> list[Path]:
    """One figure per task, one box-plot panel per metric, one box per label."""
    plt = _pyplot()
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for task in sorted({r["task"] for r in metric_rows}):
        rows = [r for r in metric_rows if r["task"] == task]
        labels = sorted({r["label"] for r in rows})
        fig, axes = plt.subplots(1, len(SCORE_TITLES), figsize=(4 * len(SCORE_TITLES), 4))
        for ax, (metric, title) in zip(axes, SCORE_TITLES.items()):
            data = [
                [float(r[metric]) for r in rows if r["label"] == lab and r[metric] not in ("", "nan")]
                for lab in labels
            ]
            ax.boxplot(data)
            ax.set_xticks(range(1, len(labels) + 1), labels, rotation=60, ha="right", fontsize=7)
            ax.set_title(title, fontsize=9)
        fig.suptitle(task)
        fig.tight_layout()
        path = out_dir / f"{_safe(task)}__scores.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        paths.append(path)
    return paths


def archive_heatmaps(matrices: dict, out_dir: Path) -> list[Path]:
    """Fitness and reproducibility heatmaps for every (task, label, seed)."""
    plt = _pyplot()
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for (task, label, seed), (fit, rep) in sorted(matrices.items()):
        fig, axes = plt.subplots(1, 2, figsize=(9, 4))
        for ax, matrix, title in ((axes[0], fit, "corrected fitness"), (axes[1], rep, "reproducibility")):
            image = ax.imshow(np.ma.masked_invalid(matrix).T, origin="lower", cmap="viridis")
            fig.colorbar(image, ax=ax)
            ax.set_title(title, fontsize=9)
        fig.suptitle(f"{task} / {label} / seed {seed}", fontsize=10)
        fig.tight_layout()
        path = out_dir / f"{_safe(f'{task}__{label}__seed{seed}')}__heatmap.png"
        fig.savefig(path, dpi=80)
        plt.close(fig)
        paths.append(path)
    return paths


def render_figures(metric_rows: list[dict], matrices: dict, out_dir: Path) -> list[Path]:
    out_dir = Path(out_dir)
    return score_boxplots(metric_rows, out_dir) + archive_heatmaps(matrices, out_dir)
