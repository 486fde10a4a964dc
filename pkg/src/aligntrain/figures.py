"""Matplotlib renderers for run artifacts: CSV in, PNG out.

Figures are a convenience view over the delimited outputs, which stay the
canonical record of every run.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

STRATEGY_COLORS = {
    "fixed": "tab:gray",
    "variance": "tab:blue",
    "entropy": "tab:orange",
    "cosine_spread": "tab:green",
}


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _color(strategy: str) -> str:
    return STRATEGY_COLORS.get(strategy, "tab:red")


def plot_weight_trajectory(csv_path: Path, out_path: Path) -> Path:
    rows = _read_csv(csv_path)
    epochs = [int(r["epoch"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, [float(r["w_i"]) for r in rows], label="w_i (image-to-text)")
    ax.plot(epochs, [float(r["w_t"]) for r in rows], label="w_t (text-to-image)")
    ax.axhline(0.5, color="gray", lw=0.8, ls=":")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss weight")
    strategy = rows[0]["strategy"] if rows else ""
    ax.set_title(f"Loss-weight trajectory ({strategy})")
    ax.set_ylim(0, 1)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_training_log(csv_path: Path, out_path: Path) -> Path:
    rows = _read_csv(csv_path)
    epochs = [int(r["epoch"]) for r in rows]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [float(r["mean_total"]) for r in rows], label="total")
    ax1.plot(epochs, [float(r["mean_l_i2t"]) for r in rows], label="image-to-text", ls="--")
    ax1.plot(epochs, [float(r["mean_l_t2i"]) for r in rows], label="text-to-image", ls="--")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.legend()
    ax2.plot(epochs, [float(r["val_r1_i2t"]) for r in rows], label="val R@1 image-to-text")
    ax2.plot(epochs, [float(r["val_r1_t2i"]) for r in rows], label="val R@1 text-to-image")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("recall (%)")
    ax2.legend()
    fig.suptitle(f"Training run ({rows[0]['strategy']})" if rows else "Training run")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_loss_curves(csv_path: Path, out_path: Path) -> Path:
    """Per-epoch training loss grouped by (strategy, scenario)."""
    rows = _read_csv(csv_path)
    series: dict[tuple[str, str], list[tuple[int, float]]] = defaultdict(list)
    for r in rows:
        series[(r["strategy"], r["scenario"])].append((int(r["epoch"]), float(r["mean_total"])))
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for (strategy, scenario), points in sorted(series.items()):
        points.sort()
        ls = "-" if scenario == "clean" else "--"
        ax.plot(
            [p[0] for p in points],
            [p[1] for p in points],
            ls,
            color=_color(strategy),
            label=f"{strategy} / {scenario}",
        )
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("Training loss: clean vs noisy data")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_ablation(csv_path: Path, out_path: Path) -> Path:
    """Grouped bars: strategies x the four headline recall columns."""
    rows = _read_csv(csv_path)
    metrics = ["r1_i2t", "r5_i2t", "r1_t2i", "r5_t2i"]
    labels = ["R@1 img-to-txt", "R@5 img-to-txt", "R@1 txt-to-img", "R@5 txt-to-img"]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    width = 0.8 / max(len(rows), 1)
    for j, row in enumerate(rows):
        offs = [i + j * width for i in range(len(metrics))]
        ax.bar(
            offs,
            [float(row[m]) for m in metrics],
            width=width,
            color=_color(row["strategy"]),
            label=row["strategy"],
        )
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metrics))])
    ax.set_xticklabels(labels, fontsize=9)
    ax.set_ylabel("recall (%)")
    ax.set_title("Strategy comparison (seed-averaged)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_noise_robustness(csv_path: Path, out_path: Path) -> Path:
    """R@5 image-to-text on the clean test set after training per scenario."""
    rows = _read_csv(csv_path)
    scenarios = sorted({r["scenario"] for r in rows}, key=lambda s: (s != "clean", s))
    strategies = sorted({r["strategy"] for r in rows})
    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / max(len(strategies), 1)
    for j, strategy in enumerate(strategies):
        vals = []
        for scen in scenarios:
            match = [r for r in rows if r["strategy"] == strategy and r["scenario"] == scen]
            vals.append(float(match[0]["r5_i2t"]) if match else 0.0)
        offs = [i + j * width for i in range(len(scenarios))]
        ax.bar(offs, vals, width=width, color=_color(strategy), label=strategy)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(scenarios))])
    ax.set_xticklabels(scenarios, fontsize=9)
    ax.set_ylabel("clean-test R@5 img-to-txt (%)")
    ax.set_title("Retrieval after training on noisy data")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_embeddings_2d(csv_path: Path, out_path: Path) -> Path:
    """Scatter of the 2-D projection: images as triangles, texts as circles."""
    rows = _read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(5.5, 5.5))
    for modality, marker in (("image", "^"), ("text", "o")):
        pts = [(float(r["x"]), float(r["y"])) for r in rows if r["modality"] == modality]
        if pts:
            ax.scatter(
                [p[0] for p in pts],
                [p[1] for p in pts],
                marker=marker,
                s=18,
                alpha=0.7,
                label=modality,
            )
    ax.set_xlabel("component 1")
    ax.set_ylabel("component 2")
    ax.set_title("Test embeddings, top-2 principal components")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


# Which renderer handles which artifact file, searched recursively.
RENDERERS = [
    ("weight_trajectory.csv", plot_weight_trajectory, "weight_trajectory.png"),
    ("training_log.csv", plot_training_log, "training_log.png"),
    ("loss_curves.csv", plot_loss_curves, "loss_curves.png"),
    ("ablation.csv", plot_ablation, "ablation.png"),
    ("stress_summary.csv", plot_noise_robustness, "noise_robustness.png"),
    ("embeddings_2d.csv", plot_embeddings_2d, "embeddings_2d.png"),
]


def render_report(out_dir: str | Path) -> list[Path]:
    """Render every known CSV artifact under ``out_dir`` to a PNG beside it."""
    out_dir = Path(out_dir)
    written = []
    for name, renderer, png_name in RENDERERS:
        for csv_path in sorted(out_dir.rglob(name)):
            written.append(renderer(csv_path, csv_path.with_name(png_name)))
    return written
