"""Run artifacts: delimited metric streams, flat key=value summaries,
grayscale PGM heatmaps, and matplotlib renderings of the same data."""

import os
from dataclasses import dataclass, field

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from . import pnm  # noqa: E402


def format_value(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_kv(path, mapping):
    lines = [f"{k} = {format_value(v)}" for k, v in mapping.items()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_matrix_csv(path, matrix):
    matrix = np.asarray(matrix)
    write_csv(path, [f"c{j}" for j in range(matrix.shape[1])],
              [list(map(float, row)) for row in matrix])


def read_matrix_csv(path):
    with open(path, encoding="utf-8") as fh:
        rows = fh.read().strip().splitlines()[1:]
    return np.array([[float(v) for v in row.split(",")] for row in rows])


def write_heatmap_pgm(path, matrix):
    """Min-max normalized grayscale dump; raw values belong in the CSV."""
    m = np.asarray(matrix, dtype=np.float64)
    lo, hi = m.min(), m.max()
    scaled = np.zeros_like(m) if hi == lo else (m - lo) / (hi - lo)
    pnm.write_pgm(path, np.rint(scaled * 255.0).astype(np.uint8))


def render_heatmap_png(path, matrix, title="", tick_labels=None):
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(np.asarray(matrix), cmap="magma", interpolation="nearest")
    fig.colorbar(im, ax=ax, shrink=0.85)
    if tick_labels is not None:
        ax.set_xticks(range(len(tick_labels)), tick_labels)
        ax.set_yticks(range(len(tick_labels)), tick_labels)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_loss_curves_png(path, rows, columns, skip=("iter", "lr")):
    """rows: list of dicts keyed by column name, one per iteration."""
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    iters = [r["iter"] for r in rows]
    for col in columns:
        if col in skip:
            continue
        ax.plot(iters, [r[col] for r in rows], label=col, linewidth=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


@dataclass
class RunReport:
    """Everything a training run leaves behind, plus where it was written."""

    loss_rows: list = field(default_factory=list)
    miou_train_pairs: float = float("nan")
    miou_holdout_pairs: float = float("nan")
    mean_offdiag_dependency: float = float("nan")
    artifacts: list = field(default_factory=list)

    def summary(self, rel_to=None):
        out = {
            "iters": len(self.loss_rows),
            "miou_train_pairs": self.miou_train_pairs,
            "miou_holdout_pairs": self.miou_holdout_pairs,
            "mean_offdiag_dependency": self.mean_offdiag_dependency,
        }
        if self.loss_rows:
            for key, val in self.loss_rows[-1].items():
                if key != "iter":
                    out[f"final_{key}"] = val
        paths = self.artifacts
        if rel_to is not None:
            paths = [os.path.relpath(p, rel_to) for p in paths]
        out["artifacts"] = ";".join(paths)
        return out


LOSS_COLUMNS = ("iter", "lr", "ce", "intra", "c2c", "c2p", "total")


def write_run_artifacts(out_dir, report):
    """Loss stream CSV + key=value summary + loss-curve figure."""
    os.makedirs(out_dir, exist_ok=True)
    losses_csv = os.path.join(out_dir, "losses.csv")
    write_csv(losses_csv, LOSS_COLUMNS,
              [[row[c] for c in LOSS_COLUMNS] for row in report.loss_rows])
    report.artifacts.append(losses_csv)
    curves_png = os.path.join(out_dir, "loss_curves.png")
    if report.loss_rows:
        render_loss_curves_png(curves_png, report.loss_rows, LOSS_COLUMNS)
        report.artifacts.append(curves_png)
    summary_path = os.path.join(out_dir, "run_summary.txt")
    write_kv(summary_path, report.summary(rel_to=out_dir))
    report.artifacts.append(summary_path)
    return summary_path
