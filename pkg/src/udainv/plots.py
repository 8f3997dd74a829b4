"""Report figures rendered next to the delimited outputs.

Every figure is produced with a fixed size, dpi and metadata so reruns
under the same seed write byte-identical files.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsRow  # noqa: E402
from .uda import BoundAuditReport, LogRow  # noqa: E402

_SAVE_KW = {"dpi": 110, "metadata": {"Software": "udainv"}}


def save_training_curves(log: list[LogRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    iterations = [row.iteration for row in log]
    ax.plot(iterations, [row.l_s for row in log], label="source loss")
    ax.plot(iterations, [row.d_st for row in log], label="discrepancy")
    ax.plot(iterations, [row.total for row in log], label="total", linestyle="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_metric_bars(rows: list[MetricsRow], path: Path) -> None:
    names = ["PSNR", "SSIM", "MSE", "FFD", "IDs"]
    values = {row.split: [row.psnr, row.ssim, row.mse, row.ffd, row.ids]
              for row in rows}
    fig, axes = plt.subplots(1, len(names), figsize=(12, 3))
    splits = [row.split for row in rows]
    for i, (ax, name) in enumerate(zip(axes, names)):
        ax.bar(range(len(splits)), [values[s][i] for s in splits],
               tick_label=splits, color=["#4878a8", "#b35c44"][: len(splits)])
        ax.set_title(name)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_bound_terms(report: BoundAuditReport, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([0], [report.r_t], tick_label=["target risk"], color="#b35c44")
    bottom = 0.0
    for value, label, color in ((report.r_s, "source risk", "#4878a8"),
                                (report.d_hat, "discrepancy", "#6aa66a"),
                                (report.lambda_star_hat, "joint risk", "#a8a84a")):
        ax.bar([1], [value], bottom=bottom, label=label, color=color)
        bottom += value
    ax.set_xticks([0, 1])
    ax.set_xticklabels(["target risk", "bound"])
    ax.set_title(f"slack {report.slack:+.4f} (3 s.e. {3 * report.se_combined:.4f})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_edit_sheet(strips, alphas, path: Path) -> None:
    """Grid of edited renders: one row per latent, one column per alpha."""
    n_rows = len(strips)
    n_cols = len(alphas)
    fig, axes = plt.subplots(n_rows, n_cols, figsize=(1.2 * n_cols, 1.2 * n_rows),
                             squeeze=False)
    for i, row in enumerate(strips):
        for j, img in enumerate(row):
            ax = axes[i][j]
            ax.imshow(img, cmap="gray", vmin=0.0, vmax=1.0, interpolation="nearest")
            ax.set_xticks(())
            ax.set_yticks(())
            if i == 0:
                ax.set_title(f"a={alphas[j]:+g}", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
