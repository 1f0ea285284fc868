"""Delimited outputs and the figures rendered next to them.

CSV writing is deliberately fussy: floats go through one fixed formatter and
rows keep a fixed column order, so identical runs produce byte-identical
files. Figures are rendered with the Agg backend straight to PNG.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import RANK_KS, Metrics
from .imaging import ImageSample
from .losses import LossBreakdown

LOSS_COLUMNS = ("step", "l_tri", "l_id", "mmd", "coral", "l_tran", "total")
METRIC_COLUMNS = (
    "combo",
    "seed",
    "regime",
    "sss_train",
    "sss_transfer",
    "sss_test",
    "transfer_type",
    "map",
    "rank1",
    "rank5",
    "rank10",
    "rank20",
    "num_queries",
    "config_digest",
)


def fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "%.10g" % value
    return str(value)


def write_loss_log(path: str | Path, rows: list[LossBreakdown]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOSS_COLUMNS)
        for step, row in enumerate(rows, start=1):
            writer.writerow(
                [step] + [fmt(v) for v in (row.l_tri, row.l_id, row.mmd, row.coral, row.l_tran, row.total)]
            )


def metrics_row(
    metrics: Metrics,
    combo: str = "",
    seed: int = 0,
    regime: str = "baseline",
    sss_train: bool = False,
    sss_transfer: bool = False,
    sss_test: bool = False,
    transfer_type: str = "",
    config_digest: str = "",
) -> dict:
    row = {
        "combo": combo,
        "seed": seed,
        "regime": regime,
        "sss_train": sss_train,
        "sss_transfer": sss_transfer,
        "sss_test": sss_test,
        "transfer_type": transfer_type,
        "map": metrics.map,
        "num_queries": metrics.num_queries,
        "config_digest": config_digest,
    }
    for k in RANK_KS:
        row[f"rank{k}"] = metrics.rank_k[k]
    return row


def write_metrics_csv(path: str | Path, rows: list[dict]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
        for row in rows:
            writer.writerow([fmt(row.get(col, "")) for col in METRIC_COLUMNS])


def metrics_table(rows: list[dict]) -> str:
    """Fixed-width text table of the headline columns."""
    cols = ("combo", "seed", "regime", "map", "rank1", "rank5", "rank10", "rank20")
    rendered = [cols] + [
        tuple(fmt(r.get(c, "")) if not isinstance(r.get(c), float) else "%.4f" % r[c] for c in cols)
        for r in rows
    ]
    widths = [max(len(line[i]) for line in rendered) for i in range(len(cols))]
    lines = []
    for line in rendered:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_grid_figure(summary_rows: list[dict], path: str | Path) -> None:
    """Bar chart of median mAP and Rank-1 per training-method combination."""
    combos = [r["combo"] for r in summary_rows]
    maps = [r["map"] for r in summary_rows]
    rank1 = [r["rank1"] for r in summary_rows]
    x = np.arange(len(combos))
    fig, ax = plt.subplots(figsize=(7.5, 4.0))
    ax.bar(x - 0.2, maps, width=0.4, label="mAP", color="#3465a4")
    ax.bar(x + 0.2, rank1, width=0.4, label="Rank-1", color="#f57900")
    ax.set_xticks(x)
    ax.set_xticklabels(combos)
    ax.set_ylim(0.0, 1.0)
    ax.set_xlabel("training method")
    ax.set_ylabel("median over seeds")
    ax.legend(loc="lower right")
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_cmc_figure(metrics: Metrics, path: str | Path) -> None:
    ks = sorted(metrics.rank_k)
    values = [metrics.rank_k[k] for k in ks]
    fig, ax = plt.subplots(figsize=(5.5, 3.8))
    ax.plot(ks, values, marker="o", color="#3465a4")
    ax.set_xscale("log")
    ax.set_xticks(ks)
    ax.set_xticklabels([str(k) for k in ks])
    ax.set_ylim(0.0, 1.02)
    ax.set_xlabel("rank k")
    ax.set_ylabel("matching rate")
    ax.set_title(f"CMC over {metrics.num_queries} queries (mAP {metrics.map:.3f})")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_query_figure(
    query: ImageSample,
    ranked: list[tuple[ImageSample, bool | None]],
    path: str | Path,
) -> None:
    """Query image beside its top-k gallery hits; green frames mark correct
    matches, red frames misses, gray frames unknowns."""
    n = len(ranked) + 1
    fig, axes = plt.subplots(1, n, figsize=(1.9 * n, 2.6))
    if n == 1:
        axes = [axes]
    axes[0].imshow(query.pixels)
    axes[0].set_title("query", fontsize=9)
    for ax, (sample, correct) in zip(axes[1:], ranked):
        ax.imshow(sample.pixels)
        if correct is None:
            color = "#888888"
        else:
            color = "#2e9e3e" if correct else "#cc2222"
        for spine in ax.spines.values():
            spine.set_color(color)
            spine.set_linewidth(3.0)
        ax.set_title(f"id {sample.identity_id}", fontsize=9)
    for ax in axes:
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
