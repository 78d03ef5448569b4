"""Delimited report emission plus matplotlib figure rendering.

Report commands write CSV (RFC 4180 via the csv module) and JSON next to
PNG figures rendered with the Agg backend, so headless runs produce the
full bundle in one pass.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .design_space import CANONICAL_SPACE, NUM_DIMENSIONS


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_json(path: Path, doc: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# Consensus bundle
# ---------------------------------------------------------------------------


def consensus_csv_rows(view: dict) -> list[list]:
    rows = []
    for dim, attrs in view.get("acs_raw", {}).items():
        for attr, raw in attrs.items():
            rows.append([dim, attr, raw, view["acs_norm"][dim][attr]])
    return rows


def emit_consensus_bundle(view: dict, out_dir: Path) -> list[Path]:
    """consensus.csv + consensus.json + one bar-chart grid figure."""
    out_dir = Path(out_dir)
    paths = [
        write_csv(
            out_dir / "consensus.csv",
            ["dimension", "attribute", "acs_raw", "acs_norm"],
            consensus_csv_rows(view),
        ),
        write_json(out_dir / "consensus.json", view),
    ]
    if view.get("acs_norm"):
        paths.append(plot_consensus(view, out_dir / "consensus.png"))
    return paths


def plot_consensus(view: dict, path: Path) -> Path:
    dims = list(view["acs_norm"].keys())
    fig, axes = plt.subplots(3, 3, figsize=(14, 9))
    for ax, dim in zip(axes.ravel(), dims):
        attrs = view["acs_norm"][dim]
        names = list(attrs.keys())
        vals = [attrs[n] for n in names]
        order = np.argsort(vals)[::-1]
        names = [names[i] for i in order]
        vals = [vals[i] for i in order]
        ax.barh(range(len(names)), vals, color="#4878a8")
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names, fontsize=7)
        ax.invert_yaxis()
        ax.set_xlim(0, 1)
        ax.set_title(dim, fontsize=9)
    fig.suptitle("Normalized attribute consensus", fontsize=12)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


# ---------------------------------------------------------------------------
# Attribution bundle
# ---------------------------------------------------------------------------


def emit_attribution_bundle(view: dict, out_dir: Path, stem: str = "attribution") -> list[Path]:
    out_dir = Path(out_dir)
    rows = []
    dims = view["dimensions"]
    for u in view["per_user"]:
        for d, phi in zip(dims, u["phi"]):
            rows.append([u["user_id"], d, phi, u["logit"], u["baseline_logit"],
                         u["probability"]])
    paths = [
        write_csv(
            out_dir / f"{stem}.csv",
            ["user_id", "dimension", "phi", "logit", "baseline_logit", "probability"],
            rows,
        ),
        write_json(out_dir / f"{stem}.json", view),
    ]
    if view["per_user"]:
        paths.append(plot_attribution(view, out_dir / f"{stem}.png"))
    return paths


def plot_attribution(view: dict, path: Path) -> Path:
    """Per-user contribution dots over per-dimension mean-|phi| bars."""
    dims = view["dimensions"]
    x = np.arange(len(dims))
    fig, ax = plt.subplots(figsize=(11, 5))
    ax.bar(x, view["mean_abs"], color="#c8d8e8", label="mean |contribution|")
    for u in view["per_user"]:
        ax.plot(x, u["phi"], "o", markersize=5, alpha=0.75, label=u["user_id"])
    ax.axhline(0.0, color="gray", linewidth=0.8)
    ax.set_xticks(x)
    ax.set_xticklabels(dims, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("logit contribution")
    ax.set_title("Per-dimension preference attribution")
    ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


# ---------------------------------------------------------------------------
# Simulation bundle
# ---------------------------------------------------------------------------

METRICS_HEADER = [
    "seed", "strategy", "user_id", "round_index", "labels", "train_accuracy",
    "heldout_accuracy", "heldout_auc", "mean_entropy",
]


def emit_simulation_bundle(
    metrics_rows: Sequence[Sequence],
    correlation_rows: Sequence[Sequence],
    comparison_rows: Sequence[Sequence],
    out_dir: Path,
) -> list[Path]:
    out_dir = Path(out_dir)
    paths = [
        write_csv(out_dir / "metrics.csv", METRICS_HEADER, metrics_rows),
        write_csv(
            out_dir / "rank_correlation.csv",
            ["seed", "strategy", "dimension", "spearman_rho"],
            correlation_rows,
        ),
    ]
    if comparison_rows:
        paths.append(
            write_csv(
                out_dir / "comparison.csv",
                ["seed", "auc_entropy", "auc_random", "auc_difference", "sign"],
                comparison_rows,
            )
        )
    paths.append(plot_learning_curves(metrics_rows, out_dir / "learning_curves.png"))
    if comparison_rows:
        paths.append(plot_comparison(comparison_rows, out_dir / "comparison.png"))
    return paths


def plot_learning_curves(metrics_rows: Sequence[Sequence], path: Path) -> Path:
    by_strategy: dict[str, dict[int, list[float]]] = {}
    ent_by_strategy: dict[str, dict[int, list[float]]] = {}
    for row in metrics_rows:
        _, strategy, _, round_index, _, _, _, auc, mean_entropy = row
        by_strategy.setdefault(strategy, {}).setdefault(int(round_index), []).append(float(auc))
        ent_by_strategy.setdefault(strategy, {}).setdefault(int(round_index), []).append(
            float(mean_entropy)
        )
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(11, 4.5))
    for strategy, per_round in sorted(by_strategy.items()):
        rounds = sorted(per_round)
        ax1.plot(rounds, [np.mean(per_round[r]) for r in rounds], "o-", label=strategy)
    ax1.set_xlabel("round")
    ax1.set_ylabel("held-out AUC")
    ax1.set_title("Held-out AUC per round")
    ax1.axhline(0.5, color="gray", linewidth=0.8, linestyle="--")
    ax1.legend(fontsize=8)
    for strategy, per_round in sorted(ent_by_strategy.items()):
        rounds = sorted(per_round)
        ax2.plot(rounds, [np.mean(per_round[r]) for r in rounds], "o-", label=strategy)
    ax2.set_xlabel("round")
    ax2.set_ylabel("mean prediction entropy (bits)")
    ax2.set_title("Unlabeled-pool entropy per round")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)


def plot_comparison(comparison_rows: Sequence[Sequence], path: Path) -> Path:
    seeds = [row[0] for row in comparison_rows]
    diffs = [float(row[3]) for row in comparison_rows]
    fig, ax = plt.subplots(figsize=(9, 4.5))
    colors = ["#4878a8" if d >= 0 else "#b05050" for d in diffs]
    ax.bar(range(len(seeds)), diffs, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_xticks(range(len(seeds)))
    ax.set_xticklabels([str(s) for s in seeds], fontsize=7)
    ax.set_xlabel("seed")
    ax.set_ylabel("AUC(entropy) - AUC(random)")
    ax.set_title(f"Paired strategy comparison (mean diff {np.mean(diffs):+.4f})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return Path(path)
