"""Headless simulation harness with planted-truth synthetic users.

Each synthetic user carries a hidden linear utility over the 51 attribute
bits. Items above the catalog-median utility are "liked" (optionally
noise-flipped), which gives every run a ground truth to score against:
held-out accuracy/AUC of the learned per-user models, prediction entropy on
the unlabeled pool, and rank correlation between consensus scores and the
planted attribute desirability.

The workflow itself runs through the HTTP API in-process (framing ->
library -> sessions -> brushes/votes -> consensus -> informed generation);
only the metric computations read the engine state directly.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .backends import MOCK_IMAGE_H, MOCK_IMAGE_W
from .design_space import CANONICAL_SPACE, NUM_DIMENSIONS
from .errors import ValidationFailed
from .gateway.service import GatewayService
from .preference_model import entropy, predict_batch
from .reporting import emit_simulation_bundle


@dataclass(frozen=True)
class SyntheticUser:
    user_id: str
    utility_weights: np.ndarray  # 51 reals over the one-hot layout
    noise: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.noise < 0.5:
            raise ValidationFailed("noise must lie in [0, 0.5)")

    def utilities(self, onehots: np.ndarray) -> np.ndarray:
        return onehots @ self.utility_weights

    def labels(self, onehots: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """1 iff utility above the population median, then noise-flipped."""
        u = self.utilities(onehots)
        labels = (u > np.median(u)).astype(int)
        if self.noise > 0:
            flips = rng.random(len(labels)) < self.noise
            labels = np.where(flips, 1 - labels, labels)
        return labels

    def brush_dimensions(self, attribute_indices: Sequence[int]) -> list[tuple[int, bool]]:
        """The two dimensions this item speaks loudest about, with polarity."""
        offsets = CANONICAL_SPACE.block_offsets
        per_dim = [
            (d, self.utility_weights[offsets[d] + attribute_indices[d]])
            for d in range(NUM_DIMENSIONS)
        ]
        per_dim.sort(key=lambda t: (-abs(t[1]), t[0]))
        return [(d, w > 0) for d, w in per_dim[:2]]


@dataclass(frozen=True)
class SimulationConfig:
    users: int = 1
    catalog_size: int = 200
    rounds: int = 6
    seeds: tuple[int, ...] = tuple(range(20))
    noise: float = 0.0
    strategy: str = "both"  # entropy | random | both
    brush_probability: float = 1.0

    def __post_init__(self) -> None:
        if self.strategy not in ("entropy", "random", "both"):
            raise ValidationFailed(f"unknown strategy {self.strategy!r}")
        if self.users < 1 or self.catalog_size < 15 or self.rounds < 1:
            raise ValidationFailed("users >= 1, catalog_size >= 15, rounds >= 1 required")
        if not self.seeds:
            raise ValidationFailed("at least one seed is required")


@dataclass
class RunResult:
    seed: int
    strategy: str
    metrics_rows: list[list] = field(default_factory=list)
    correlation_rows: list[list] = field(default_factory=list)
    final_auc: dict[str, float] = field(default_factory=dict)
    final_train_acc: dict[str, float] = field(default_factory=dict)


def _zone_region(dimension: int) -> dict:
    """A brushable rectangle for one dimension, from the layout zones."""
    zone = CANONICAL_SPACE.part_layout[CANONICAL_SPACE.dimension_name(dimension)]
    x0, y0, x1, y1 = zone.rects[0]
    region = {
        "x_min": int(round(x0 * MOCK_IMAGE_W)),
        "y_min": int(round(y0 * MOCK_IMAGE_H)),
        "x_max": max(int(round(x1 * MOCK_IMAGE_W)), int(round(x0 * MOCK_IMAGE_W)) + 1),
        "y_max": max(int(round(y1 * MOCK_IMAGE_H)), int(round(y0 * MOCK_IMAGE_H)) + 1),
        "image_w": MOCK_IMAGE_W,
        "image_h": MOCK_IMAGE_H,
    }
    return region


def _auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels > 0.5
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        return 0.5
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores))
    ranks[order] = np.arange(1, len(scores) + 1)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def run_simulation(
    config: SimulationConfig, data_dir: Path, strategy: str, seed: int
) -> RunResult:
    """One full project run with one strategy and one seed."""
    from fastapi.testclient import TestClient

    from .gateway.api import create_app

    run_dir = Path(data_dir) / f"run-{strategy.lower()}-{seed}"
    app = create_app(run_dir, base_seed=seed, max_rounds=config.rounds)
    client = TestClient(app)
    gateway: GatewayService = app.state.gateway
    result = RunResult(seed=seed, strategy=strategy)

    pid = client.post(
        "/projects",
        json={"seed": seed, "max_rounds": config.rounds,
              "selection_strategy": strategy.capitalize()},
    ).json()["project_id"]
    client.post(
        f"/projects/{pid}/framing",
        json={"garment_type": "T-shirt", "scene": "everyday city walk",
              "principle": "wearable and expressive", "strictness": 0.0},
    ).raise_for_status()
    client.post(
        f"/projects/{pid}/library/generate", json={"n": config.catalog_size}
    ).raise_for_status()

    svc = gateway.project(pid)
    items = svc.state.catalog.visible_items()
    item_ids = [it.item_id for it in items]
    from .design_space import encode_one_hot

    onehots = np.stack([encode_one_hot(it.design_vector).astype(float) for it in items])
    features = np.stack(
        [svc.state.item_feature(it.item_id) for it in items]
    )
    index_of = {iid: i for i, iid in enumerate(item_ids)}

    rng = np.random.default_rng(seed)
    users = [
        SyntheticUser(
            user_id=f"user{u:02d}",
            utility_weights=rng.normal(0.0, 1.0, size=51),
            noise=config.noise,
        )
        for u in range(config.users)
    ]

    for user in users:
        labels = user.labels(onehots, rng)
        view = client.post(
            f"/projects/{pid}/sessions",
            json={"user_id": user.user_id, "gender": "M",
                  "height_cm": 175.0, "weight_kg": 70.0},
        ).json()
        sid = view["session_id"]
        while True:
            round_index = view["round_index"]
            for entry in view["items"]:
                if entry["voted"]:
                    continue
                iid = entry["item_id"]
                idx = index_of[iid]
                if rng.random() < config.brush_probability:
                    item = items[idx]
                    for dim, positive in user.brush_dimensions(
                        item.design_vector.attribute_indices
                    ):
                        client.post(
                            f"/sessions/{sid}/interactions",
                            json={
                                "item_id": iid,
                                "polarity": "Like" if positive else "Dislike",
                                "region": _zone_region(dim),
                                "confirmed_dimensions": [dim],
                            },
                        ).raise_for_status()
                view = client.post(
                    f"/sessions/{sid}/votes",
                    json={"item_id": iid,
                          "polarity": "Like" if labels[idx] else "Dislike"},
                ).json()
            result.metrics_rows.append(
                _metrics_row(svc, user, sid, labels, features, item_ids, seed,
                             strategy, round_index)
            )
            if view["closed"] or view["round_index"] == round_index:
                break
        result.final_auc[user.user_id] = float(result.metrics_rows[-1][7])
        result.final_train_acc[user.user_id] = float(result.metrics_rows[-1][5])

    # Consensus vs planted desirability, per dimension.
    consensus_view = client.get(f"/projects/{pid}/consensus").json()
    mean_w = np.mean(np.stack([u.utility_weights for u in users]), axis=0)
    offsets = CANONICAL_SPACE.block_offsets
    for d in range(NUM_DIMENSIONS):
        dim = CANONICAL_SPACE.dimension_name(d)
        names = CANONICAL_SPACE.dimensions[d].attributes
        acs = [consensus_view["acs_raw"][dim][a] for a in names]
        planted = [mean_w[offsets[d] + i] for i in range(len(names))]
        rho = stats.spearmanr(acs, planted).statistic
        result.correlation_rows.append(
            [seed, strategy, dim, float(rho) if np.isfinite(rho) else 0.0]
        )

    # Close the loop: pick the consensus-best attribute per dimension and
    # request one informed design with its attribution report.
    best = []
    for d in range(NUM_DIMENSIONS):
        dim = CANONICAL_SPACE.dimension_name(d)
        names = CANONICAL_SPACE.dimensions[d].attributes
        norm = consensus_view["acs_norm"][dim]
        best.append([d, int(np.argmax([norm[a] for a in names]))])
    client.post(
        f"/projects/{pid}/informed", json={"selection": best, "n": 1}
    ).raise_for_status()
    return result


def _metrics_row(
    svc, user: SyntheticUser, session_id: str, labels: np.ndarray,
    features: np.ndarray, item_ids: list[str], seed: int, strategy: str,
    round_index: int,
) -> list:
    """Post-round metrics for one user: train accuracy, held-out quality."""
    state = svc.state
    model = state.models[user.user_id]
    session = state.sessions[session_id]
    shown = state.shown_by_user.get(user.user_id, set())
    held_idx = [i for i, iid in enumerate(item_ids) if iid not in shown]
    probs_all, _ = predict_batch(model, features)
    if held_idx:
        held_probs = probs_all[held_idx]
        held_labels = labels[held_idx]
        heldout_acc = float(np.mean((held_probs > 0.5) == (held_labels > 0.5)))
        heldout_auc = _auc(held_probs, held_labels)
        mean_entropy = float(np.mean([entropy(p) for p in held_probs]))
    else:
        heldout_acc, heldout_auc, mean_entropy = 0.5, 0.5, 0.0
    train_idx = [i for i, iid in enumerate(item_ids) if iid in session.votes]
    train_labels = np.array(
        [1 if session.votes[item_ids[i]] == "Like" else 0 for i in train_idx]
    )
    train_probs = probs_all[train_idx]
    train_acc = float(np.mean((train_probs > 0.5) == (train_labels > 0.5)))
    return [
        seed, strategy, user.user_id, round_index, len(train_idx), train_acc,
        heldout_acc, heldout_auc, mean_entropy,
    ]


@dataclass
class SimulationSummary:
    metrics_rows: list[list]
    correlation_rows: list[list]
    comparison_rows: list[list]
    mean_final_auc: dict[str, float]
    wall_time_s: float
    paths: list[Path]


def simulate(config: SimulationConfig, out_dir: Path) -> SimulationSummary:
    """Run all (strategy, seed) combinations and emit the report bundle."""
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    strategies = ["entropy", "random"] if config.strategy == "both" else [config.strategy]
    runs: dict[tuple[str, int], RunResult] = {}
    work_dir = out_dir / "runs"
    for strategy in strategies:
        for seed in config.seeds:
            runs[(strategy, seed)] = run_simulation(config, work_dir, strategy, seed)

    metrics_rows = []
    correlation_rows = []
    for run in runs.values():
        metrics_rows.extend(run.metrics_rows)
        correlation_rows.extend(run.correlation_rows)
    comparison_rows = []
    if set(strategies) == {"entropy", "random"}:
        for seed in config.seeds:
            auc_e = float(np.mean(list(runs[("entropy", seed)].final_auc.values())))
            auc_r = float(np.mean(list(runs[("random", seed)].final_auc.values())))
            diff = auc_e - auc_r
            comparison_rows.append(
                [seed, auc_e, auc_r, diff, "+" if diff > 0 else ("-" if diff < 0 else "0")]
            )
    mean_final = {
        strategy: float(
            np.mean(
                [v for s in config.seeds for v in runs[(strategy, s)].final_auc.values()]
            )
        )
        for strategy in strategies
    }
    paths = emit_simulation_bundle(metrics_rows, correlation_rows, comparison_rows, out_dir)
    return SimulationSummary(
        metrics_rows=metrics_rows,
        correlation_rows=correlation_rows,
        comparison_rows=comparison_rows,
        mean_final_auc=mean_final,
        wall_time_s=time.perf_counter() - t0,
        paths=paths,
    )
