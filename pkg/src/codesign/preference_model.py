"""Per-user preference model over hybrid attribute+visual features.

Each user gets a small neural network (101 inputs -> 64 rectified-linear
hidden units -> 1 logit -> sigmoid) trained on binary overall votes.
"Incremental" training is realized as full retraining on the cumulative
label history from the same seeded initialization, which makes every weight
tensor a pure function of ``(init_seed, history)`` and lets the event log
replay models bit-for-bit.

Item selection is uncertainty-driven: after each round the unseen items with
the highest predictive entropy are recommended. The first round instead
maximizes attribute diversity (greedy max-min Hamming distance over the
51-bit encodings), anchored on the designer's curated library order.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .design_space import NUM_ATTRIBUTES
from .errors import EmptyBatch, NoCandidates, ValidationFailed

FEATURE_DIM = 101
HIDDEN_DIM = 64
ARCHITECTURE = (FEATURE_DIM, HIDDEN_DIM, 1)

# Full-batch gradient descent on the cumulative history. The step size is
# larger than a typical online setting because each retraining run gets only
# EPOCHS passes over at most a few dozen examples.
EPOCHS = 200
LEARNING_RATE = 0.1
INIT_SCALE = 0.3
ENTROPY_EPS = 1e-12

COLD_START_SIZE = 10
ROUND_SIZE = 5


def build_feature(design_vector, visual_embedding) -> np.ndarray:
    """Concatenate the 51-bit one-hot encoding with the 50-dim visual vector."""
    from .design_space import encode_one_hot

    visual = np.asarray(visual_embedding, dtype=np.float64)
    if visual.shape != (50,):
        raise ValidationFailed(f"visual embedding must have length 50, got {visual.shape}")
    if not np.all(np.isfinite(visual)):
        raise ValidationFailed("visual embedding entries must be finite")
    onehot = encode_one_hot(design_vector).astype(np.float64)
    return np.concatenate([onehot, visual])


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def entropy(p: float) -> float:
    """Binary entropy in bits, clamped away from the log singularities."""
    p = min(max(float(p), ENTROPY_EPS), 1.0 - ENTROPY_EPS)
    return float(-(p * np.log2(p) + (1.0 - p) * np.log2(1.0 - p)))


def _init_weights(init_seed: int) -> list[np.ndarray]:
    rng = np.random.default_rng(init_seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / FEATURE_DIM) * INIT_SCALE, size=(FEATURE_DIM, HIDDEN_DIM))
    b1 = np.zeros(HIDDEN_DIM)
    w2 = rng.normal(0.0, np.sqrt(2.0 / HIDDEN_DIM) * INIT_SCALE, size=(HIDDEN_DIM, 1))
    b2 = np.zeros(1)
    return [w1, b1, w2, b2]


def _forward(weights: Sequence[np.ndarray], x: np.ndarray):
    w1, b1, w2, b2 = weights
    z1 = x @ w1 + b1
    a1 = np.maximum(z1, 0.0)
    logits = (a1 @ w2 + b2).ravel()
    return z1, a1, logits


def bce_loss(weights: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray) -> float:
    _, _, logits = _forward(weights, x)
    p = np.clip(sigmoid(logits), ENTROPY_EPS, 1.0 - ENTROPY_EPS)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_gradients(
    weights: Sequence[np.ndarray], x: np.ndarray, y: np.ndarray
) -> list[np.ndarray]:
    """Analytic gradients of the mean binary cross-entropy."""
    w1, b1, w2, b2 = weights
    n = len(y)
    z1, a1, logits = _forward(weights, x)
    p = sigmoid(logits)
    dlogit = (p - y) / n
    g_w2 = a1.T @ dlogit[:, None]
    g_b2 = np.array([dlogit.sum()])
    da1 = dlogit[:, None] @ w2.T
    dz1 = da1 * (z1 > 0.0)
    g_w1 = x.T @ dz1
    g_b1 = dz1.sum(axis=0)
    return [g_w1, g_b1, g_w2, g_b2]


def _fit(init_seed: int, x: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    weights = _init_weights(init_seed)
    for _ in range(EPOCHS):
        grads = bce_gradients(weights, x, y)
        for w, g in zip(weights, grads):
            w -= LEARNING_RATE * g
    return weights


@dataclass(frozen=True)
class TrainEntry:
    round_index: int
    item_id: str
    label: int


@dataclass(frozen=True)
class PPNNState:
    """Immutable model snapshot; training returns a new state."""

    init_seed: int
    version: int = 0
    train_log: tuple[TrainEntry, ...] = ()
    features: tuple[tuple[str, tuple[float, ...]], ...] = ()
    weights: tuple[np.ndarray, ...] | None = None

    def history_hash(self) -> str:
        payload = json.dumps(
            [[e.round_index, e.item_id, e.label] for e in self.train_log]
        ).encode()
        return hashlib.sha256(payload).hexdigest()

    def _feature_map(self) -> dict[str, np.ndarray]:
        return {item_id: np.array(vals) for item_id, vals in self.features}

    def materialized(self) -> "PPNNState":
        """Return a state with weights computed from (init_seed, history)."""
        if self.weights is not None:
            return self
        if not self.train_log:
            return replace(self, weights=tuple(_init_weights(self.init_seed)))
        fmap = self._feature_map()
        x = np.stack([fmap[e.item_id] for e in self.train_log])
        y = np.array([float(e.label) for e in self.train_log])
        return replace(self, weights=tuple(_fit(self.init_seed, x, y)))


def new_model(init_seed: int) -> PPNNState:
    return PPNNState(init_seed=init_seed)


def train_increment(
    model: PPNNState,
    batch: Sequence[tuple[str, np.ndarray, int, int]],
) -> PPNNState:
    """Fold a batch of ``(item_id, feature, label, round_index)`` into the model.

    The returned state carries the cumulative history and weights retrained
    from the original seed, so identical histories yield identical weights.
    """
    if not batch:
        raise EmptyBatch("training batch must be nonempty")
    log = list(model.train_log)
    feats = dict(model.features)
    for item_id, feature, label, round_index in batch:
        if label not in (0, 1):
            raise ValidationFailed(f"label must be 0 or 1, got {label}")
        feature = np.asarray(feature, dtype=np.float64)
        if feature.shape != (FEATURE_DIM,):
            raise ValidationFailed(f"feature must have length {FEATURE_DIM}")
        log.append(TrainEntry(round_index=round_index, item_id=item_id, label=int(label)))
        feats[item_id] = tuple(float(v) for v in feature)
    next_state = PPNNState(
        init_seed=model.init_seed,
        version=model.version + 1,
        train_log=tuple(log),
        features=tuple(sorted(feats.items())),
        weights=None,
    )
    return next_state.materialized()


def predict(model: PPNNState, feature: np.ndarray) -> tuple[float, float]:
    """Preference probability and raw logit for one feature vector."""
    state = model.materialized()
    feature = np.asarray(feature, dtype=np.float64)
    _, _, logits = _forward(state.weights, feature[None, :])
    logit = float(logits[0])
    return float(sigmoid(np.array([logit]))[0]), logit


def predict_batch(model: PPNNState, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    state = model.materialized()
    _, _, logits = _forward(state.weights, np.asarray(features, dtype=np.float64))
    return sigmoid(logits), logits


class SelectionStrategy(Enum):
    COLD_START = "ColdStart"
    ENTROPY = "Entropy"
    RANDOM = "Random"  # simulation-harness baseline, never used in live flows


@dataclass(frozen=True)
class RecommendationRound:
    round_index: int
    item_ids: tuple[str, ...]
    strategy: SelectionStrategy

    def __post_init__(self) -> None:
        if len(set(self.item_ids)) != len(self.item_ids):
            raise ValidationFailed("round items must be distinct")


def select_next(
    model: PPNNState,
    candidates: Sequence[tuple[str, np.ndarray]],
    k: int = ROUND_SIZE,
    round_index: int = 1,
) -> RecommendationRound:
    """Top-k unseen items by predictive entropy, ties by ascending item id."""
    if not candidates:
        raise NoCandidates("no unseen candidates to select from")
    feats = np.stack([f for _, f in candidates])
    probs, _ = predict_batch(model, feats)
    scored = sorted(
        ((entropy(p), item_id) for (item_id, _), p in zip(candidates, probs)),
        key=lambda t: (-t[0], t[1]),
    )
    chosen = tuple(item_id for _, item_id in scored[: min(k, len(scored))])
    return RecommendationRound(round_index=round_index, item_ids=chosen,
                               strategy=SelectionStrategy.ENTROPY)


def _hamming(a: np.ndarray, b: np.ndarray) -> int:
    return int(np.sum(a != b))


def cold_start(
    candidates: Sequence[tuple[str, np.ndarray]],
    seed_ranking: Sequence[str] = (),
    k: int = COLD_START_SIZE,
) -> RecommendationRound:
    """Diversity-first opening round.

    The head of the curated ranking is seeded first; each further pick
    greedily maximizes its minimum Hamming distance (over the 51-bit
    encodings) to everything already chosen. Ties fall back to curated
    position, then item id.
    """
    if not candidates:
        raise NoCandidates("catalog has no items for the opening round")
    by_id = {item_id: np.asarray(bits) for item_id, bits in candidates}
    for bits in by_id.values():
        if bits.shape != (NUM_ATTRIBUTES,):
            raise ValidationFailed("cold start expects 51-bit encodings")
    rank_pos = {item_id: i for i, item_id in enumerate(seed_ranking)}
    sentinel = len(seed_ranking)

    def tie_key(item_id: str) -> tuple[int, str]:
        return (rank_pos.get(item_id, sentinel), item_id)

    if seed_ranking and seed_ranking[0] in by_id:
        first = seed_ranking[0]
    else:
        first = min(by_id, key=tie_key)
    chosen = [first]
    remaining = set(by_id) - {first}
    while remaining and len(chosen) < k:
        best = None
        best_key = None
        for item_id in remaining:
            dist = min(_hamming(by_id[item_id], by_id[c]) for c in chosen)
            key = (-dist,) + tie_key(item_id)
            if best_key is None or key < best_key:
                best_key = key
                best = item_id
        chosen.append(best)
        remaining.discard(best)
    return RecommendationRound(round_index=0, item_ids=tuple(chosen),
                               strategy=SelectionStrategy.COLD_START)


# ---------------------------------------------------------------------------
# Checkpoint file format: one JSON header line, then float32 little-endian
# weight tensors in fixed order (w1, b1, w2, b2), C-contiguous.
# ---------------------------------------------------------------------------


def save_checkpoint(model: PPNNState, path: Path) -> None:
    state = model.materialized()
    header = {
        "architecture": list(ARCHITECTURE),
        "init_seed": state.init_seed,
        "version": state.version,
        "history_hash": state.history_hash(),
    }
    blob = b"".join(
        np.ascontiguousarray(w, dtype="<f4").tobytes() for w in state.weights
    )
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(blob)


def load_checkpoint_header(path: Path) -> dict:
    with open(path, "rb") as fh:
        return json.loads(fh.readline().decode())


def load_checkpoint_weights(path: Path) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        fh.readline()
        blob = fh.read()
    shapes = [(FEATURE_DIM, HIDDEN_DIM), (HIDDEN_DIM,), (HIDDEN_DIM, 1), (1,)]
    out = []
    offset = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        out.append(arr.reshape(shape).astype(np.float64))
        offset += count * struct.calcsize("<f")
    return out
