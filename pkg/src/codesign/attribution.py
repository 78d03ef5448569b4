"""Exact Shapley attribution of prediction logits across design dimensions.

The nine one-hot dimension blocks act as players; the 50-dim visual block is
held at the instance value in every coalition. A coalition's value is the
model logit of the feature vector whose in-coalition blocks take instance
values and whose out-of-coalition blocks take baseline values. With nine
players all 512 coalitions are enumerated, so the attribution is exact and
the efficiency identity (contributions sum to full-minus-baseline logit)
holds to numerical precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial
from typing import Mapping, Sequence

import numpy as np

from .design_space import CANONICAL_SPACE, NUM_DIMENSIONS, DesignSpace
from .errors import ValidationFailed
from .preference_model import FEATURE_DIM, PPNNState, predict_batch, sigmoid

_N_COALITIONS = 1 << NUM_DIMENSIONS

# Shapley weight for adding a player to a coalition of size s.
_WEIGHTS = np.array(
    [
        factorial(s) * factorial(NUM_DIMENSIONS - s - 1) / factorial(NUM_DIMENSIONS)
        for s in range(NUM_DIMENSIONS)
    ]
)

_MASK_SIZE = np.array([bin(m).count("1") for m in range(_N_COALITIONS)])


def _block_slices(space: DesignSpace) -> list[slice]:
    return [
        slice(space.block_offsets[d], space.block_offsets[d] + space.attribute_count(d))
        for d in range(NUM_DIMENSIONS)
    ]


@dataclass(frozen=True)
class AttributionConfig:
    """Baseline feature vector against which instances are attributed."""

    baseline: np.ndarray

    def __post_init__(self) -> None:
        if np.asarray(self.baseline).shape != (FEATURE_DIM,):
            raise ValidationFailed(f"baseline must have length {FEATURE_DIM}")


def mean_baseline(features: Sequence[np.ndarray]) -> AttributionConfig:
    """Catalog-mean baseline over the given item features."""
    if not features:
        raise ValidationFailed("baseline requires at least one feature")
    return AttributionConfig(baseline=np.mean(np.stack(features), axis=0))


def coalition_values(
    model: PPNNState, instance: np.ndarray, cfg: AttributionConfig,
    space: DesignSpace = CANONICAL_SPACE,
) -> np.ndarray:
    """Logit of every coalition, indexed by the 9-bit coalition mask."""
    instance = np.asarray(instance, dtype=np.float64)
    baseline = np.asarray(cfg.baseline, dtype=np.float64)
    slices = _block_slices(space)
    feats = np.tile(baseline, (_N_COALITIONS, 1))
    feats[:, 51:] = instance[51:]  # visual block always at instance value
    masks = np.arange(_N_COALITIONS)
    for d, sl in enumerate(slices):
        rows = (masks >> d) & 1 == 1
        feats[rows, sl] = instance[sl]
    _, logits = predict_batch(model, feats)
    return logits


def shapley_exact(
    model: PPNNState, instance: np.ndarray, cfg: AttributionConfig,
    space: DesignSpace = CANONICAL_SPACE,
) -> np.ndarray:
    """Exact per-dimension logit contributions via full coalition enumeration."""
    v = coalition_values(model, instance, cfg, space)
    phi = np.zeros(NUM_DIMENSIONS)
    masks = np.arange(_N_COALITIONS)
    for d in range(NUM_DIMENSIONS):
        without = masks[(masks >> d) & 1 == 0]
        w = _WEIGHTS[_MASK_SIZE[without]]
        phi[d] = float(np.sum(w * (v[without | (1 << d)] - v[without])))
    return phi


@dataclass(frozen=True)
class UserAttribution:
    user_id: str
    phi: tuple[float, ...]
    logit: float
    baseline_logit: float

    @property
    def probability(self) -> float:
        return float(sigmoid(np.array([self.logit]))[0])


@dataclass(frozen=True)
class ShapleyReport:
    per_user: tuple[UserAttribution, ...]
    mean_abs: tuple[float, ...]


def attribute_item(
    models: Mapping[str, PPNNState],
    instance: np.ndarray,
    cfg: AttributionConfig,
    space: DesignSpace = CANONICAL_SPACE,
) -> ShapleyReport:
    """Attribution for one item across every user's model."""
    per_user = []
    for user_id in sorted(models):
        v = coalition_values(models[user_id], instance, cfg, space)
        phi = shapley_exact(models[user_id], instance, cfg, space)
        per_user.append(
            UserAttribution(
                user_id=user_id,
                phi=tuple(float(x) for x in phi),
                logit=float(v[_N_COALITIONS - 1]),
                baseline_logit=float(v[0]),
            )
        )
    mean_abs = (
        aggregate([u.phi for u in per_user]) if per_user else tuple([0.0] * NUM_DIMENSIONS)
    )
    return ShapleyReport(per_user=tuple(per_user), mean_abs=mean_abs)


def aggregate(phi_vectors: Sequence[Sequence[float]]) -> tuple[float, ...]:
    """Mean absolute contribution per dimension across users."""
    if not phi_vectors:
        raise ValidationFailed("aggregate requires at least one attribution")
    arr = np.abs(np.asarray(phi_vectors, dtype=np.float64))
    return tuple(float(x) for x in arr.mean(axis=0))


def dominant_summary(
    report: ShapleyReport, space: DesignSpace = CANONICAL_SPACE
) -> list[str]:
    """One sentence per user naming their strongest dimension and its sign."""
    lines = []
    for u in report.per_user:
        phi = np.asarray(u.phi)
        d = int(np.argmax(np.abs(phi)))
        direction = "toward liking" if phi[d] >= 0 else "toward disliking"
        lines.append(
            f"{u.user_id}: {space.dimension_name(d)} moves the prediction most ({direction}, "
            f"{phi[d]:+.4f} logits)."
        )
    return lines


def report_to_json_dict(
    report: ShapleyReport, space: DesignSpace = CANONICAL_SPACE
) -> dict:
    dims = [space.dimension_name(d) for d in range(NUM_DIMENSIONS)]
    return {
        "dimensions": dims,
        "per_user": [
            {
                "user_id": u.user_id,
                "phi": list(u.phi),
                "logit": u.logit,
                "baseline_logit": u.baseline_logit,
                "probability": u.probability,
            }
            for u in report.per_user
        ],
        "mean_abs": list(report.mean_abs),
        "summary": dominant_summary(report, space),
    }
