"""Group preference scoring from brush-interaction tallies.

A user's utility for an attribute is the Laplace-smoothed like fraction
``(L + 1) / (L + D + 2)`` over their brush feedback. The group consensus for
an attribute is the geometric mean of the per-user utilities, computed in
log space, then min-max normalized within each dimension onto [0.01, 0.99]
for display.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .design_space import CANONICAL_SPACE, NUM_DIMENSIONS, AttributeId, DesignSpace
from .elicitation import InteractionKind, InteractionRecord, Polarity
from .errors import ValidationFailed

NORM_LO = 0.01
NORM_HI = 0.99


@dataclass
class PreferenceTally:
    """Per (user, attribute) like/dislike counts derived from brush records."""

    counts: dict[tuple[str, tuple[int, int]], tuple[int, int]] = field(default_factory=dict)
    skipped_unknown_items: int = 0

    def get(self, user_id: str, attr: AttributeId) -> tuple[int, int]:
        return self.counts.get((user_id, attr.as_tuple()), (0, 0))

    def add(self, user_id: str, attr: AttributeId, like: bool) -> None:
        l, d = self.counts.get((user_id, attr.as_tuple()), (0, 0))
        self.counts[(user_id, attr.as_tuple())] = (l + 1, d) if like else (l, d + 1)


def tally(
    records: Iterable[InteractionRecord],
    vectors_by_item: Mapping[str, Sequence[int]],
) -> PreferenceTally:
    """Accumulate brush feedback into per-attribute counters.

    Each brush record increments one counter per confirmed dimension, for
    the garment's attribute in that dimension. Overall votes contribute
    nothing here; they feed the preference model and like-ratio bars.
    Records for unknown items are skipped and counted.
    """
    out = PreferenceTally()
    for rec in records:
        if rec.kind is not InteractionKind.BRUSH:
            continue
        attrs = vectors_by_item.get(rec.item_id)
        if attrs is None:
            out.skipped_unknown_items += 1
            continue
        like = rec.polarity is Polarity.LIKE
        for d in rec.confirmed_dimensions:
            out.add(rec.user_id, AttributeId(d, attrs[d]), like)
    return out


def upu(likes: int, dislikes: int) -> float:
    """Laplace-smoothed per-user utility ``(L + 1) / (L + D + 2)``."""
    if likes < 0 or dislikes < 0:
        raise ValidationFailed("counts must be non-negative")
    return (likes + 1) / (likes + dislikes + 2)


@dataclass(frozen=True)
class ConsensusReport:
    user_ids: tuple[str, ...]
    upu_table: dict[str, dict[tuple[int, int], float]]
    acs_raw: dict[tuple[int, int], float]
    acs_norm: dict[tuple[int, int], float]
    log_offset: int = 0

    @property
    def user_count(self) -> int:
        return len(self.user_ids)


def consensus(
    tally_result: PreferenceTally,
    users: Sequence[str],
    space: DesignSpace = CANONICAL_SPACE,
    log_offset: int = 0,
) -> ConsensusReport:
    """Geometric-mean consensus per attribute, plus per-dimension normalization.

    Users with no feedback on an attribute still contribute their smoothed
    prior of 0.5, keeping the user count stable across attributes. Dimensions
    whose raw scores are constant normalize to 0.5 everywhere.
    """
    if not users:
        raise ValidationFailed("consensus requires at least one user")
    user_ids = tuple(users)
    attrs = space.all_attribute_ids()
    upu_table: dict[str, dict[tuple[int, int], float]] = {}
    for u in user_ids:
        row = {}
        for a in attrs:
            l, d = tally_result.get(u, a)
            row[a.as_tuple()] = upu(l, d)
        upu_table[u] = row
    acs_raw: dict[tuple[int, int], float] = {}
    for a in attrs:
        # Summing in sorted order makes the result bitwise invariant under
        # any permutation of the user list.
        logs = sorted(np.log(upu_table[u][a.as_tuple()]) for u in user_ids)
        acs_raw[a.as_tuple()] = float(np.exp(np.mean(logs)))
    acs_norm: dict[tuple[int, int], float] = {}
    for d in range(NUM_DIMENSIONS):
        keys = [(d, a) for a in range(space.attribute_count(d))]
        vals = [acs_raw[k] for k in keys]
        lo, hi = min(vals), max(vals)
        if hi - lo < 1e-15:
            for k in keys:
                acs_norm[k] = 0.5
        else:
            for k, v in zip(keys, vals):
                acs_norm[k] = NORM_LO + (NORM_HI - NORM_LO) * (v - lo) / (hi - lo)
    return ConsensusReport(
        user_ids=user_ids,
        upu_table=upu_table,
        acs_raw=acs_raw,
        acs_norm=acs_norm,
        log_offset=log_offset,
    )


def report_to_json_dict(report: ConsensusReport, space: DesignSpace = CANONICAL_SPACE) -> dict:
    """Serialize with keys in canonical dimension/attribute order."""

    def attr_map(values: Mapping[tuple[int, int], float]) -> dict:
        out: dict[str, dict[str, float]] = {}
        for d in range(NUM_DIMENSIONS):
            dim = space.dimension_name(d)
            out[dim] = {
                space.dimensions[d].attributes[a]: values[(d, a)]
                for a in range(space.attribute_count(d))
            }
        return out

    return {
        "log_offset": report.log_offset,
        "n": report.user_count,
        "upu": {u: attr_map(report.upu_table[u]) for u in sorted(report.user_ids)},
        "acs_raw": attr_map(report.acs_raw),
        "acs_norm": attr_map(report.acs_norm),
    }
