"""Design item store: sampling, ingestion, and designer curation.

Items carry their design vector, a content-addressed image ref, and a
50-dim visual embedding. Curation is non-destructive: removal soft-deletes
(the event log keeps the history) and reordering renumbers display ranks
compactly so non-deleted items always occupy ranks ``0..k-1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .design_space import (
    CANONICAL_SPACE,
    NUM_DIMENSIONS,
    DesignVector,
    FilterResult,
)
from .errors import AlreadyDeleted, UnknownItem, ValidationFailed

GENERATE_CAP = 500


@dataclass(frozen=True)
class DesignItem:
    item_id: str
    design_vector: DesignVector
    image_ref: str
    visual_embedding: tuple[float, ...]
    origin: str  # "Framing" | "Informed"
    display_rank: int
    deleted: bool = False

    def __post_init__(self) -> None:
        if len(self.visual_embedding) != 50:
            raise ValidationFailed("visual embedding must have length 50")
        if not all(np.isfinite(v) for v in self.visual_embedding):
            raise ValidationFailed("visual embedding entries must be finite")
        if self.origin not in ("Framing", "Informed"):
            raise ValidationFailed(f"unknown origin {self.origin!r}")

    def as_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "design_vector": list(self.design_vector.attribute_indices),
            "image_ref": self.image_ref,
            "visual_embedding": list(self.visual_embedding),
            "origin": self.origin,
            "display_rank": self.display_rank,
            "deleted": self.deleted,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DesignItem":
        return cls(
            item_id=d["item_id"],
            design_vector=DesignVector(tuple(int(x) for x in d["design_vector"])),
            image_ref=d["image_ref"],
            visual_embedding=tuple(float(x) for x in d["visual_embedding"]),
            origin=d["origin"],
            display_rank=int(d["display_rank"]),
            deleted=bool(d.get("deleted", False)),
        )


@dataclass(frozen=True)
class SceneContext:
    scene_text: str
    scene_image_ref: str
    garment_type: str
    principle: str
    filter: FilterResult

    def __post_init__(self) -> None:
        CANONICAL_SPACE.attribute_id("Type", self.garment_type)


def sample_design_vectors(filter_result: FilterResult, n: int, seed: int) -> list[DesignVector]:
    """Uniform per-dimension samples from the included attributes.

    Deterministic for a fixed seed. Samples are kept distinct unless the
    included space holds fewer than ``n`` combinations, in which case
    duplicates fill the remainder.
    """
    if n < 1:
        raise ValidationFailed("n must be >= 1")
    pools = filter_result.included_by_dimension()
    space_size = 1
    for pool in pools:
        space_size *= len(pool)
    rng = np.random.default_rng(seed)

    def draw() -> DesignVector:
        return DesignVector(tuple(pool[rng.integers(len(pool))] for pool in pools))

    out: list[DesignVector] = []
    if space_size < n:
        for _ in range(n):
            out.append(draw())
        return out
    seen: set[tuple[int, ...]] = set()
    while len(out) < n:
        v = draw()
        if v.attribute_indices in seen:
            continue
        seen.add(v.attribute_indices)
        out.append(v)
    return out


class Catalog:
    """Mutable item store; all mutations flow through the event log."""

    def __init__(self) -> None:
        self._items: dict[str, DesignItem] = {}

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._items

    def get(self, item_id: str) -> DesignItem:
        try:
            return self._items[item_id]
        except KeyError:
            raise UnknownItem(f"unknown item {item_id!r}") from None

    def all_items(self) -> list[DesignItem]:
        return sorted(self._items.values(), key=lambda it: it.item_id)

    def visible_items(self) -> list[DesignItem]:
        """Non-deleted items in display-rank order."""
        return sorted(
            (it for it in self._items.values() if not it.deleted),
            key=lambda it: it.display_rank,
        )

    def next_rank(self) -> int:
        return len([it for it in self._items.values() if not it.deleted])

    def insert(self, item: DesignItem) -> None:
        if item.item_id in self._items:
            raise ValidationFailed(f"duplicate item id {item.item_id!r}")
        self._items[item.item_id] = item

    def remove(self, item_id: str) -> None:
        item = self.get(item_id)
        if item.deleted:
            raise AlreadyDeleted(f"item {item_id!r} already removed")
        self._items[item_id] = replace(item, deleted=True)
        self._compact()

    def reorder(self, item_id: str, new_rank: int) -> None:
        item = self.get(item_id)
        if item.deleted:
            raise AlreadyDeleted(f"item {item_id!r} is removed")
        visible = self.visible_items()
        new_rank = max(0, min(new_rank, len(visible) - 1))
        order = [it for it in visible if it.item_id != item_id]
        order.insert(new_rank, item)
        for rank, it in enumerate(order):
            self._items[it.item_id] = replace(it, display_rank=rank)

    def _compact(self) -> None:
        for rank, it in enumerate(self.visible_items()):
            if it.display_rank != rank:
                self._items[it.item_id] = replace(it, display_rank=rank)

    def snapshot_dict(self) -> dict:
        return {"items": [it.as_dict() for it in self.all_items()]}
