"""Designer-side synthesis: preference trees, pruning, fine-tune manifests.

A preference tree is rooted at one attribute. Its first layer holds every
non-deleted garment carrying that attribute; each garment expands into the
interaction records behind it (overall votes plus brushes confirming the
root's dimension). Designers prune edges to exclude records or whole
garments from the fine-tuning dataset; pruning is undoable because the
prune set is explicit state in the event log.

The exported manifest is the engine's boundary with the external trainer:
curated images, bit-exact masks, rendered prompts, and the training
hyperparameters, serialized byte-stably.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .catalog import DesignItem
from .consensus import ConsensusReport
from .design_space import (
    CANONICAL_SPACE,
    NUM_DIMENSIONS,
    AttributeId,
    DesignSpace,
    PromptStage,
    render_partial_prompt,
    render_prompt,
)
from .elicitation import (
    InteractionKind,
    InteractionRecord,
    Polarity,
    export_mask,
)
from .errors import AlreadyPruned, IncompleteSelection, NotPruned, UnknownNode, ValidationFailed

# Fine-tuning configuration carried verbatim to the external trainer.
LOSS_WEIGHTS = {"clip": 0.6, "local": 0.4}
STAGE1_CONFIG = {
    "lora_rank": 64,
    "learning_rate": 4e-4,
    "steps": 1500,
    "resolution": 768,
    "trigger": "real garment",
}

TRAINER_NOTES = (
    "Train one low-rank adapter per attribute. Total objective per attribute a: "
    "L_a = 0.6 * L_clip + 0.4 * L_local, where L_local sums ||F(I_j * M_j) - F(T_a)||^2 "
    "over the masked image regions I_j * M_j for each entry j, F is the denoiser's "
    "feature extractor, and T_a is the text embedding of the attribute phrase. "
    "Adapter rank 64, learning rate 4e-4, 1500 steps, batch size 1, inputs resized to "
    "768x768, trigger phrase 'real garment'. Masks are 1-bit PNGs aligned to image_ref "
    "pixels; every entry passed the like-ratio gate (> 0.5) after designer pruning."
)


# ---------------------------------------------------------------------------
# Prune-set state
# ---------------------------------------------------------------------------

GARMENT = "garment"
LEAF = "leaf"


def node_key(node_type: str, node_id: str) -> str:
    if node_type not in (GARMENT, LEAF):
        raise ValidationFailed(f"unknown node type {node_type!r}")
    return f"{node_type}:{node_id}"


@dataclass
class PruneSet:
    """Explicit, undoable exclusion state for one attribute's tree."""

    keys: set[str] = field(default_factory=set)

    def prune(self, node_type: str, node_id: str) -> None:
        key = node_key(node_type, node_id)
        if key in self.keys:
            raise AlreadyPruned(f"{key} is already pruned")
        self.keys.add(key)

    def unprune(self, node_type: str, node_id: str) -> None:
        key = node_key(node_type, node_id)
        if key not in self.keys:
            raise NotPruned(f"{key} is not pruned")
        self.keys.remove(key)

    def garment_pruned(self, item_id: str) -> bool:
        return node_key(GARMENT, item_id) in self.keys

    def leaf_pruned(self, record_id: str) -> bool:
        return node_key(LEAF, record_id) in self.keys

    def content_hash(self) -> str:
        return hashlib.sha256(json.dumps(sorted(self.keys)).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Preference tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LeafNode:
    record_id: str
    kind: InteractionKind
    polarity: Polarity
    user_id: str
    region: dict | None
    comment: str | None
    pruned: bool


@dataclass(frozen=True)
class GarmentNode:
    item_id: str
    like_ratio: float
    likes: int
    dislikes: int
    comment_count: int
    classification: str  # "Liked" | "Disliked"
    pruned: bool
    leaves: tuple[LeafNode, ...]


@dataclass(frozen=True)
class PreferenceTree:
    root: AttributeId
    garment_nodes: tuple[GarmentNode, ...]
    log_offset: int
    prune_set_hash: str


def build_tree(
    root: AttributeId,
    items: Sequence[DesignItem],
    records: Sequence[InteractionRecord],
    prune_set: PruneSet,
    log_offset: int = 0,
    space: DesignSpace = CANONICAL_SPACE,
) -> PreferenceTree:
    """Assemble the attribute's tree from a consistent state snapshot.

    Like ratios count unpruned overall votes only and default to 0.5 when a
    garment has none (which classifies it Disliked: unreviewed garments never
    reach fine-tuning). Liked nodes sort above Disliked; within a class,
    descending ratio then ascending item id.
    """
    space.validate_attribute(root)
    by_item: dict[str, list[InteractionRecord]] = {}
    for rec in records:
        by_item.setdefault(rec.item_id, []).append(rec)
    nodes = []
    for item in items:
        if item.deleted or not item.design_vector.includes(root):
            continue
        g_pruned = prune_set.garment_pruned(item.item_id)
        leaves = []
        likes = dislikes = comments = 0
        for rec in by_item.get(item.item_id, ()):
            if rec.kind is InteractionKind.BRUSH:
                if root.dimension_index not in rec.confirmed_dimensions:
                    continue
            pruned = g_pruned or prune_set.leaf_pruned(rec.record_id)
            leaves.append(
                LeafNode(
                    record_id=rec.record_id,
                    kind=rec.kind,
                    polarity=rec.polarity,
                    user_id=rec.user_id,
                    region=rec.region.as_dict() if rec.region else None,
                    comment=rec.comment,
                    pruned=pruned,
                )
            )
            if rec.kind is InteractionKind.OVERALL_VOTE and not pruned:
                if rec.polarity is Polarity.LIKE:
                    likes += 1
                else:
                    dislikes += 1
                if rec.comment:
                    comments += 1
        ratio = likes / (likes + dislikes) if likes + dislikes else 0.5
        nodes.append(
            GarmentNode(
                item_id=item.item_id,
                like_ratio=ratio,
                likes=likes,
                dislikes=dislikes,
                comment_count=comments,
                classification="Liked" if ratio > 0.5 else "Disliked",
                pruned=g_pruned,
                leaves=tuple(leaves),
            )
        )
    nodes.sort(key=lambda n: (n.classification != "Liked", -n.like_ratio, n.item_id))
    return PreferenceTree(
        root=root,
        garment_nodes=tuple(nodes),
        log_offset=log_offset,
        prune_set_hash=prune_set.content_hash(),
    )


def validate_prune_target(tree: PreferenceTree, node_type: str, node_id: str) -> None:
    if node_type == GARMENT:
        if not any(n.item_id == node_id for n in tree.garment_nodes):
            raise UnknownNode(f"no garment node {node_id!r} in this tree")
    elif node_type == LEAF:
        if not any(l.record_id == node_id for n in tree.garment_nodes for l in n.leaves):
            raise UnknownNode(f"no leaf node {node_id!r} in this tree")
    else:
        raise UnknownNode(f"unknown node type {node_type!r}")


def tree_to_json_dict(tree: PreferenceTree, space: DesignSpace = CANONICAL_SPACE) -> dict:
    return {
        "root": {
            "dimension": space.dimension_name(tree.root.dimension_index),
            "attribute": space.attribute_name(tree.root),
            "dimension_index": tree.root.dimension_index,
            "attribute_index": tree.root.attribute_index,
        },
        "log_offset": tree.log_offset,
        "prune_set_hash": tree.prune_set_hash,
        "garments": [
            {
                "item_id": n.item_id,
                "like_ratio": n.like_ratio,
                "likes": n.likes,
                "dislikes": n.dislikes,
                "comment_count": n.comment_count,
                "classification": n.classification,
                "pruned": n.pruned,
                "leaves": [
                    {
                        "record_id": l.record_id,
                        "kind": l.kind.value,
                        "polarity": l.polarity.value,
                        "user_id": l.user_id,
                        "region": l.region,
                        "comment": l.comment,
                        "pruned": l.pruned,
                    }
                    for l in n.leaves
                ],
            }
            for n in tree.garment_nodes
        ],
    }


# ---------------------------------------------------------------------------
# Fine-tune manifest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    image_ref: str
    mask_ref: str
    prompt: str
    record_ids: tuple[str, ...]
    item_id: str
    comment: str | None


@dataclass(frozen=True)
class FineTuneManifest:
    attribute: AttributeId
    entries: tuple[ManifestEntry, ...]
    log_offset: int
    prune_set_hash: str

    @property
    def empty(self) -> bool:
        return not self.entries

    def to_json_dict(self, space: DesignSpace = CANONICAL_SPACE) -> dict:
        return {
            "attribute": {
                "dimension": space.dimension_name(self.attribute.dimension_index),
                "attribute": space.attribute_name(self.attribute),
                "dimension_index": self.attribute.dimension_index,
                "attribute_index": self.attribute.attribute_index,
            },
            "entries": [
                {
                    "image_ref": e.image_ref,
                    "mask_ref": e.mask_ref,
                    "prompt": e.prompt,
                    "record_ids": list(e.record_ids),
                    "item_id": e.item_id,
                    "comment": e.comment,
                }
                for e in self.entries
            ],
            "loss_weights": LOSS_WEIGHTS,
            "stage1_config": STAGE1_CONFIG,
            "provenance": {
                "log_offset": self.log_offset,
                "prune_set_hash": self.prune_set_hash,
            },
            "trainer_notes": TRAINER_NOTES,
        }

    def to_json_bytes(self, space: DesignSpace = CANONICAL_SPACE) -> bytes:
        return (json.dumps(self.to_json_dict(space), indent=2, sort_keys=True) + "\n").encode()


def export_manifest(
    tree: PreferenceTree,
    items_by_id: Mapping[str, DesignItem],
    records_by_id: Mapping[str, InteractionRecord],
    space: DesignSpace = CANONICAL_SPACE,
) -> FineTuneManifest:
    """Collect fine-tuning entries from the pruned tree.

    Only unpruned garments whose like ratio is strictly above 0.5 qualify;
    within them, one entry per unpruned Like brush confirming the root's
    dimension. A result with no entries is a valid (empty) manifest.
    """
    root = tree.root
    dim_name = space.dimension_name(root.dimension_index)
    attr_name = space.attribute_name(root)
    entries = []
    for node in tree.garment_nodes:
        if node.pruned or node.like_ratio <= 0.5:
            continue
        item = items_by_id[node.item_id]
        prompt = render_prompt(
            item.design_vector, PromptStage.INFORMED, {dim_name: attr_name}, space
        )
        for leaf in node.leaves:
            if leaf.pruned or leaf.kind is not InteractionKind.BRUSH:
                continue
            if leaf.polarity is not Polarity.LIKE:
                continue
            entries.append(
                ManifestEntry(
                    image_ref=item.image_ref,
                    mask_ref=f"masks/{leaf.record_id}.png",
                    prompt=prompt,
                    record_ids=(leaf.record_id,),
                    item_id=item.item_id,
                    comment=leaf.comment,
                )
            )
    entries.sort(key=lambda e: e.record_ids[0])
    return FineTuneManifest(
        attribute=root,
        entries=tuple(entries),
        log_offset=tree.log_offset,
        prune_set_hash=tree.prune_set_hash,
    )


def write_manifest(
    manifest: FineTuneManifest,
    records_by_id: Mapping[str, InteractionRecord],
    out_dir: Path,
    space: DesignSpace = CANONICAL_SPACE,
) -> Path:
    """Write manifest.json plus the masks/ directory; returns the json path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    masks_dir = out_dir / "masks"
    for entry in manifest.entries:
        rec = records_by_id[entry.record_ids[0]]
        export_mask(rec.region, entry.item_id, rec.record_id, masks_dir)
    path = out_dir / "manifest.json"
    path.write_bytes(manifest.to_json_bytes(space))
    return path


# ---------------------------------------------------------------------------
# Puzzle palette
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PuzzleSelection:
    """Partial design vector assembled on the palette."""

    selection: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        dims = [d for d, _ in self.selection]
        if len(set(dims)) != len(dims):
            raise ValidationFailed("at most one attribute per dimension")
        for d, a in self.selection:
            CANONICAL_SPACE.validate_attribute(AttributeId(d, a))

    def as_mapping(self) -> dict[int, int]:
        return dict(self.selection)

    @property
    def complete(self) -> bool:
        return len(self.selection) == NUM_DIMENSIONS

    def prompt(self, space: DesignSpace = CANONICAL_SPACE) -> str:
        """Current template text; unpicked slots remain bracketed."""
        return render_partial_prompt(self.as_mapping(), space)

    def require_complete(self) -> "PuzzleSelection":
        if not self.complete:
            missing = sorted(set(range(NUM_DIMENSIONS)) - {d for d, _ in self.selection})
            names = [CANONICAL_SPACE.dimension_name(d) for d in missing]
            raise IncompleteSelection(f"selection missing dimensions: {', '.join(names)}")
        return self


def palette_columns(
    report: ConsensusReport, space: DesignSpace = CANONICAL_SPACE
) -> list[dict]:
    """Per-dimension columns ordered by descending normalized consensus."""
    columns = []
    for d in range(NUM_DIMENSIONS):
        cells = [
            {
                "attribute_index": a,
                "name": space.dimensions[d].attributes[a],
                "acs_norm": report.acs_norm[(d, a)],
                "acs_raw": report.acs_raw[(d, a)],
            }
            for a in range(space.attribute_count(d))
        ]
        cells.sort(key=lambda c: (-c["acs_norm"], c["attribute_index"]))
        columns.append({"dimension": space.dimension_name(d), "cells": cells})
    return columns
