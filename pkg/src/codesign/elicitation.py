"""User-side elicitation: brush regions, masks, dimension hypotheses, try-on.

Brush gestures arrive as bounding rectangles in pixel coordinates. Masks use
the half-open convention ``[x_min, x_max) x [y_min, y_max)`` so popcount
equals the exact rectangle area. Dimension hypotheses come from a pluggable
region backend; the default scores each design dimension by weighted IoU
against the per-part layout zones shipped with the design space schema.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np
from PIL import Image

from .design_space import CANONICAL_SPACE, NUM_DIMENSIONS, DesignSpace
from .errors import InvalidRegion, ValidationFailed


class Gender(Enum):
    M = "M"
    F = "F"
    UNSPECIFIED = "Unspecified"


@dataclass(frozen=True)
class UserProfile:
    user_id: str
    gender: Gender = Gender.UNSPECIFIED
    height_cm: float = 170.0
    weight_kg: float = 65.0

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValidationFailed("user_id must be nonempty")
        if not 120.0 <= self.height_cm <= 220.0:
            raise ValidationFailed(f"height_cm out of [120,220]: {self.height_cm}")
        if not 30.0 <= self.weight_kg <= 200.0:
            raise ValidationFailed(f"weight_kg out of [30,200]: {self.weight_kg}")

    def resolved(self, seed: int) -> "UserProfile":
        """Replace an unspecified gender with a seeded random profile."""
        if self.gender is not Gender.UNSPECIFIED:
            return self
        rng = np.random.default_rng(seed)
        gender = Gender.M if rng.integers(2) == 0 else Gender.F
        height = float(np.round(rng.uniform(150, 195), 1))
        weight = float(np.round(rng.uniform(45, 100), 1))
        return UserProfile(self.user_id, gender, height, weight)


@dataclass(frozen=True)
class BrushRegion:
    """Axis-aligned pixel rectangle within an image."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int
    image_w: int
    image_h: int

    def __post_init__(self) -> None:
        ok = (
            0 <= self.x_min < self.x_max <= self.image_w
            and 0 <= self.y_min < self.y_max <= self.image_h
        )
        if not ok:
            raise InvalidRegion(
                f"invalid region ({self.x_min},{self.y_min},{self.x_max},{self.y_max}) "
                f"for {self.image_w}x{self.image_h} image"
            )

    @property
    def area(self) -> int:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_dict(self) -> dict:
        return {
            "x_min": self.x_min,
            "y_min": self.y_min,
            "x_max": self.x_max,
            "y_max": self.y_max,
            "image_w": self.image_w,
            "image_h": self.image_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BrushRegion":
        return cls(
            int(d["x_min"]), int(d["y_min"]), int(d["x_max"]), int(d["y_max"]),
            int(d["image_w"]), int(d["image_h"]),
        )


class Polarity(Enum):
    LIKE = "Like"
    DISLIKE = "Dislike"


class InteractionKind(Enum):
    BRUSH = "Brush"
    OVERALL_VOTE = "OverallVote"


@dataclass(frozen=True)
class InteractionRecord:
    """One brush stroke or overall vote."""

    record_id: str
    user_id: str
    item_id: str
    kind: InteractionKind
    polarity: Polarity
    round_index: int
    region: Optional[BrushRegion] = None
    confirmed_dimensions: tuple[int, ...] = ()
    hypothesis: tuple[tuple[int, float], ...] = ()
    comment: Optional[str] = None

    def __post_init__(self) -> None:
        if self.round_index < 0:
            raise ValidationFailed("round_index must be >= 0")
        if self.kind is InteractionKind.BRUSH:
            if self.region is None:
                raise ValidationFailed("brush records require a region")
            for d in self.confirmed_dimensions:
                if not 0 <= d < NUM_DIMENSIONS:
                    raise ValidationFailed(f"confirmed dimension out of range: {d}")
        else:
            if self.region is not None or self.confirmed_dimensions:
                raise ValidationFailed("overall votes carry no region or dimensions")
        confs = [c for _, c in self.hypothesis]
        if any(not 0.0 <= c <= 1.0 for c in confs):
            raise ValidationFailed("hypothesis confidences must lie in [0,1]")
        if confs != sorted(confs, reverse=True):
            raise ValidationFailed("hypothesis must be sorted by descending confidence")

    def as_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "user_id": self.user_id,
            "item_id": self.item_id,
            "kind": self.kind.value,
            "polarity": self.polarity.value,
            "round_index": self.round_index,
            "region": self.region.as_dict() if self.region else None,
            "confirmed_dimensions": list(self.confirmed_dimensions),
            "hypothesis": [[d, c] for d, c in self.hypothesis],
            "comment": self.comment,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionRecord":
        return cls(
            record_id=d["record_id"],
            user_id=d["user_id"],
            item_id=d["item_id"],
            kind=InteractionKind(d["kind"]),
            polarity=Polarity(d["polarity"]),
            round_index=int(d["round_index"]),
            region=BrushRegion.from_dict(d["region"]) if d.get("region") else None,
            confirmed_dimensions=tuple(int(x) for x in d.get("confirmed_dimensions", ())),
            hypothesis=tuple((int(a), float(b)) for a, b in d.get("hypothesis", ())),
            comment=d.get("comment"),
        )


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


def rasterize_mask(region: BrushRegion) -> np.ndarray:
    """Binary mask of shape (image_h, image_w); 1 inside the half-open box."""
    mask = np.zeros((region.image_h, region.image_w), dtype=np.uint8)
    mask[region.y_min : region.y_max, region.x_min : region.x_max] = 1
    return mask


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    """Encode a binary mask as a 1-bit PNG, byte-stable across runs."""
    img = Image.fromarray((mask * 255).astype(np.uint8)).convert("1")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def export_mask(
    region: BrushRegion, item_id: str, record_id: str, directory: Path
) -> tuple[Path, Path]:
    """Write the mask PNG plus its sidecar JSON; returns both paths."""
    directory.mkdir(parents=True, exist_ok=True)
    png_path = directory / f"{record_id}.png"
    sidecar_path = directory / f"{record_id}.json"
    png_path.write_bytes(mask_to_png_bytes(rasterize_mask(region)))
    sidecar = {
        "item_id": item_id,
        "record_id": record_id,
        "region": region.as_dict(),
        "image_dims": [region.image_w, region.image_h],
    }
    sidecar_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return png_path, sidecar_path


# ---------------------------------------------------------------------------
# Dimension hypotheses
# ---------------------------------------------------------------------------


class RegionBackend(Protocol):
    """Client interface mapping a brushed region to dimension confidences."""

    def hypothesize(self, region: BrushRegion) -> list[tuple[int, float]]: ...


def _rect_iou(a: tuple[float, float, float, float], b: tuple[float, float, float, float]) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


class ZoneOverlapRegionBackend:
    """Heuristic default: weighted IoU against the schema's layout zones."""

    def __init__(self, space: DesignSpace = CANONICAL_SPACE) -> None:
        self.space = space

    def hypothesize(self, region: BrushRegion) -> list[tuple[int, float]]:
        frac = (
            region.x_min / region.image_w,
            region.y_min / region.image_h,
            region.x_max / region.image_w,
            region.y_max / region.image_h,
        )
        scored = []
        for d in range(NUM_DIMENSIONS):
            zone = self.space.part_layout[self.space.dimension_name(d)]
            iou = max(_rect_iou(frac, r) for r in zone.rects)
            scored.append((d, zone.weight * iou))
        scored.sort(key=lambda t: (-t[1], t[0]))
        return scored


def hypothesize_dimensions(
    region: BrushRegion, backend: RegionBackend | None = None
) -> list[tuple[int, float]]:
    """Full ranking of all 9 dimensions by confidence for a brushed region."""
    backend = backend or ZoneOverlapRegionBackend()
    ranking = backend.hypothesize(region)
    if len(ranking) != NUM_DIMENSIONS:
        raise ValidationFailed("region backend must rank all dimensions")
    return ranking
