"""Backend-client seams and their deterministic mock implementations.

Every generative-ML step (garment image generation, virtual try-on, visual
embedding, brushed-region analysis, LLM attribute filtering) sits behind a
small client interface. The mock suite is fully deterministic under a
project seed: images are single-color placeholder PNGs derived from content
hashes, embeddings are seeded pseudo-random vectors, and the try-on
composite is drawn procedurally. External implementations can be swapped in
behind the same interfaces without touching the engine.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from PIL import Image, ImageDraw

from .design_space import (
    DesignVector,
    FilterResult,
    FramingBackend,
    LLMFramingBackend,
    RuleBasedFramingBackend,
    filter_attributes,
)
from .elicitation import BrushRegion, RegionBackend, UserProfile, ZoneOverlapRegionBackend
from .errors import BackendUnavailable

MOCK_IMAGE_W = 256
MOCK_IMAGE_H = 256


class BlobStore:
    """Content-addressed blob files: ``blobs/<sha256>.png``."""

    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def put(self, data: bytes, suffix: str = ".png") -> str:
        digest = hashlib.sha256(data).hexdigest()
        ref = f"{digest}{suffix}"
        path = self.root / ref
        if not path.exists():
            path.write_bytes(data)
        return ref

    def get(self, ref: str) -> bytes:
        return (self.root / ref).read_bytes()

    def path(self, ref: str) -> Path:
        return self.root / ref

    def exists(self, ref: str) -> bool:
        return (self.root / ref).exists()


def _hash_to_rgb(key: str) -> tuple[int, int, int]:
    h = hashlib.sha256(key.encode()).digest()
    return (h[0], h[1], h[2])


def _solid_png(color: tuple[int, int, int], w: int = MOCK_IMAGE_W, h: int = MOCK_IMAGE_H) -> bytes:
    img = Image.new("RGB", (w, h), color)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


class GenerationBackend(Protocol):
    """Garment / scene image generator.

    ``variant`` distinguishes multiple samples for one prompt, mirroring the
    different diffusion noise seeds an external generator would use.
    """

    def generate_garment(self, vector: DesignVector, prompt: str, variant: int = 0) -> bytes: ...

    def generate_scene(self, prompt: str) -> bytes: ...


class EmbeddingBackend(Protocol):
    """Visual feature extractor, 50 entries per image."""

    def embed(self, vector: DesignVector, image_ref: str) -> np.ndarray: ...


class TryOnBackend(Protocol):
    def compose(self, profile: UserProfile, garment_png: bytes, scene_png: bytes | None) -> bytes: ...


class MockGenerationBackend:
    """Placeholder renderer: one solid color per (seed, prompt) pair."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def generate_garment(self, vector: DesignVector, prompt: str, variant: int = 0) -> bytes:
        key = (
            f"garment:{self.seed}:{','.join(map(str, vector.attribute_indices))}"
            f":{variant}:{prompt}"
        )
        return _solid_png(_hash_to_rgb(key))

    def generate_scene(self, prompt: str) -> bytes:
        return _solid_png(_hash_to_rgb(f"scene:{self.seed}:{prompt}"))


class MockEmbeddingBackend:
    """Seeded pseudo-random 50-vector per (design vector, image ref)."""

    def __init__(self, seed: int = 0) -> None:
        self.seed = seed

    def embed(self, vector: DesignVector, image_ref: str) -> np.ndarray:
        key = f"embed:{self.seed}:{','.join(map(str, vector.attribute_indices))}:{image_ref}"
        digest = hashlib.sha256(key.encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.uniform(-1.0, 1.0, size=50)


class MockTryOnBackend:
    """Draws the garment color onto a stylized silhouette over the scene."""

    def compose(self, profile: UserProfile, garment_png: bytes, scene_png: bytes | None) -> bytes:
        garment = Image.open(io.BytesIO(garment_png)).convert("RGB")
        garment_color = garment.getpixel((garment.width // 2, garment.height // 2))
        if scene_png is not None:
            canvas = Image.open(io.BytesIO(scene_png)).convert("RGB").resize(
                (MOCK_IMAGE_W, MOCK_IMAGE_H)
            )
        else:
            canvas = Image.new("RGB", (MOCK_IMAGE_W, MOCK_IMAGE_H), (235, 235, 235))
        draw = ImageDraw.Draw(canvas)
        # Body proportions scale crudely with the profile so distinct profiles
        # produce distinct composites.
        torso_h = int(90 + (profile.height_cm - 120) * 0.4)
        torso_w = int(50 + (profile.weight_kg - 30) * 0.3)
        cx = MOCK_IMAGE_W // 2
        head_r = 18
        draw.ellipse([cx - head_r, 20, cx + head_r, 20 + 2 * head_r], fill=(205, 180, 160))
        top = 20 + 2 * head_r + 4
        draw.rectangle([cx - torso_w // 2, top, cx + torso_w // 2, top + torso_h],
                       fill=garment_color)
        buf = io.BytesIO()
        canvas.save(buf, format="PNG")
        return buf.getvalue()


@dataclass
class BackendSuite:
    """The five client seams plus the mode flag."""

    generation: GenerationBackend
    embedding: EmbeddingBackend
    tryon: TryOnBackend
    region: RegionBackend
    framing: FramingBackend | None
    mode: str = "Mock"

    @classmethod
    def mock(cls, seed: int = 0) -> "BackendSuite":
        return cls(
            generation=MockGenerationBackend(seed),
            embedding=MockEmbeddingBackend(seed),
            tryon=MockTryOnBackend(),
            region=ZoneOverlapRegionBackend(),
            framing=None,  # rule engine answers directly
            mode="Mock",
        )
