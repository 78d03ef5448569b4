"""Canonical garment design space: schema, encodings, filtering, prompts.

The design space is a fixed 9-dimension / 51-attribute schema loaded from
``data/design_space.json``. A garment concept is one attribute per dimension
(:class:`DesignVector`), encodable as a 51-bit one-hot vector whose block
offsets are derived from the per-dimension attribute counts.

Attribute filtering for the framing stage runs through a pluggable backend;
the default is a deterministic keyword-rule engine over
``data/filter_rules.json``. An LLM-backed client is provided as an optional
alternative that renders the filtering prompt template verbatim.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from .errors import BackendUnavailable, MissingDetail, ValidationFailed

NUM_DIMENSIONS = 9
NUM_ATTRIBUTES = 51


# ---------------------------------------------------------------------------
# Schema types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dimension:
    name: str
    attributes: tuple[str, ...]


@dataclass(frozen=True)
class AttributeId:
    """Address of one attribute: (dimension index, attribute index)."""

    dimension_index: int
    attribute_index: int

    def __post_init__(self) -> None:
        if not 0 <= self.dimension_index < NUM_DIMENSIONS:
            raise ValidationFailed(f"dimension_index out of range: {self.dimension_index}")

    def as_tuple(self) -> tuple[int, int]:
        return (self.dimension_index, self.attribute_index)


class DesignSpace:
    """The 9-dimension attribute schema. Immutable after construction."""

    def __init__(
        self,
        dimensions: Sequence[Dimension],
        tags: Mapping[tuple[int, int], tuple[str, ...]] | None = None,
        part_layout: Mapping[str, "ZoneSpec"] | None = None,
        schema_version: int = 1,
    ) -> None:
        if len(dimensions) != NUM_DIMENSIONS:
            raise ValidationFailed(f"expected {NUM_DIMENSIONS} dimensions, got {len(dimensions)}")
        total = sum(len(d.attributes) for d in dimensions)
        if total != NUM_ATTRIBUTES:
            raise ValidationFailed(f"expected {NUM_ATTRIBUTES} attributes, got {total}")
        lowered = [d.name.lower() for d in dimensions]
        if len(set(lowered)) != len(lowered):
            raise ValidationFailed("dimension names must be unique (case-insensitive)")
        for d in dimensions:
            attrs = [a.lower() for a in d.attributes]
            if len(set(attrs)) != len(attrs):
                raise ValidationFailed(f"attribute names within {d.name!r} must be unique")
        self.dimensions: tuple[Dimension, ...] = tuple(dimensions)
        self.schema_version = schema_version
        self.tags = dict(tags or {})
        self.part_layout = dict(part_layout or {})
        offsets = []
        off = 0
        for d in self.dimensions:
            offsets.append(off)
            off += len(d.attributes)
        self.block_offsets: tuple[int, ...] = tuple(offsets)
        self._dim_index = {d.name.lower(): i for i, d in enumerate(self.dimensions)}
        self._attr_index = {
            (i, a.lower()): j
            for i, d in enumerate(self.dimensions)
            for j, a in enumerate(d.attributes)
        }

    # -- lookups ------------------------------------------------------------

    def dimension_index(self, name: str) -> int:
        try:
            return self._dim_index[name.lower()]
        except KeyError:
            raise ValidationFailed(f"unknown dimension: {name!r}") from None

    def attribute_id(self, dimension: str, attribute: str) -> AttributeId:
        d = self.dimension_index(dimension)
        try:
            a = self._attr_index[(d, attribute.lower())]
        except KeyError:
            raise ValidationFailed(f"unknown attribute {attribute!r} in {dimension!r}") from None
        return AttributeId(d, a)

    def attribute_name(self, attr: AttributeId) -> str:
        return self.dimensions[attr.dimension_index].attributes[attr.attribute_index]

    def dimension_name(self, dimension_index: int) -> str:
        return self.dimensions[dimension_index].name

    def attribute_count(self, dimension_index: int) -> int:
        return len(self.dimensions[dimension_index].attributes)

    def all_attribute_ids(self) -> list[AttributeId]:
        return [
            AttributeId(d, a)
            for d in range(NUM_DIMENSIONS)
            for a in range(len(self.dimensions[d].attributes))
        ]

    def flat_index(self, attr: AttributeId) -> int:
        """Position of the attribute in the 51-bit one-hot layout."""
        return self.block_offsets[attr.dimension_index] + attr.attribute_index

    def validate_attribute(self, attr: AttributeId) -> None:
        if not 0 <= attr.attribute_index < self.attribute_count(attr.dimension_index):
            raise ValidationFailed(
                f"attribute_index {attr.attribute_index} out of range for "
                f"{self.dimension_name(attr.dimension_index)!r}"
            )


@dataclass(frozen=True)
class ZoneSpec:
    """Image zones for one dimension: fractional rects plus a weight."""

    weight: float
    rects: tuple[tuple[float, float, float, float], ...]


def _load_space() -> DesignSpace:
    raw = json.loads(resources.files("codesign.data").joinpath("design_space.json").read_text())
    dims = []
    tags: dict[tuple[int, int], tuple[str, ...]] = {}
    for i, d in enumerate(raw["dimensions"]):
        names = tuple(a["name"] for a in d["attributes"])
        dims.append(Dimension(name=d["name"], attributes=names))
        for j, a in enumerate(d["attributes"]):
            tags[(i, j)] = tuple(a.get("tags", ()))
    layout = {
        name: ZoneSpec(weight=z["weight"], rects=tuple(tuple(r) for r in z["rects"]))
        for name, z in raw["part_layout"]["zones"].items()
    }
    return DesignSpace(dims, tags=tags, part_layout=layout, schema_version=raw["schema_version"])


CANONICAL_SPACE = _load_space()


# ---------------------------------------------------------------------------
# Design vectors and one-hot encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DesignVector:
    """One chosen attribute per dimension; a complete garment concept."""

    attribute_indices: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.attribute_indices) != NUM_DIMENSIONS:
            raise ValidationFailed(
                f"design vector needs {NUM_DIMENSIONS} entries, got {len(self.attribute_indices)}"
            )
        for d, a in enumerate(self.attribute_indices):
            CANONICAL_SPACE.validate_attribute(AttributeId(d, a))

    @classmethod
    def from_names(cls, names: Sequence[str], space: DesignSpace = CANONICAL_SPACE) -> "DesignVector":
        if len(names) != NUM_DIMENSIONS:
            raise ValidationFailed(f"expected {NUM_DIMENSIONS} attribute names")
        idx = tuple(
            space.attribute_id(space.dimension_name(d), name).attribute_index
            for d, name in enumerate(names)
        )
        return cls(idx)

    def attribute_ids(self) -> tuple[AttributeId, ...]:
        return tuple(AttributeId(d, a) for d, a in enumerate(self.attribute_indices))

    def names(self, space: DesignSpace = CANONICAL_SPACE) -> tuple[str, ...]:
        return tuple(space.attribute_name(a) for a in self.attribute_ids())

    def includes(self, attr: AttributeId) -> bool:
        return self.attribute_indices[attr.dimension_index] == attr.attribute_index


def encode_one_hot(v: DesignVector, space: DesignSpace = CANONICAL_SPACE) -> np.ndarray:
    """51-entry one-hot encoding: one set bit per dimension block."""
    bits = np.zeros(NUM_ATTRIBUTES, dtype=np.uint8)
    for d, a in enumerate(v.attribute_indices):
        bits[space.block_offsets[d] + a] = 1
    return bits


def decode_one_hot(bits: np.ndarray, space: DesignSpace = CANONICAL_SPACE) -> DesignVector:
    """Inverse of :func:`encode_one_hot`; rejects malformed encodings."""
    arr = np.asarray(bits)
    if arr.shape != (NUM_ATTRIBUTES,):
        raise ValidationFailed(f"one-hot must have length {NUM_ATTRIBUTES}")
    idx = []
    for d in range(NUM_DIMENSIONS):
        start = space.block_offsets[d]
        stop = start + space.attribute_count(d)
        block = arr[start:stop]
        ones = np.flatnonzero(block == 1)
        if len(ones) != 1 or block.sum() != 1:
            raise ValidationFailed(f"dimension block {d} is not one-hot")
        idx.append(int(ones[0]))
    return DesignVector(tuple(idx))


# ---------------------------------------------------------------------------
# Prompt templates
# ---------------------------------------------------------------------------


class PromptStage(Enum):
    FRAMING = "framing"
    INFORMED = "informed"


GARMENT_PROMPT_PREFIX = (
    "An image of a clear master piece of real garment without a model, with a white "
    "background. There shouldn't a person or more than one garment in the image."
)

_GARMENT_PROMPT_BODY = (
    "{prefix}\n\n"
    "The garment is a [Type] featuring [Sleeve Length] sleeves and a [Collar Shape] collar.\n\n"
    "It is worn in a [Wearing Style] style and has a [Pattern Style] pattern in a "
    "[Pattern Arrangement] arrangement.\n\n"
    "The garment comes in a [Color Category] color scheme, with specific colors including "
    "[Specific Colors]. The material is [Material]."
)

DETAIL_SENTENCE = "For {dimension} part, with detailed descriptions of {detail}."

FILTERING_PROMPT_TEMPLATE = (
    "You are an expert at designing garments and matching different scenes. Based on the "
    "following task description, refine and execute the filtering process with "
    "scene-appropriate reasoning.\n\n"
    "Task:\n"
    "I have a list of words describing [dimension] of a garment. I want to know which of "
    "these words are suitable to wear in a specific scene with detailed descriptions. "
    "Please help me keep [number] words remained, which are suitable for a [scene] scene, "
    "a [type] type, and a [principle] principle.\n\n"
    "Instructions:\n"
    "- Evaluate each word in the given list according to the specified scene, type, and "
    "design principle.\n"
    "- Select and retain only the most relevant options based on contextual fit.\n"
    "- Provide detailed justification for each retained word.\n"
    "- Maintain a descriptive, professional tone with a clear focus on fashion "
    "suitability and practicality."
)

SCENE_PROMPT_TEMPLATE = (
    "You are an expert at polishing text prompts. Based on the following task "
    "description, refine and enhance the text to make it suitable for high-quality "
    "background generation.\n\n"
    "Task:\n"
    "I want to generate a high quality background for virtual try-on. The background "
    "should be suitable for {scene} scene. Please help me polish my text prompt to make "
    "it suitable for background generation.\n\n"
    "Instructions:\n"
    "- Preserve the intent of the original task while enhancing clarity, vividness, and "
    "visual richness.\n"
    "- Make the scene description evocative and suitable for AI-based background "
    "generation tools.\n"
    "- Keep the language natural, descriptive, and concise."
)

_AVATAR_TEMPLATE = (
    "{article}, {subj} is {height} in height (cm) and {weight} in weight (kg). "
    "{subj_cap} is standing gracefully in the center of the frame. {poss_cap} upper body "
    "is fully visible, wearing a short sleeve t-shirt with elegant details.\n\n"
    "{subj_cap} has a gentle smile on {poss} face. The focus is on {poss} upper body, "
    "with only a slight glimpse of {poss} trousers visible at the bottom of the frame.\n\n"
    "Photographic Details:\n"
    "The image is taken with a Canon EOS camera, using a SIGMA Art Lens 35mm F1.4, set "
    "at ISO 200 and a shutter speed of 1/2000. The image captures every detail in "
    "stunning clarity and realism, with a high-quality, cinematic feel.\n\n"
    "The image is taken from the front side. {poss_cap} body should face towards the "
    "front. It remains unobstructed in front of the body."
)


def _fmt_number(x: float) -> str:
    return f"{x:g}"


def render_avatar_prompt(gender: str, height_cm: float, weight_kg: float) -> str:
    """Mannequin-portrait prompt with anthropometrics substituted.

    ``gender`` must already be resolved to "M" or "F".
    """
    if gender == "M":
        words = {"article": "A man", "subj": "he", "subj_cap": "He", "poss": "his", "poss_cap": "His"}
    elif gender == "F":
        words = {"article": "A woman", "subj": "she", "subj_cap": "She", "poss": "her", "poss_cap": "Her"}
    else:
        raise ValidationFailed(f"gender must be resolved to M or F, got {gender!r}")
    return _AVATAR_TEMPLATE.format(
        height=_fmt_number(height_cm), weight=_fmt_number(weight_kg), **words
    )


def render_scene_prompt(scene: str) -> str:
    return SCENE_PROMPT_TEMPLATE.format(scene=scene)


def render_filtering_prompt(
    dimension: str, keep_count: int, scene: str, garment_type: str, principle: str
) -> str:
    out = FILTERING_PROMPT_TEMPLATE
    for slot, value in [
        ("[dimension]", dimension),
        ("[number]", str(keep_count)),
        ("[scene]", scene),
        ("[type]", garment_type),
        ("[principle]", principle),
    ]:
        out = out.replace(slot, value)
    return out


def render_prompt(
    v: DesignVector,
    stage: PromptStage,
    detail: Mapping[str, str] | None = None,
    space: DesignSpace = CANONICAL_SPACE,
) -> str:
    """Garment-generation prompt with all nine placeholders substituted.

    The informed stage appends one detail sentence per entry, in canonical
    dimension order. Output is byte-stable for identical input.
    """
    names = v.names(space)
    out = _GARMENT_PROMPT_BODY.format(prefix=GARMENT_PROMPT_PREFIX)
    for d, name in enumerate(names):
        out = out.replace(f"[{space.dimension_name(d)}]", name)
    if stage is PromptStage.FRAMING:
        if detail:
            raise ValidationFailed("detail clauses are only rendered at the informed stage")
        return out
    if not detail:
        raise MissingDetail("informed stage requires at least one detail entry")
    by_index = sorted(detail.items(), key=lambda kv: space.dimension_index(kv[0]))
    for dim_name, text in by_index:
        canonical = space.dimension_name(space.dimension_index(dim_name))
        out += "\n\n" + DETAIL_SENTENCE.format(dimension=canonical, detail=text)
    return out


def render_partial_prompt(
    selection: Mapping[int, int], space: DesignSpace = CANONICAL_SPACE
) -> str:
    """Template render for a partial selection; unfilled slots stay bracketed."""
    out = _GARMENT_PROMPT_BODY.format(prefix=GARMENT_PROMPT_PREFIX)
    for d, a in selection.items():
        space.validate_attribute(AttributeId(d, a))
        out = out.replace(
            f"[{space.dimension_name(d)}]", space.dimensions[d].attributes[a]
        )
    return out


# ---------------------------------------------------------------------------
# Attribute filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilterResult:
    """Partition of the 51 attributes into included and excluded sets."""

    included: frozenset[AttributeId]
    excluded: frozenset[AttributeId]
    strictness: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.strictness <= 1.0:
            raise ValidationFailed(f"strictness must be in [0,1], got {self.strictness}")
        if self.included & self.excluded:
            raise ValidationFailed("included and excluded overlap")
        universe = set(CANONICAL_SPACE.all_attribute_ids())
        if set(self.included) | set(self.excluded) != universe:
            raise ValidationFailed("included and excluded must cover all attributes")
        for d in range(NUM_DIMENSIONS):
            if not any(a.dimension_index == d for a in self.included):
                raise ValidationFailed(f"dimension {d} has no included attribute")

    @classmethod
    def allow_all(cls, strictness: float = 0.0) -> "FilterResult":
        return cls(
            included=frozenset(CANONICAL_SPACE.all_attribute_ids()),
            excluded=frozenset(),
            strictness=strictness,
        )

    def included_by_dimension(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(NUM_DIMENSIONS)]
        for a in self.included:
            out[a.dimension_index].append(a.attribute_index)
        for lst in out:
            lst.sort()
        return out


@dataclass(frozen=True)
class FilterRule:
    keyword: str
    attribute: AttributeId
    priority: float


def _load_rules() -> tuple[FilterRule, ...]:
    raw = json.loads(resources.files("codesign.data").joinpath("filter_rules.json").read_text())
    rules = []
    for r in raw["rules"]:
        attr = CANONICAL_SPACE.attribute_id(r["dimension"], r["attribute"])
        rules.append(FilterRule(keyword=r["keyword"].lower(), attribute=attr, priority=float(r["priority"])))
    return tuple(rules)


DEFAULT_FILTER_RULES = _load_rules()


class FramingBackend(Protocol):
    """Client interface for the attribute-filtering step."""

    def filter(
        self, garment_type: str, scene: str, principle: str, strictness: float
    ) -> FilterResult: ...


class RuleBasedFramingBackend:
    """Deterministic keyword-rule filter.

    A rule fires when its keyword occurs (word match, case-insensitive) in
    the scene/principle text and its priority is <= strictness, excluding
    its target attribute. If a dimension would lose every attribute, its
    highest-priority (weakest) exclusions are relaxed until one remains.
    The chosen garment type is never excluded.
    """

    def __init__(self, rules: Sequence[FilterRule] = DEFAULT_FILTER_RULES) -> None:
        self.rules = tuple(rules)

    def filter(
        self, garment_type: str, scene: str, principle: str, strictness: float
    ) -> FilterResult:
        space = CANONICAL_SPACE
        type_attr = space.attribute_id("Type", garment_type)
        text = f"{scene} {principle}".lower()
        words = set(re.findall(r"[a-z][a-z-]*", text))
        fired: dict[AttributeId, float] = {}
        for rule in self.rules:
            if rule.priority <= strictness and rule.keyword in words:
                if rule.attribute == type_attr:
                    continue
                prev = fired.get(rule.attribute)
                if prev is None or rule.priority < prev:
                    fired[rule.attribute] = rule.priority
        # Relax weakest exclusions per dimension so none goes empty.
        for d in range(NUM_DIMENSIONS):
            count = space.attribute_count(d)
            in_dim = [a for a in fired if a.dimension_index == d]
            while len(in_dim) >= count:
                weakest = max(in_dim, key=lambda a: (fired[a], a.attribute_index))
                del fired[weakest]
                in_dim.remove(weakest)
        excluded = frozenset(fired)
        included = frozenset(set(space.all_attribute_ids()) - excluded)
        return FilterResult(included=included, excluded=excluded, strictness=strictness)


class LLMFramingBackend:
    """Optional LLM-backed filter honoring the filtering prompt template.

    ``transport`` receives the rendered prompt per dimension and must return
    the attribute names to keep. Without a transport the backend is
    unavailable and callers fall back to the rule engine.
    """

    def __init__(self, transport: Callable[[str, list[str]], list[str]] | None = None) -> None:
        self.transport = transport

    def filter(
        self, garment_type: str, scene: str, principle: str, strictness: float
    ) -> FilterResult:
        if self.transport is None:
            raise BackendUnavailable("no LLM transport configured")
        space = CANONICAL_SPACE
        type_attr = space.attribute_id("Type", garment_type)
        included: set[AttributeId] = set()
        for d, dim in enumerate(space.dimensions):
            count = len(dim.attributes)
            # Higher strictness asks the model to keep fewer words.
            keep = max(1, round(count * (1.0 - strictness)))
            prompt = render_filtering_prompt(dim.name, keep, scene, garment_type, principle)
            kept = self.transport(prompt, list(dim.attributes))
            ids = {space.attribute_id(dim.name, k) for k in kept}
            if not ids:
                ids = {AttributeId(d, 0)}
            included |= ids
        included.add(type_attr)
        excluded = frozenset(set(space.all_attribute_ids()) - included)
        return FilterResult(included=frozenset(included), excluded=excluded, strictness=strictness)


def filter_attributes(
    garment_type: str,
    scene: str,
    principle: str,
    strictness: float,
    llm: FramingBackend | None = None,
) -> tuple[FilterResult, str]:
    """Run attribute filtering, falling back to the rule engine.

    Returns ``(result, source)`` where source is one of ``rules``, ``llm``,
    or ``llm-fallback`` (the backend was unreachable and the rule engine
    answered instead).
    """
    if not 0.0 <= strictness <= 1.0:
        raise ValidationFailed(f"strictness must be in [0,1], got {strictness}")
    CANONICAL_SPACE.attribute_id("Type", garment_type)  # validates the type
    rules = RuleBasedFramingBackend()
    if llm is None:
        return rules.filter(garment_type, scene, principle, strictness), "rules"
    try:
        return llm.filter(garment_type, scene, principle, strictness), "llm"
    except BackendUnavailable:
        return rules.filter(garment_type, scene, principle, strictness), "llm-fallback"


def apply_overrides(
    result: FilterResult,
    include: Iterable[AttributeId] = (),
    exclude: Iterable[AttributeId] = (),
) -> FilterResult:
    """Designer chip toggles on top of a backend result.

    Exclusions that would empty a dimension are rejected.
    """
    included = set(result.included)
    excluded = set(result.excluded)
    for a in include:
        excluded.discard(a)
        included.add(a)
    for a in exclude:
        remaining = [x for x in included if x.dimension_index == a.dimension_index and x != a]
        if not remaining:
            raise ValidationFailed(
                f"cannot exclude the last attribute of "
                f"{CANONICAL_SPACE.dimension_name(a.dimension_index)!r}"
            )
        included.discard(a)
        excluded.add(a)
    return FilterResult(
        included=frozenset(included), excluded=frozenset(excluded), strictness=result.strictness
    )
