"""Schema, one-hot encoding, prompt templates, and attribute filtering."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from codesign.design_space import (
    CANONICAL_SPACE,
    NUM_ATTRIBUTES,
    NUM_DIMENSIONS,
    AttributeId,
    DesignVector,
    FilterResult,
    GARMENT_PROMPT_PREFIX,
    PromptStage,
    RuleBasedFramingBackend,
    apply_overrides,
    decode_one_hot,
    encode_one_hot,
    filter_attributes,
    render_avatar_prompt,
    render_partial_prompt,
    render_prompt,
)
from codesign.errors import MissingDetail, ValidationFailed

EXPECTED_DIMENSIONS = [
    ("Type", 7),
    ("Sleeve Length", 3),
    ("Collar Shape", 7),
    ("Wearing Style", 3),
    ("Pattern Style", 7),
    ("Pattern Arrangement", 3),
    ("Material", 9),
    ("Color Category", 3),
    ("Specific Colors", 9),
]

BLOCK_OFFSETS = (0, 7, 10, 17, 20, 27, 30, 39, 42)


def random_vector(rng: np.random.Generator) -> DesignVector:
    return DesignVector(
        tuple(int(rng.integers(CANONICAL_SPACE.attribute_count(d)))
              for d in range(NUM_DIMENSIONS))
    )


class TestSchema:
    def test_dimension_names_and_counts(self):
        got = [(d.name, len(d.attributes)) for d in CANONICAL_SPACE.dimensions]
        assert got == EXPECTED_DIMENSIONS

    def test_attribute_total_is_51(self):
        assert sum(len(d.attributes) for d in CANONICAL_SPACE.dimensions) == NUM_ATTRIBUTES

    def test_block_offsets(self):
        assert CANONICAL_SPACE.block_offsets == BLOCK_OFFSETS

    def test_names_unique_case_insensitive(self):
        names = [d.name.lower() for d in CANONICAL_SPACE.dimensions]
        assert len(set(names)) == NUM_DIMENSIONS
        for d in CANONICAL_SPACE.dimensions:
            lowered = [a.lower() for a in d.attributes]
            assert len(set(lowered)) == len(lowered)

    def test_lookup_is_case_insensitive(self):
        a = CANONICAL_SPACE.attribute_id("collar shape", "v")
        assert a == AttributeId(2, 2)
        assert CANONICAL_SPACE.attribute_name(a) == "V"


class TestOneHot:
    def test_length_is_51(self):
        v = random_vector(np.random.default_rng(0))
        assert encode_one_hot(v).shape == (NUM_ATTRIBUTES,)

    def test_first_attribute_everywhere_hits_block_starts(self):
        v = DesignVector((0,) * NUM_DIMENSIONS)
        assert set(np.flatnonzero(encode_one_hot(v))) == set(BLOCK_OFFSETS)

    def test_golden_selection_indices(self):
        # Hand-computed from the canonical table: prefix counts + positions.
        v = DesignVector.from_names(
            ["T-shirt", "Short", "Round", "Pullover", "Pure", "Focus",
             "Cotton", "Monochromatic", "Black"]
        )
        assert list(np.flatnonzero(encode_one_hot(v))) == [4, 8, 13, 18, 20, 28, 35, 39, 49]

    def test_round_trip_random_vectors(self):
        rng = np.random.default_rng(42)
        for _ in range(10_000):
            v = random_vector(rng)
            assert decode_one_hot(encode_one_hot(v)) == v

    def test_decode_rejects_double_bits(self):
        v = DesignVector((0,) * NUM_DIMENSIONS)
        bits = encode_one_hot(v)
        bits[1] = 1
        with pytest.raises(ValidationFailed):
            decode_one_hot(bits)


class TestPrompts:
    V = DesignVector.from_names(
        ["Shirt", "Long", "V", "Breasted", "Pure", "Focus", "Cotton",
         "Monochromatic", "Blue"]
    )

    def test_framing_prompt_prefix(self):
        out = render_prompt(self.V, PromptStage.FRAMING)
        assert out.startswith(
            "An image of a clear master piece of real garment without a model, "
            "with a white background."
        )
        assert GARMENT_PROMPT_PREFIX in out

    def test_all_placeholders_filled(self):
        out = render_prompt(self.V, PromptStage.FRAMING)
        assert "[" not in out and "]" not in out
        for name in self.V.names():
            assert name in out

    def test_byte_stable(self):
        a = render_prompt(self.V, PromptStage.FRAMING)
        b = render_prompt(self.V, PromptStage.FRAMING)
        assert a.encode() == b.encode()

    def test_informed_appends_exactly_one_detail_sentence(self):
        out = render_prompt(
            self.V, PromptStage.INFORMED, {"Collar Shape": "deep V with piping"}
        )
        sentence = "For Collar Shape part, with detailed descriptions of deep V with piping."
        assert out.count(sentence) == 1
        base = render_prompt(self.V, PromptStage.FRAMING)
        assert out == base + "\n\n" + sentence

    def test_informed_without_detail_raises(self):
        with pytest.raises(MissingDetail):
            render_prompt(self.V, PromptStage.INFORMED, {})

    def test_partial_render_keeps_unfilled_brackets(self):
        out = render_partial_prompt({0: 4, 2: 3})
        assert "T-shirt" in out and "Round" in out
        assert "[Sleeve Length]" in out and "[Material]" in out

    def test_avatar_prompt_substitution(self):
        out = render_avatar_prompt("M", 175, 70)
        assert "175 in height (cm)" in out
        assert "70 in weight (kg)" in out
        assert "standing gracefully in the center" in out
        assert "[" not in out
        woman = render_avatar_prompt("F", 162.5, 55)
        assert woman.startswith("A woman, she is 162.5 in height (cm)")


class TestFiltering:
    def test_strictness_zero_excludes_nothing(self):
        result, source = filter_attributes("T-shirt", "any scene", "any principle", 0.0)
        assert source == "rules"
        assert result.excluded == frozenset()

    def test_formal_excludes_dot_and_number_letter(self):
        result, _ = filter_attributes("Shirt", "office", "formal attire", 0.8)
        names = {CANONICAL_SPACE.attribute_name(a) for a in result.excluded}
        assert "Dot" in names
        assert "Number and Letter" in names

    def test_frozen_winter_golden(self):
        result, _ = filter_attributes("Hoodie", "frozen winter", "", 0.8)
        excluded = {CANONICAL_SPACE.attribute_name(a) for a in result.excluded}
        included = {CANONICAL_SPACE.attribute_name(a) for a in result.included}
        assert "Sleeveless" in excluded
        assert "Woolen" in included

    def test_chosen_type_always_included(self):
        # "summer" rules would exclude Coat; the chosen type survives.
        result, _ = filter_attributes("Coat", "hot summer beach", "", 1.0)
        coat = CANONICAL_SPACE.attribute_id("Type", "Coat")
        assert coat in result.included

    @settings(max_examples=40, deadline=None)
    @given(
        s1=st.floats(min_value=0, max_value=1),
        s2=st.floats(min_value=0, max_value=1),
        scene=st.sampled_from(["frozen winter", "hot summer", "sport outdoor", "office"]),
        principle=st.sampled_from(["formal", "minimalist", "casual fun", ""]),
    )
    def test_monotone_in_strictness(self, s1, s2, scene, principle):
        if s1 > s2:
            s1, s2 = s2, s1
        r1, _ = filter_attributes("Shirt", scene, principle, s1)
        r2, _ = filter_attributes("Shirt", scene, principle, s2)
        assert r1.excluded <= r2.excluded

    @settings(max_examples=40, deadline=None)
    @given(
        strictness=st.floats(min_value=0, max_value=1),
        scene=st.sampled_from(
            ["frozen winter day", "hot summer sport", "formal business winter",
             "minimalist elegant outdoor"]
        ),
    )
    def test_every_dimension_keeps_an_attribute(self, strictness, scene):
        result, _ = filter_attributes("T-shirt", scene, scene, strictness)
        by_dim = result.included_by_dimension()
        assert all(len(pool) >= 1 for pool in by_dim)

    def test_backend_unavailable_falls_back_to_rules(self):
        from codesign.design_space import LLMFramingBackend

        result, source = filter_attributes(
            "Shirt", "office", "formal", 0.8, llm=LLMFramingBackend(transport=None)
        )
        assert source == "llm-fallback"
        names = {CANONICAL_SPACE.attribute_name(a) for a in result.excluded}
        assert "Dot" in names

    def test_llm_backend_honors_transport(self):
        from codesign.design_space import LLMFramingBackend

        prompts = []

        def transport(prompt, words):
            prompts.append(prompt)
            return words[:1]

        result, source = filter_attributes(
            "Shirt", "gala night", "elegant", 0.5,
            llm=LLMFramingBackend(transport=transport),
        )
        assert source == "llm"
        assert len(prompts) == NUM_DIMENSIONS
        assert "gala night" in prompts[0]
        assert "keep" in prompts[0]
        by_dim = result.included_by_dimension()
        assert all(len(pool) >= 1 for pool in by_dim)

    def test_overrides_toggle_chips(self):
        result, _ = filter_attributes("Shirt", "office", "formal attire", 0.8)
        dot = CANONICAL_SPACE.attribute_id("Pattern Style", "Dot")
        assert dot in result.excluded
        toggled = apply_overrides(result, include=[dot])
        assert dot in toggled.included
        back = apply_overrides(toggled, exclude=[dot])
        assert dot in back.excluded

    def test_override_cannot_empty_a_dimension(self):
        result = FilterResult.allow_all()
        sleeve = [CANONICAL_SPACE.attribute_id("Sleeve Length", n)
                  for n in ("Sleeveless", "Short", "Long")]
        partial = apply_overrides(result, exclude=sleeve[:2])
        with pytest.raises(ValidationFailed):
            apply_overrides(partial, exclude=sleeve[2:])


class TestFilterResultInvariants:
    def test_partition_and_coverage(self):
        result, _ = filter_attributes("Shirt", "frozen winter", "formal", 0.9)
        assert not (result.included & result.excluded)
        assert len(result.included) + len(result.excluded) == NUM_ATTRIBUTES

    def test_rule_backend_deterministic(self):
        backend = RuleBasedFramingBackend()
        a = backend.filter("Shirt", "sport outdoor", "functional", 0.7)
        b = backend.filter("Shirt", "sport outdoor", "functional", 0.7)
        assert a == b
