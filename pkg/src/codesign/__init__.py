"""Co-design preference engine.

Library + CLI implementing a three-stage co-design workflow: design framing
(attribute filtering, library generation), multi-round user preference
elicitation (brush strokes, votes, per-user preference models with
entropy-driven recommendation), and preference-integrated design (consensus
scoring, Shapley attribution, fine-tune manifest export), all behind an
event-sourced HTTP gateway with deterministic mock backends.
"""

__version__ = "0.1.0"

from .design_space import (
    CANONICAL_SPACE,
    AttributeId,
    DesignSpace,
    DesignVector,
    FilterResult,
    PromptStage,
    decode_one_hot,
    encode_one_hot,
    filter_attributes,
    render_prompt,
)
from .elicitation import BrushRegion, InteractionRecord, UserProfile, rasterize_mask
from .consensus import consensus, tally, upu
from .preference_model import PPNNState, cold_start, entropy, predict, select_next, train_increment
from .attribution import AttributionConfig, shapley_exact

__all__ = [
    "CANONICAL_SPACE",
    "AttributeId",
    "DesignSpace",
    "DesignVector",
    "FilterResult",
    "PromptStage",
    "decode_one_hot",
    "encode_one_hot",
    "filter_attributes",
    "render_prompt",
    "BrushRegion",
    "InteractionRecord",
    "UserProfile",
    "rasterize_mask",
    "consensus",
    "tally",
    "upu",
    "PPNNState",
    "cold_start",
    "entropy",
    "predict",
    "select_next",
    "train_increment",
    "AttributionConfig",
    "shapley_exact",
]
