"""Project state machine over the event log, plus the multi-project gateway.

Every mutation validates against current state, appends one or more events
(durably), then applies them. Application is a pure function of the event
payload, so replaying the log rebuilds the exact live state — including
per-user model weights, which are a deterministic function of each model's
seed and vote history and are materialized lazily rather than stored.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from ..attribution import (
    AttributionConfig,
    ShapleyReport,
    attribute_item,
    mean_baseline,
    report_to_json_dict as attribution_json,
)
from ..backends import BackendSuite, BlobStore
from ..catalog import GENERATE_CAP, Catalog, DesignItem, SceneContext, sample_design_vectors
from ..consensus import ConsensusReport, consensus, report_to_json_dict as consensus_json, tally
from ..design_space import (
    CANONICAL_SPACE,
    NUM_DIMENSIONS,
    AttributeId,
    DesignVector,
    FilterResult,
    PromptStage,
    apply_overrides,
    filter_attributes,
    render_avatar_prompt,
    render_prompt,
    render_scene_prompt,
)
from ..elicitation import (
    BrushRegion,
    Gender,
    InteractionKind,
    InteractionRecord,
    Polarity,
    UserProfile,
    hypothesize_dimensions,
)
from ..errors import (
    AlreadyDeleted,
    AlreadyPruned,
    CodesignError,
    NoCandidates,
    NotPruned,
    SessionClosed,
    StaleSnapshot,
    UnknownAttribute,
    UnknownItem,
    UnknownProject,
    UnknownSession,
    ValidationFailed,
)
from ..palette import (
    FineTuneManifest,
    PreferenceTree,
    PruneSet,
    PuzzleSelection,
    build_tree,
    export_manifest,
    palette_columns,
    tree_to_json_dict,
    validate_prune_target,
    write_manifest,
)
from ..preference_model import (
    COLD_START_SIZE,
    ROUND_SIZE,
    PPNNState,
    RecommendationRound,
    SelectionStrategy,
    build_feature,
    cold_start,
    new_model,
    save_checkpoint,
    select_next,
    train_increment,
)
from .events import Event, EventLog, log_hash

DEFAULT_MAX_ROUNDS = 6


def _derived_seed(*parts: object) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _attr_key(attr: AttributeId) -> str:
    return f"{attr.dimension_index}.{attr.attribute_index}"


def parse_attribute(token: str) -> AttributeId:
    """Accept ``d.a`` index pairs or ``Dimension:Attribute`` names."""
    space = CANONICAL_SPACE
    try:
        if ":" in token:
            dim, attr = token.split(":", 1)
            return space.attribute_id(dim, attr)
        d_str, a_str = token.split(".", 1)
        attr_id = AttributeId(int(d_str), int(a_str))
        space.validate_attribute(attr_id)
        return attr_id
    except (ValueError, ValidationFailed):
        raise UnknownAttribute(f"cannot resolve attribute {token!r}") from None


@dataclass
class SessionState:
    session_id: str
    user_id: str
    profile: UserProfile
    session_seed: int
    avatar_prompt: str
    max_rounds: int
    rounds: list[RecommendationRound] = field(default_factory=list)
    votes: dict[str, str] = field(default_factory=dict)  # item_id -> polarity
    tryon_refs: dict[str, str] = field(default_factory=dict)

    @property
    def current_round(self) -> RecommendationRound | None:
        return self.rounds[-1] if self.rounds else None

    def round_complete(self) -> bool:
        rnd = self.current_round
        return rnd is not None and all(i in self.votes for i in rnd.item_ids)

    def labels_collected(self) -> int:
        return len(self.votes)


@dataclass
class ProjectState:
    project_id: str
    seed: int
    max_rounds: int = DEFAULT_MAX_ROUNDS
    mode: str = "Mock"
    selection_strategy: str = "Entropy"  # "Random" is a simulation baseline
    scene: SceneContext | None = None
    filter_source: str | None = None
    scene_prompt: str | None = None
    catalog: Catalog = field(default_factory=Catalog)
    staged: dict[str, DesignItem] = field(default_factory=dict)
    sessions: dict[str, SessionState] = field(default_factory=dict)
    records: list[InteractionRecord] = field(default_factory=list)
    records_by_id: dict[str, InteractionRecord] = field(default_factory=dict)
    shown_by_user: dict[str, set[str]] = field(default_factory=dict)
    prune_sets: dict[str, PruneSet] = field(default_factory=dict)
    models: dict[str, PPNNState] = field(default_factory=dict)
    manifests: list[dict] = field(default_factory=list)
    next_item: int = 0
    next_session: int = 0

    def effective_filter(self) -> FilterResult:
        if self.scene is not None:
            return self.scene.filter
        return FilterResult.allow_all()

    def prune_set(self, attr: AttributeId) -> PruneSet:
        """Mutable prune set for the attribute (created on first use)."""
        return self.prune_sets.setdefault(_attr_key(attr), PruneSet())

    def prune_set_view(self, attr: AttributeId) -> PruneSet:
        """Read-only lookup: never creates state (keeps GETs pure)."""
        return self.prune_sets.get(_attr_key(attr)) or PruneSet()

    def user_ids(self) -> list[str]:
        return sorted({s.user_id for s in self.sessions.values()})

    def item_feature(self, item_id: str) -> np.ndarray:
        if item_id in self.catalog:
            item = self.catalog.get(item_id)
        elif item_id in self.staged:
            item = self.staged[item_id]
        else:
            raise UnknownItem(f"unknown item {item_id!r}")
        return build_feature(item.design_vector, item.visual_embedding)


def state_hash(state: ProjectState) -> str:
    """Content hash of replay-relevant state; timestamps and caches excluded."""
    sessions = {}
    for sid in sorted(state.sessions):
        s = state.sessions[sid]
        sessions[sid] = {
            "user_id": s.user_id,
            "profile": {
                "user_id": s.profile.user_id,
                "gender": s.profile.gender.value,
                "height_cm": s.profile.height_cm,
                "weight_kg": s.profile.weight_kg,
            },
            "session_seed": s.session_seed,
            "avatar_prompt": s.avatar_prompt,
            "rounds": [
                {"round_index": r.round_index, "strategy": r.strategy.value,
                 "item_ids": list(r.item_ids)}
                for r in s.rounds
            ],
            "votes": dict(sorted(s.votes.items())),
            "tryon_refs": dict(sorted(s.tryon_refs.items())),
        }
    models = {}
    for uid in sorted(state.models):
        m = state.models[uid]
        models[uid] = {
            "init_seed": m.init_seed,
            "version": m.version,
            "history_hash": m.history_hash(),
            "train_log": [[e.round_index, e.item_id, e.label] for e in m.train_log],
        }
    doc = {
        "project_id": state.project_id,
        "seed": state.seed,
        "max_rounds": state.max_rounds,
        "mode": state.mode,
        "selection_strategy": state.selection_strategy,
        "scene": None
        if state.scene is None
        else {
            "scene_text": state.scene.scene_text,
            "scene_image_ref": state.scene.scene_image_ref,
            "garment_type": state.scene.garment_type,
            "principle": state.scene.principle,
            "strictness": state.scene.filter.strictness,
            "included": sorted(a.as_tuple() for a in state.scene.filter.included),
            "source": state.filter_source,
        },
        "catalog": state.catalog.snapshot_dict(),
        "staged": [state.staged[k].as_dict() for k in sorted(state.staged)],
        "sessions": sessions,
        "records": [r.as_dict() for r in state.records],
        "shown": {u: sorted(v) for u, v in sorted(state.shown_by_user.items())},
        "prune_sets": {k: sorted(v.keys)
                       for k, v in sorted(state.prune_sets.items()) if v.keys},
        "models": models,
        "manifests": state.manifests,
        "next_item": state.next_item,
        "next_session": state.next_session,
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


class StateMachine:
    """Pure fold of events into project state; no I/O, no side effects."""

    def __init__(self) -> None:
        self.state: ProjectState | None = None

    def require_state(self) -> ProjectState:
        if self.state is None:
            raise UnknownProject("project not initialized")
        return self.state

    def apply(self, event: Event) -> None:
        handler = getattr(self, f"_apply_{_snake(event.kind)}")
        handler(event.payload)

    # -- apply handlers (pure state transitions) ----------------------------

    def _apply_project_created(self, p: dict) -> None:
        self.state = ProjectState(
            project_id=p["project_id"],
            seed=int(p["seed"]),
            max_rounds=int(p["max_rounds"]),
            mode=p["mode"],
            selection_strategy=p.get("selection_strategy", "Entropy"),
        )

    def _apply_filter_applied(self, p: dict) -> None:
        st = self.require_state()
        included = frozenset(AttributeId(d, a) for d, a in p["included"])
        excluded = frozenset(AttributeId(d, a) for d, a in p["excluded"])
        result = FilterResult(included=included, excluded=excluded,
                              strictness=float(p["strictness"]))
        st.scene = SceneContext(
            scene_text=p["scene"],
            scene_image_ref=p["scene_image_ref"],
            garment_type=p["garment_type"],
            principle=p["principle"],
            filter=result,
        )
        st.filter_source = p["source"]
        st.scene_prompt = p["scene_prompt"]

    def _apply_items_ingested(self, p: dict) -> None:
        st = self.require_state()
        for d in p["items"]:
            item = DesignItem.from_dict(d)
            if p.get("staged"):
                st.staged[item.item_id] = item
            else:
                st.catalog.insert(item)
            st.next_item = max(st.next_item, int(item.item_id[1:]) + 1)

    def _apply_curated(self, p: dict) -> None:
        st = self.require_state()
        if p["op"] == "remove":
            st.catalog.remove(p["item_id"])
        else:
            st.catalog.reorder(p["item_id"], int(p["new_rank"]))

    def _apply_session_opened(self, p: dict) -> None:
        st = self.require_state()
        prof = p["profile"]
        profile = UserProfile(
            user_id=prof["user_id"],
            gender=Gender(prof["gender"]),
            height_cm=float(prof["height_cm"]),
            weight_kg=float(prof["weight_kg"]),
        )
        session = SessionState(
            session_id=p["session_id"],
            user_id=profile.user_id,
            profile=profile,
            session_seed=int(p["session_seed"]),
            avatar_prompt=p["avatar_prompt"],
            max_rounds=st.max_rounds,
        )
        st.sessions[session.session_id] = session
        st.next_session = max(st.next_session, int(p["session_index"]) + 1)
        if profile.user_id not in st.models:
            st.models[profile.user_id] = new_model(_derived_seed(st.seed, profile.user_id))

    def _apply_round_issued(self, p: dict) -> None:
        st = self.require_state()
        session = st.sessions[p["session_id"]]
        rnd = RecommendationRound(
            round_index=int(p["round_index"]),
            item_ids=tuple(p["item_ids"]),
            strategy=SelectionStrategy(p["strategy"]),
        )
        session.rounds.append(rnd)
        session.tryon_refs.update(p.get("tryon_refs", {}))
        shown = st.shown_by_user.setdefault(session.user_id, set())
        shown.update(rnd.item_ids)

    def _apply_interaction_submitted(self, p: dict) -> None:
        st = self.require_state()
        record = InteractionRecord.from_dict(p["record"])
        st.records.append(record)
        st.records_by_id[record.record_id] = record
        if record.kind is InteractionKind.OVERALL_VOTE:
            session = st.sessions[p["session_id"]]
            session.votes[record.item_id] = record.polarity.value

    def _apply_model_trained(self, p: dict) -> None:
        st = self.require_state()
        uid = p["user_id"]
        model = st.models[uid]
        entries = [(item_id, st.item_feature(item_id), int(label), int(round_index))
                   for round_index, item_id, label in p["history_delta"]]
        st.models[uid] = train_increment(model, entries)

    def _apply_tree_pruned(self, p: dict) -> None:
        st = self.require_state()
        attr = AttributeId(*p["attribute"])
        pset = st.prune_set(attr)
        if p["action"] == "prune":
            pset.prune(p["node_type"], p["node_id"])
        else:
            pset.unprune(p["node_type"], p["node_id"])

    def _apply_manifest_exported(self, p: dict) -> None:
        st = self.require_state()
        st.manifests.append(
            {
                "attribute": p["attribute"],
                "log_offset": p["log_offset"],
                "prune_set_hash": p["prune_set_hash"],
                "manifest_sha256": p["manifest_sha256"],
                "entry_count": p["entry_count"],
            }
        )

    def _apply_item_saved(self, p: dict) -> None:
        st = self.require_state()
        item = st.staged.pop(p["item_id"])
        st.catalog.insert(
            DesignItem(
                item_id=item.item_id,
                design_vector=item.design_vector,
                image_ref=item.image_ref,
                visual_embedding=item.visual_embedding,
                origin=item.origin,
                display_rank=int(p["display_rank"]),
                deleted=False,
            )
        )


def fold_events(events: Sequence[Event]) -> ProjectState | None:
    """Replay a list of events into a fresh state (no files involved)."""
    machine = StateMachine()
    for event in events:
        machine.apply(event)
    return machine.state


class ProjectService:
    """Single project: command validation, event append, state application."""

    def __init__(
        self,
        project_dir: Path,
        backends: BackendSuite,
        clock: Callable[[], float] | None = None,
    ) -> None:
        self.dir = Path(project_dir)
        self.backends = backends
        self.blobs = BlobStore(self.dir / "blobs")
        kwargs = {"clock": clock} if clock else {}
        self.log = EventLog(self.dir / "events.jsonl", **kwargs)
        self.machine = StateMachine()
        self._lock = threading.RLock()
        for event in self.log:
            self._apply(event)

    # -- event machinery ----------------------------------------------------

    def _append(self, kind: str, payload: dict, dedup_key: str | None = None) -> Event:
        before = len(self.log)
        event = self.log.append(kind, payload, dedup_key)
        if event.seq <= before:  # dedup hit: already applied
            return event
        self._apply(event)
        return event

    def _apply(self, event: Event) -> None:
        self.machine.apply(event)

    @property
    def state(self) -> ProjectState | None:
        return self.machine.state

    @property
    def offset(self) -> int:
        return len(self.log)

    def require_state(self) -> ProjectState:
        return self.machine.require_state()

    def _check_offset(self, expected_offset: int | None) -> None:
        if expected_offset is not None and expected_offset != self.offset:
            raise StaleSnapshot(
                f"expected log offset {expected_offset}, current is {self.offset}",
                expected=expected_offset,
                current=self.offset,
            )

    # -- commands -----------------------------------------------------------

    def create(
        self,
        project_id: str,
        seed: int,
        max_rounds: int,
        mode: str,
        selection_strategy: str = "Entropy",
    ) -> None:
        with self._lock:
            if self.state is not None:
                raise ValidationFailed("project already created")
            if selection_strategy not in ("Entropy", "Random"):
                raise ValidationFailed(
                    f"unknown selection strategy {selection_strategy!r}"
                )
            self._append(
                "ProjectCreated",
                {"project_id": project_id, "seed": seed, "max_rounds": max_rounds,
                 "mode": mode, "selection_strategy": selection_strategy},
            )

    def apply_framing(
        self,
        garment_type: str,
        scene: str,
        principle: str,
        strictness: float,
        include: Sequence[str] = (),
        exclude: Sequence[str] = (),
    ) -> dict:
        with self._lock:
            st = self.require_state()
            result, source = filter_attributes(
                garment_type, scene, principle, strictness, self.backends.framing
            )
            if include or exclude:
                result = apply_overrides(
                    result,
                    include=[parse_attribute(t) for t in include],
                    exclude=[parse_attribute(t) for t in exclude],
                )
            scene_prompt = render_scene_prompt(scene)
            scene_png = self.backends.generation.generate_scene(scene_prompt)
            scene_ref = self.blobs.put(scene_png)
            self._append(
                "FilterApplied",
                {
                    "garment_type": garment_type,
                    "scene": scene,
                    "principle": principle,
                    "strictness": strictness,
                    "source": source,
                    "included": sorted(a.as_tuple() for a in result.included),
                    "excluded": sorted(a.as_tuple() for a in result.excluded),
                    "scene_image_ref": scene_ref,
                    "scene_prompt": scene_prompt,
                },
            )
            return self.framing_view()

    def framing_view(self) -> dict:
        st = self.require_state()
        if st.scene is None:
            return {"applied": False, "log_offset": self.offset}
        space = CANONICAL_SPACE
        return {
            "applied": True,
            "garment_type": st.scene.garment_type,
            "scene": st.scene.scene_text,
            "principle": st.scene.principle,
            "strictness": st.scene.filter.strictness,
            "source": st.filter_source,
            "scene_image_ref": st.scene.scene_image_ref,
            "included": [
                {"dimension": space.dimension_name(a.dimension_index),
                 "attribute": space.attribute_name(a)}
                for a in sorted(st.scene.filter.included, key=lambda x: x.as_tuple())
            ],
            "excluded": [
                {"dimension": space.dimension_name(a.dimension_index),
                 "attribute": space.attribute_name(a)}
                for a in sorted(st.scene.filter.excluded, key=lambda x: x.as_tuple())
            ],
            "log_offset": self.offset,
        }

    def generate_library(self, n: int) -> dict:
        with self._lock:
            st = self.require_state()
            if n < 1:
                raise ValidationFailed("n must be >= 1")
            n = min(n, GENERATE_CAP)
            vectors = sample_design_vectors(
                st.effective_filter(), n, seed=_derived_seed(st.seed, "library", self.offset)
            )
            items = self._materialize_items(vectors, origin="Framing")
            self._append("ItemsIngested", {"origin": "Framing", "staged": False,
                                           "items": [it.as_dict() for it in items]})
            return self.library_view()

    def _materialize_items(
        self, vectors: Sequence[DesignVector], origin: str, staged: bool = False
    ) -> list[DesignItem]:
        """Run generation + embedding for a batch; atomic (all or nothing)."""
        st = self.require_state()
        produced = []
        base_rank = st.catalog.next_rank()
        for i, v in enumerate(vectors):
            prompt = render_prompt(v, PromptStage.FRAMING)
            png = self.backends.generation.generate_garment(v, prompt)
            ref = self.blobs.put(png)
            embedding = self.backends.embedding.embed(v, ref)
            item_id = f"i{st.next_item + i:04d}"
            produced.append(
                DesignItem(
                    item_id=item_id,
                    design_vector=v,
                    image_ref=ref,
                    visual_embedding=tuple(float(x) for x in embedding),
                    origin=origin,
                    display_rank=-1 if staged else base_rank + i,
                )
            )
        return produced

    def library_view(self) -> dict:
        st = self.require_state()
        return {
            "items": [it.as_dict() for it in st.catalog.visible_items()],
            "log_offset": self.offset,
        }

    def curate(self, ops: Sequence[dict], expected_offset: int | None = None) -> dict:
        with self._lock:
            st = self.require_state()
            self._check_offset(expected_offset)
            for op in ops:
                kind = op.get("op")
                item_id = op.get("item_id", "")
                item = st.catalog.get(item_id)  # raises UnknownItem
                if item.deleted:
                    raise AlreadyDeleted(f"item {item_id!r} already removed")
                if kind == "remove":
                    self._append("Curated", {"op": "remove", "item_id": item_id})
                elif kind == "reorder":
                    self._append(
                        "Curated",
                        {"op": "reorder", "item_id": item_id,
                         "new_rank": int(op.get("new_rank", 0))},
                    )
                else:
                    raise ValidationFailed(f"unknown curate op {kind!r}")
            return self.library_view()

    def open_session(self, profile: UserProfile) -> dict:
        with self._lock:
            st = self.require_state()
            candidates = self._candidates_for(profile.user_id)
            if not candidates:
                raise NoCandidates("no items available for a new session")
            session_index = st.next_session
            session_id = f"{st.project_id}-s{session_index:03d}"
            session_seed = _derived_seed(st.seed, "session", profile.user_id, session_index)
            resolved = profile.resolved(session_seed)
            avatar_prompt = render_avatar_prompt(
                resolved.gender.value, resolved.height_cm, resolved.weight_kg
            )
            ranking = [it.item_id for it in st.catalog.visible_items()]
            rnd = cold_start(candidates, seed_ranking=ranking, k=COLD_START_SIZE)
            tryon_refs = self._tryon_for(resolved, rnd.item_ids)
            self._append(
                "SessionOpened",
                {
                    "session_id": session_id,
                    "session_index": session_index,
                    "session_seed": session_seed,
                    "avatar_prompt": avatar_prompt,
                    "profile": {
                        "user_id": resolved.user_id,
                        "gender": resolved.gender.value,
                        "height_cm": resolved.height_cm,
                        "weight_kg": resolved.weight_kg,
                    },
                },
            )
            self._append(
                "RoundIssued",
                {
                    "session_id": session_id,
                    "round_index": 0,
                    "strategy": rnd.strategy.value,
                    "item_ids": list(rnd.item_ids),
                    "tryon_refs": tryon_refs,
                },
            )
            return self.round_view(session_id)

    def _candidates_for(self, user_id: str) -> list[tuple[str, np.ndarray]]:
        from ..design_space import encode_one_hot

        st = self.require_state()
        shown = st.shown_by_user.get(user_id, set())
        return [
            (it.item_id, encode_one_hot(it.design_vector))
            for it in st.catalog.visible_items()
            if it.item_id not in shown
        ]

    def _feature_candidates_for(self, user_id: str) -> list[tuple[str, np.ndarray]]:
        st = self.require_state()
        shown = st.shown_by_user.get(user_id, set())
        return [
            (it.item_id, build_feature(it.design_vector, it.visual_embedding))
            for it in st.catalog.visible_items()
            if it.item_id not in shown
        ]

    def _tryon_for(self, profile: UserProfile, item_ids: Iterable[str]) -> dict[str, str]:
        st = self.require_state()
        scene_png = None
        if st.scene is not None:
            scene_png = self.blobs.get(st.scene.scene_image_ref)
        refs = {}
        for item_id in item_ids:
            item = st.catalog.get(item_id)
            garment_png = self.blobs.get(item.image_ref)
            composite = self.backends.tryon.compose(profile, garment_png, scene_png)
            refs[item_id] = self.blobs.put(composite)
        return refs

    def _session(self, session_id: str) -> SessionState:
        st = self.require_state()
        try:
            return st.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"unknown session {session_id!r}") from None

    def _session_closed(self, session: SessionState) -> bool:
        """A session ends after max_rounds, or when the pool runs dry."""
        if not session.round_complete():
            return False
        if len(session.rounds) >= session.max_rounds:
            return True
        return not self._candidates_for(session.user_id)

    def round_view(self, session_id: str) -> dict:
        st = self.require_state()
        session = self._session(session_id)
        rnd = session.current_round
        items = []
        for item_id in rnd.item_ids if rnd else ():
            item = st.catalog.get(item_id)
            items.append(
                {
                    "item_id": item_id,
                    "image_ref": item.image_ref,
                    "tryon_ref": session.tryon_refs.get(item_id),
                    "design": dict(zip(
                        (CANONICAL_SPACE.dimension_name(d) for d in range(NUM_DIMENSIONS)),
                        item.design_vector.names(),
                    )),
                    "voted": item_id in session.votes,
                }
            )
        return {
            "session_id": session_id,
            "user_id": session.user_id,
            "profile": {
                "user_id": session.profile.user_id,
                "gender": session.profile.gender.value,
                "height_cm": session.profile.height_cm,
                "weight_kg": session.profile.weight_kg,
            },
            "round_index": rnd.round_index if rnd else None,
            "strategy": rnd.strategy.value if rnd else None,
            "items": items,
            "round_complete": session.round_complete(),
            "closed": self._session_closed(session),
            "labels_collected": session.labels_collected(),
            "scene_image_ref": st.scene.scene_image_ref if st.scene else None,
            "log_offset": self.offset,
        }

    def submit_interaction(
        self,
        session_id: str,
        item_id: str,
        polarity: str,
        region: dict | None,
        confirmed_dimensions: Sequence[int] = (),
        comment: str | None = None,
        dedup_key: str | None = None,
    ) -> dict:
        with self._lock:
            st = self.require_state()
            session = self._session(session_id)
            if self._session_closed(session):
                raise SessionClosed(f"session {session_id} has ended")
            if dedup_key is not None:
                prior = self.log.seen_dedup(dedup_key)
                if prior is not None:
                    return self._interaction_ack(self.log.event_at(prior))
            shown = st.shown_by_user.get(session.user_id, set())
            if item_id not in shown:
                raise UnknownItem(f"item {item_id!r} was not shown in this session")
            brush_region = BrushRegion.from_dict(region) if region else None
            hypothesis = ()
            if brush_region is not None:
                ranked = hypothesize_dimensions(brush_region, self.backends.region)
                hypothesis = tuple((d, round(c, 6)) for d, c in ranked)
            record = InteractionRecord(
                record_id=f"r{self.offset + 1:05d}",
                user_id=session.user_id,
                item_id=item_id,
                kind=InteractionKind.BRUSH,
                polarity=Polarity(polarity),
                round_index=session.current_round.round_index,
                region=brush_region,
                confirmed_dimensions=tuple(sorted(set(confirmed_dimensions))),
                hypothesis=hypothesis,
                comment=comment,
            )
            event = self._append(
                "InteractionSubmitted",
                {"session_id": session_id, "record": record.as_dict()},
                dedup_key=dedup_key,
            )
            return self._interaction_ack(event)

    def _interaction_ack(self, event: Event) -> dict:
        record = event.payload["record"]
        return {
            "record_id": record["record_id"],
            "hypothesis": record.get("hypothesis", []),
            "log_offset": self.offset,
        }

    def submit_vote(
        self,
        session_id: str,
        item_id: str,
        polarity: str,
        comment: str | None = None,
        dedup_key: str | None = None,
    ) -> dict:
        with self._lock:
            st = self.require_state()
            session = self._session(session_id)
            if self._session_closed(session):
                raise SessionClosed(f"session {session_id} has ended")
            if dedup_key is not None:
                prior = self.log.seen_dedup(dedup_key)
                if prior is not None:
                    view = self.round_view(session_id)
                    view["record_id"] = self.log.event_at(prior).payload["record"]["record_id"]
                    return view
            rnd = session.current_round
            if rnd is None or item_id not in rnd.item_ids:
                raise UnknownItem(f"item {item_id!r} is not in the current round")
            if item_id in session.votes:
                raise ValidationFailed(f"item {item_id!r} already voted in this session")
            record = InteractionRecord(
                record_id=f"r{self.offset + 1:05d}",
                user_id=session.user_id,
                item_id=item_id,
                kind=InteractionKind.OVERALL_VOTE,
                polarity=Polarity(polarity),
                round_index=rnd.round_index,
                comment=comment,
            )
            self._append(
                "InteractionSubmitted",
                {"session_id": session_id, "record": record.as_dict()},
                dedup_key=dedup_key,
            )
            if session.round_complete():
                self._train_and_advance(session)
            view = self.round_view(session_id)
            view["record_id"] = record.record_id
            return view

    def _train_and_advance(self, session: SessionState) -> None:
        st = self.require_state()
        rnd = session.current_round
        history_delta = [
            [rnd.round_index, item_id, 1 if session.votes[item_id] == "Like" else 0]
            for item_id in rnd.item_ids
        ]
        model = st.models[session.user_id]
        self._append(
            "ModelTrained",
            {
                "user_id": session.user_id,
                "version": model.version + 1,
                "history_delta": history_delta,
                "prev_history_hash": model.history_hash(),
            },
        )
        save_checkpoint(
            st.models[session.user_id], self.dir / "models" / f"{session.user_id}.ppnn"
        )
        if len(session.rounds) >= session.max_rounds:
            return
        candidates = self._feature_candidates_for(session.user_id)
        if not candidates:
            return
        if st.selection_strategy == "Random":
            rng = np.random.default_rng(
                _derived_seed(st.seed, "random-round", session.session_id,
                              rnd.round_index + 1)
            )
            ids = sorted(item_id for item_id, _ in candidates)
            pick = rng.choice(len(ids), size=min(ROUND_SIZE, len(ids)), replace=False)
            next_round = RecommendationRound(
                round_index=rnd.round_index + 1,
                item_ids=tuple(ids[i] for i in sorted(pick)),
                strategy=SelectionStrategy.RANDOM,
            )
        else:
            next_round = select_next(
                st.models[session.user_id],
                candidates,
                k=ROUND_SIZE,
                round_index=rnd.round_index + 1,
            )
        tryon_refs = self._tryon_for(session.profile, next_round.item_ids)
        self._append(
            "RoundIssued",
            {
                "session_id": session.session_id,
                "round_index": next_round.round_index,
                "strategy": next_round.strategy.value,
                "item_ids": list(next_round.item_ids),
                "tryon_refs": tryon_refs,
            },
        )

    # -- analysis & synthesis ------------------------------------------------

    def consensus_report(self) -> ConsensusReport:
        st = self.require_state()
        users = st.user_ids()
        if not users:
            raise ValidationFailed("no user sessions yet")
        vectors = {
            it.item_id: it.design_vector.attribute_indices for it in st.catalog.all_items()
        }
        t = tally(st.records, vectors)
        return consensus(t, users, log_offset=self.offset)

    def consensus_view(self) -> dict:
        st = self.require_state()
        if not st.user_ids():
            return {"log_offset": self.offset, "n": 0, "upu": {},
                    "acs_raw": {}, "acs_norm": {}}
        return consensus_json(self.consensus_report())

    def palette_view(self) -> dict:
        report = self.consensus_report()
        return {
            "columns": palette_columns(report),
            "log_offset": self.offset,
        }

    def tree(self, attr: AttributeId) -> PreferenceTree:
        st = self.require_state()
        return build_tree(
            attr,
            st.catalog.visible_items(),
            st.records,
            st.prune_set_view(attr),
            log_offset=self.offset,
        )

    def tree_view(self, attr: AttributeId) -> dict:
        return tree_to_json_dict(self.tree(attr))

    def prune(
        self,
        attr: AttributeId,
        node_type: str,
        node_id: str,
        action: str = "prune",
        expected_offset: int | None = None,
    ) -> dict:
        with self._lock:
            st = self.require_state()
            self._check_offset(expected_offset)
            if action not in ("prune", "unprune"):
                raise ValidationFailed(f"unknown prune action {action!r}")
            tree = self.tree(attr)
            validate_prune_target(tree, node_type, node_id)
            pset = st.prune_set_view(attr)
            key_pruned = (
                pset.garment_pruned(node_id) if node_type == "garment"
                else pset.leaf_pruned(node_id)
            )
            if action == "prune" and key_pruned:
                raise AlreadyPruned(f"{node_type}:{node_id} is already pruned")
            if action == "unprune" and not key_pruned:
                raise NotPruned(f"{node_type}:{node_id} is not pruned")
            self._append(
                "TreePruned",
                {"attribute": list(attr.as_tuple()), "node_type": node_type,
                 "node_id": node_id, "action": action},
            )
            return self.tree_view(attr)

    def build_manifest(self, attr: AttributeId) -> FineTuneManifest:
        st = self.require_state()
        tree = self.tree(attr)
        items_by_id = {it.item_id: it for it in st.catalog.all_items()}
        return export_manifest(tree, items_by_id, st.records_by_id)

    def export_manifest_cmd(self, attr: AttributeId) -> dict:
        with self._lock:
            st = self.require_state()
            manifest = self.build_manifest(attr)
            space = CANONICAL_SPACE
            slug = (
                f"{space.dimension_name(attr.dimension_index)}-{space.attribute_name(attr)}"
            ).lower().replace(" ", "_")
            out_dir = self.dir / "manifests" / slug
            path = write_manifest(manifest, st.records_by_id, out_dir)
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            rel_path = str(path.relative_to(self.dir))
            self._append(
                "ManifestExported",
                {
                    "attribute": list(attr.as_tuple()),
                    "log_offset": manifest.log_offset,
                    "prune_set_hash": manifest.prune_set_hash,
                    "manifest_sha256": digest,
                    "entry_count": len(manifest.entries),
                    "path": rel_path,
                },
            )
            doc = manifest.to_json_dict()
            doc["path"] = str(path)
            doc["manifest_sha256"] = digest
            doc["empty"] = manifest.empty
            doc["log_offset_now"] = self.offset
            return doc

    def attribution_config(self) -> AttributionConfig:
        st = self.require_state()
        feats = [
            build_feature(it.design_vector, it.visual_embedding)
            for it in st.catalog.visible_items()
        ]
        if not feats:
            return AttributionConfig(baseline=np.zeros(101))
        return mean_baseline(feats)

    def informed_generate(
        self,
        selection: Sequence[Sequence[int]],
        n: int,
        manifest_attributes: Sequence[Sequence[int]] = (),
        detail: dict[str, str] | None = None,
    ) -> dict:
        with self._lock:
            st = self.require_state()
            if n < 1:
                raise ValidationFailed("n must be >= 1")
            n = min(n, GENERATE_CAP)
            puzzle = PuzzleSelection(tuple((int(d), int(a)) for d, a in selection))
            puzzle.require_complete()
            vector = DesignVector(
                tuple(a for _, a in sorted(puzzle.selection, key=lambda t: t[0]))
            )
            space = CANONICAL_SPACE
            refs = [AttributeId(int(d), int(a)) for d, a in manifest_attributes]
            for r in refs:
                space.validate_attribute(r)
            if detail is None and refs:
                detail = {
                    space.dimension_name(r.dimension_index): space.attribute_name(r)
                    for r in refs
                }
            if detail:
                prompt = render_prompt(vector, PromptStage.INFORMED, detail)
            else:
                prompt = render_prompt(vector, PromptStage.FRAMING)
            items = []
            base = st.next_item
            for i in range(n):
                png = self.backends.generation.generate_garment(vector, prompt, variant=i)
                ref = self.blobs.put(png)
                embedding = self.backends.embedding.embed(vector, ref)
                items.append(
                    DesignItem(
                        item_id=f"i{base + i:04d}",
                        design_vector=vector,
                        image_ref=ref,
                        visual_embedding=tuple(float(x) for x in embedding),
                        origin="Informed",
                        display_rank=-1,
                    )
                )
            self._append(
                "ItemsIngested",
                {"origin": "Informed", "staged": True,
                 "items": [it.as_dict() for it in items]},
            )
            cfg = self.attribution_config()
            out_items = []
            for it in items:
                feature = build_feature(it.design_vector, it.visual_embedding)
                report = attribute_item(st.models, feature, cfg)
                out_items.append(
                    {
                        "item_id": it.item_id,
                        "image_ref": it.image_ref,
                        "prompt": prompt,
                        "attribution": attribution_json(report),
                    }
                )
            return {"items": out_items, "log_offset": self.offset}

    def save_item(self, item_id: str) -> dict:
        with self._lock:
            st = self.require_state()
            if item_id not in st.staged:
                raise UnknownItem(f"item {item_id!r} is not staged for saving")
            self._append(
                "ItemSaved", {"item_id": item_id, "display_rank": st.catalog.next_rank()}
            )
            return self.library_view()

    def attribution_view(self, item_id: str) -> dict:
        st = self.require_state()
        feature = st.item_feature(item_id)
        report = attribute_item(st.models, feature, self.attribution_config())
        doc = attribution_json(report)
        doc["item_id"] = item_id
        doc["log_offset"] = self.offset
        return doc


def _snake(kind: str) -> str:
    out = []
    for i, ch in enumerate(kind):
        if ch.isupper() and i > 0:
            out.append("_")
        out.append(ch.lower())
    return "".join(out)


class GatewayService:
    """Multi-project root: owns the data directory and the project registry."""

    def __init__(
        self,
        data_dir: Path,
        base_seed: int = 0,
        max_rounds: int = DEFAULT_MAX_ROUNDS,
        mode: str = "Mock",
        clock: Callable[[], float] | None = None,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.base_seed = base_seed
        self.max_rounds = max_rounds
        self.mode = mode
        self._clock = clock
        self.projects: dict[str, ProjectService] = {}
        self._lock = threading.Lock()
        projects_dir = self.data_dir / "projects"
        if projects_dir.exists():
            for p in sorted(projects_dir.iterdir()):
                if (p / "events.jsonl").exists():
                    self._open_project(p.name)

    def _open_project(self, project_id: str) -> ProjectService:
        seed = _derived_seed(self.base_seed, project_id)
        svc = ProjectService(
            self.data_dir / "projects" / project_id,
            backends=BackendSuite.mock(seed),
            clock=self._clock,
        )
        self.projects[project_id] = svc
        return svc

    def create_project(
        self,
        seed: int | None = None,
        max_rounds: int | None = None,
        selection_strategy: str = "Entropy",
    ) -> dict:
        with self._lock:
            project_id = f"p{len(self.projects) + 1:04d}"
            svc = self._open_project(project_id)
            svc.create(
                project_id,
                seed=self.base_seed if seed is None else seed,
                max_rounds=self.max_rounds if max_rounds is None else max_rounds,
                mode=self.mode,
                selection_strategy=selection_strategy,
            )
            return {"project_id": project_id, "log_offset": svc.offset}

    def project(self, project_id: str) -> ProjectService:
        try:
            svc = self.projects[project_id]
        except KeyError:
            raise UnknownProject(f"unknown project {project_id!r}") from None
        if svc.state is None:
            raise UnknownProject(f"unknown project {project_id!r}")
        return svc

    def find_session(self, session_id: str) -> ProjectService:
        for svc in self.projects.values():
            if svc.state is not None and session_id in svc.state.sessions:
                return svc
        raise UnknownSession(f"unknown session {session_id!r}")


def replay_project(project_dir: Path, backends: BackendSuite | None = None) -> ProjectService:
    """Rebuild a project purely from its event log."""
    project_dir = Path(project_dir)
    backends = backends or BackendSuite.mock()
    return ProjectService(project_dir, backends=backends)
