"""JSON-over-HTTP surface for the co-design workflow.

Thin request/response mapping over :class:`GatewayService`; every engine
error arrives as a structured body ``{code, message, details}`` with the
status code declared on the error type. Read endpoints are side-effect-free
and report the log offset they served.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from ..elicitation import Gender, UserProfile
from ..errors import CodesignError
from .service import DEFAULT_MAX_ROUNDS, GatewayService, parse_attribute


class CreateProjectBody(BaseModel):
    seed: Optional[int] = None
    max_rounds: Optional[int] = None
    selection_strategy: str = "Entropy"


class FramingBody(BaseModel):
    garment_type: str
    scene: str
    principle: str
    strictness: float = Field(ge=0.0, le=1.0)
    include: list[str] = Field(default_factory=list)
    exclude: list[str] = Field(default_factory=list)


class GenerateBody(BaseModel):
    n: int = Field(ge=1)


class CurateOp(BaseModel):
    op: str
    item_id: str
    new_rank: Optional[int] = None


class CurateBody(BaseModel):
    ops: list[CurateOp]
    expected_offset: Optional[int] = None


class SessionBody(BaseModel):
    user_id: str
    gender: str = "Unspecified"
    height_cm: float = 170.0
    weight_kg: float = 65.0


class RegionBody(BaseModel):
    x_min: int
    y_min: int
    x_max: int
    y_max: int
    image_w: int
    image_h: int


class InteractionBody(BaseModel):
    item_id: str
    polarity: str
    region: RegionBody
    confirmed_dimensions: list[int] = Field(default_factory=list)
    comment: Optional[str] = None
    dedup_key: Optional[str] = None


class VoteBody(BaseModel):
    item_id: str
    polarity: str
    comment: Optional[str] = None
    dedup_key: Optional[str] = None


class PruneBody(BaseModel):
    node_type: str
    node_id: str
    action: str = "prune"
    expected_offset: Optional[int] = None


class InformedBody(BaseModel):
    selection: list[list[int]]
    n: int = Field(ge=1)
    manifest_attributes: list[list[int]] = Field(default_factory=list)
    detail: Optional[dict[str, str]] = None


def create_app(
    data_dir: Path | str,
    base_seed: int = 0,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
    mode: str = "Mock",
) -> FastAPI:
    gateway = GatewayService(
        Path(data_dir), base_seed=base_seed, max_rounds=max_rounds, mode=mode
    )
    app = FastAPI(title="codesign gateway")
    app.state.gateway = gateway

    @app.exception_handler(CodesignError)
    async def engine_error(_: Request, exc: CodesignError) -> JSONResponse:
        return JSONResponse(status_code=exc.http_status, content=exc.to_body())

    @app.post("/projects")
    def create_project(body: CreateProjectBody) -> dict:
        return gateway.create_project(
            seed=body.seed,
            max_rounds=body.max_rounds,
            selection_strategy=body.selection_strategy,
        )

    @app.post("/projects/{project_id}/framing")
    def apply_framing(project_id: str, body: FramingBody) -> dict:
        return gateway.project(project_id).apply_framing(
            body.garment_type, body.scene, body.principle, body.strictness,
            include=body.include, exclude=body.exclude,
        )

    @app.get("/projects/{project_id}/framing")
    def get_framing(project_id: str) -> dict:
        return gateway.project(project_id).framing_view()

    @app.post("/projects/{project_id}/library/generate")
    def generate_library(project_id: str, body: GenerateBody) -> dict:
        return gateway.project(project_id).generate_library(body.n)

    @app.get("/projects/{project_id}/library")
    def get_library(project_id: str) -> dict:
        return gateway.project(project_id).library_view()

    @app.patch("/projects/{project_id}/library")
    def curate(project_id: str, body: CurateBody) -> dict:
        ops = [op.model_dump(exclude_none=True) for op in body.ops]
        return gateway.project(project_id).curate(ops, expected_offset=body.expected_offset)

    @app.post("/projects/{project_id}/sessions")
    def open_session(project_id: str, body: SessionBody) -> dict:
        profile = UserProfile(
            user_id=body.user_id,
            gender=Gender(body.gender),
            height_cm=body.height_cm,
            weight_kg=body.weight_kg,
        )
        return gateway.project(project_id).open_session(profile)

    @app.get("/sessions/{session_id}/round")
    def get_round(session_id: str) -> dict:
        return gateway.find_session(session_id).round_view(session_id)

    @app.post("/sessions/{session_id}/interactions")
    def submit_interaction(session_id: str, body: InteractionBody) -> dict:
        return gateway.find_session(session_id).submit_interaction(
            session_id,
            item_id=body.item_id,
            polarity=body.polarity,
            region=body.region.model_dump(),
            confirmed_dimensions=body.confirmed_dimensions,
            comment=body.comment,
            dedup_key=body.dedup_key,
        )

    @app.post("/sessions/{session_id}/votes")
    def submit_vote(session_id: str, body: VoteBody) -> dict:
        return gateway.find_session(session_id).submit_vote(
            session_id,
            item_id=body.item_id,
            polarity=body.polarity,
            comment=body.comment,
            dedup_key=body.dedup_key,
        )

    @app.get("/projects/{project_id}/consensus")
    def get_consensus(project_id: str) -> dict:
        return gateway.project(project_id).consensus_view()

    @app.get("/projects/{project_id}/palette")
    def get_palette(project_id: str) -> dict:
        return gateway.project(project_id).palette_view()

    @app.get("/projects/{project_id}/tree/{attribute}")
    def get_tree(project_id: str, attribute: str) -> dict:
        return gateway.project(project_id).tree_view(parse_attribute(attribute))

    @app.post("/projects/{project_id}/tree/{attribute}/prune")
    def prune(project_id: str, attribute: str, body: PruneBody) -> dict:
        return gateway.project(project_id).prune(
            parse_attribute(attribute),
            node_type=body.node_type,
            node_id=body.node_id,
            action=body.action,
            expected_offset=body.expected_offset,
        )

    @app.post("/projects/{project_id}/manifest/{attribute}")
    def export_manifest(project_id: str, attribute: str) -> dict:
        return gateway.project(project_id).export_manifest_cmd(parse_attribute(attribute))

    @app.post("/projects/{project_id}/informed")
    def informed(project_id: str, body: InformedBody) -> dict:
        return gateway.project(project_id).informed_generate(
            selection=body.selection,
            n=body.n,
            manifest_attributes=body.manifest_attributes,
            detail=body.detail,
        )

    @app.post("/projects/{project_id}/items/{item_id}/save")
    def save_item(project_id: str, item_id: str) -> dict:
        return gateway.project(project_id).save_item(item_id)

    @app.get("/projects/{project_id}/items/{item_id}/attribution")
    def get_attribution(project_id: str, item_id: str) -> dict:
        return gateway.project(project_id).attribution_view(item_id)

    return app
