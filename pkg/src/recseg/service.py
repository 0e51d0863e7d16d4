"""HTTP review service: the selection step as a small versioned API.

Endpoints (all under ``/v1``):

    POST /v1/sessions                     open a session for a recursion
    GET  /v1/sessions/{id}/next           next undecided candidate payload
    POST /v1/sessions/{id}/decisions      submit one accept/reject verdict
    POST /v1/sessions/{id}/close          close and write the summary
    GET  /v1/sessions/{id}/summary        tallies (live or final)

Candidate images and overlays travel base64-encoded inside the payload so a
remote browser needs nothing but this API. Decision bodies accept verdicts
only; any attempt to attach mask data is rejected by schema (the reviewer
cannot edit annotations, only pick them).
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel, ConfigDict
from PIL import Image

from .datamodel import ClassTaxonomy
from .imgio import _PALETTE, load_image, load_mask
from .review import (
    ConcurrentSessionError,
    DecisionConflictError,
    MissingCandidatesError,
    ReviewDecision,
    ReviewStore,
    SessionClosedError,
    UnknownSampleError,
    UnknownSessionError,
)


class OpenSessionBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    recursion_index: int = 0


class DecisionBody(BaseModel):
    model_config = ConfigDict(extra="forbid")
    sample_id: str
    verdict: str
    reviewer: str = "anonymous"
    note: str | None = None


def _png_base64(img: Image.Image) -> str:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _image_payload(path: str) -> str:
    arr = load_image(path)
    return _png_base64(Image.fromarray(np.round(arr * 255).astype(np.uint8), mode="L"))


def _overlay_payload(mask_path: Path) -> str:
    mask = load_mask(mask_path)
    h, w = mask.shape
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    for cls in np.unique(mask):
        if cls == 0:
            continue
        color = _PALETTE[int(cls) % len(_PALETTE)]
        rgba[mask == cls] = (*color, 255)
    return _png_base64(Image.fromarray(rgba, mode="RGBA"))


def _experiment_taxonomy(experiment_dir: Path) -> ClassTaxonomy:
    meta = experiment_dir / "r0" / "checkpoint.meta.json"
    if meta.exists():
        data = json.loads(meta.read_text(encoding="utf-8"))
        if "taxonomy" in data:
            return ClassTaxonomy.from_json(data["taxonomy"])
    return ClassTaxonomy.default()


def create_app(experiment_dir, token: str | None = None) -> FastAPI:
    experiment_dir = Path(experiment_dir)
    store = ReviewStore(experiment_dir)
    taxonomy = _experiment_taxonomy(experiment_dir)
    app = FastAPI(title="recseg review service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    def check_token(authorization: str | None = Header(default=None)):
        if token and authorization != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid token")

    def translate(exc: Exception) -> HTTPException:
        if isinstance(exc, (UnknownSessionError, MissingCandidatesError, UnknownSampleError)):
            return HTTPException(status_code=404, detail=str(exc))
        if isinstance(exc, (SessionClosedError, ConcurrentSessionError, DecisionConflictError)):
            return HTTPException(status_code=409, detail=str(exc))
        return HTTPException(status_code=500, detail=str(exc))

    @app.post("/v1/sessions", dependencies=[Depends(check_token)])
    def open_session(body: OpenSessionBody):
        try:
            session = store.open_session(body.recursion_index)
        except Exception as exc:
            raise translate(exc) from exc
        return {
            "session_id": session.session_id,
            "recursion_index": session.recursion_index,
            "queue_size": len(session.queue),
            "classes": taxonomy.to_json(),
        }

    @app.get("/v1/sessions/{session_id}/next", dependencies=[Depends(check_token)])
    def fetch_next(session_id: str):
        try:
            meta, pos, total = store.fetch_next(session_id)
        except Exception as exc:
            raise translate(exc) from exc
        if meta is None:
            return {"done": True, "queue_total": total}
        session = store.get_session(session_id)
        cand_dir = store.candidates_dir(session.recursion_index)
        label = meta.get("image_label")
        payload = {
            "done": False,
            "sample_id": meta["sample_id"],
            "queue_position": pos,
            "queue_total": total,
            "recursion_index": session.recursion_index,
            "image_label": label,
            "image_label_name": taxonomy.name_of(label) if label is not None else None,
            "consistent_with_image_label": meta.get("consistent_with_image_label"),
            "confidence_mean": meta.get("confidence_mean"),
            "confidence_min": meta.get("confidence_min"),
            "foreground_area": meta.get("foreground_area"),
            "overlay_png_base64": _overlay_payload(cand_dir / f"{meta['sample_id']}.png"),
        }
        if meta.get("image_path") and Path(meta["image_path"]).exists():
            payload["image_png_base64"] = _image_payload(meta["image_path"])
        else:
            payload["image_png_base64"] = None
        return payload

    @app.post("/v1/sessions/{session_id}/decisions", dependencies=[Depends(check_token)])
    def submit_decision(session_id: str, body: DecisionBody):
        try:
            decision = ReviewDecision(
                sample_id=body.sample_id,
                verdict=body.verdict,
                reviewer=body.reviewer,
                note=body.note,
            )
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        try:
            return store.submit_decision(session_id, decision)
        except Exception as exc:
            raise translate(exc) from exc

    @app.post("/v1/sessions/{session_id}/close", dependencies=[Depends(check_token)])
    def close_session(session_id: str):
        try:
            return store.close_session(session_id)
        except Exception as exc:
            raise translate(exc) from exc

    @app.get("/v1/sessions/{session_id}/summary", dependencies=[Depends(check_token)])
    def summary(session_id: str):
        try:
            return store.summary(session_id)
        except Exception as exc:
            raise translate(exc) from exc

    return app
