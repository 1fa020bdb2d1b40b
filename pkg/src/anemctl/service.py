"""HTTP inference facade: load trained models once, serve recommendations,
threshold what-ifs, and model metadata over JSON. Read-only over immutable
model state; reload requires restart."""
from __future__ import annotations

import hashlib
import logging
from typing import Optional

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from .classify import classify_esa, classify_is
from .domain import (
    BloodPanel,
    Direction,
    Medication,
    OccasionRecord,
    PatientTimeline,
    ValidationError,
)
from .network import ClassProbabilities, Model
from .pipeline import TimelineTooShort, recommend, what_if_threshold

import datetime as dt

logger = logging.getLogger(__name__)


def api_error(category: str, message: str, status: int, **detail) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"category": category, "message": message,
                                 "detail": detail})


class OccasionIn(BaseModel):
    occasion_index: int
    exam_date: dt.date
    hb: float
    mcv: float
    ferritin: Optional[float] = None
    tsat: Optional[float] = None
    esa_direction: str = "STAY"
    esa_dose: float = 0.0
    is_direction: str = "STAY"
    is_active_weeks: int = 0
    esa_basis_lag: Optional[int] = None
    is_basis_lag: Optional[int] = None


class TimelineIn(BaseModel):
    patient_id: str
    occasions: list[OccasionIn] = Field(min_length=1)


class RecommendIn(BaseModel):
    timeline: TimelineIn
    esa_threshold: Optional[float] = None
    is_threshold: Optional[float] = None


class WhatIfIn(BaseModel):
    p_up: float
    p_stay: float
    p_down: Optional[float] = None
    is_p_up: Optional[float] = None
    is_p_stay: Optional[float] = None
    sweep: list[float] = Field(min_length=1)


def _to_timeline(body: TimelineIn) -> PatientTimeline:
    records = []
    for occ in body.occasions:
        records.append(OccasionRecord(
            occasion_index=occ.occasion_index,
            exam_date=occ.exam_date,
            panel=BloodPanel(hb=occ.hb, mcv=occ.mcv,
                             ferritin=occ.ferritin, tsat=occ.tsat),
            esa_direction=Direction(occ.esa_direction),
            is_direction=Direction(occ.is_direction),
            esa_dose=occ.esa_dose,
            is_active_weeks=occ.is_active_weeks,
            esa_basis_lag=occ.esa_basis_lag,
            is_basis_lag=occ.is_basis_lag,
        ))
    return PatientTimeline(patient_id=body.patient_id, occasions=tuple(records))


def create_app(esa_model: Optional[Model] = None,
               is_model: Optional[Model] = None,
               esa_threshold: float = 0.475,
               is_threshold: float = 0.470,
               history_len: int = 4,
               training_manifest: Optional[dict] = None) -> FastAPI:
    app = FastAPI(title="anemctl inference service")
    state = {"esa": esa_model, "is": is_model,
             "thresholds": {Medication.ESA: esa_threshold, Medication.IS: is_threshold},
             "manifest": training_manifest or {}}

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return api_error("bad_request", "request body does not match the schema",
                         400, errors=exc.errors())

    def models_ready() -> bool:
        return state["esa"] is not None and state["is"] is not None

    @app.post("/api/recommend")
    async def post_recommend(body: RecommendIn):
        if not models_ready():
            return api_error("model_unavailable", "no model loaded", 503)
        thresholds = dict(state["thresholds"])
        if body.esa_threshold is not None:
            thresholds[Medication.ESA] = body.esa_threshold
        if body.is_threshold is not None:
            thresholds[Medication.IS] = body.is_threshold
        try:
            timeline = _to_timeline(body.timeline)
        except (ValidationError, ValueError) as exc:
            return api_error("bad_request", str(exc), 400)
        try:
            rec = recommend(state["esa"], state["is"], timeline, thresholds,
                            history_len=history_len)
        except TimelineTooShort as exc:
            return api_error("too_short_timeline", str(exc), 422,
                             got=exc.got, needed=exc.needed)
        except Exception as exc:  # pragma: no cover - defensive
            logger.exception("recommendation failed")
            return api_error("internal", str(exc), 500)
        return rec.to_json_dict()

    @app.post("/api/what-if")
    async def post_what_if(body: WhatIfIn):
        parts = [body.p_up, body.p_stay] + ([body.p_down] if body.p_down is not None else [])
        if abs(sum(parts) - 1.0) > 1e-6:
            return api_error("bad_request",
                             f"ESA probabilities sum to {sum(parts)}, not 1", 400)
        try:
            esa_probs = ClassProbabilities(p_up=body.p_up, p_stay=body.p_stay,
                                           p_down=body.p_down)
        except ValueError as exc:
            return api_error("bad_request", str(exc), 400)
        is_probs = None
        if body.is_p_up is not None and body.is_p_stay is not None:
            if abs(body.is_p_up + body.is_p_stay - 1.0) > 1e-6:
                return api_error("bad_request", "IS probabilities do not sum to 1", 400)
            is_probs = ClassProbabilities(p_up=body.is_p_up, p_stay=body.is_p_stay)
        rows = []
        for t in body.sweep:
            if not 0.0 <= t <= 1.0:
                return api_error("bad_request", f"threshold {t} outside [0, 1]", 400)
            row = {"t": t}
            if esa_probs.p_down is not None:
                row["esa_direction"] = classify_esa(esa_probs, t).value
            else:
                row["esa_direction"] = classify_is(esa_probs, t).value
            if is_probs is not None:
                row["is_direction"] = classify_is(is_probs, t).value
            rows.append(row)
        return {"sweep": rows}

    @app.get("/api/model-info")
    async def model_info():
        if not models_ready():
            return api_error("model_unavailable", "no model loaded", 503)
        esa, is_ = state["esa"], state["is"]
        return {
            "esa_model_version": esa.version_id(),
            "is_model_version": is_.version_id(),
            "config_snapshot_hash": hashlib.sha256(
                (esa.save() + is_.save())).hexdigest()[:16],
            "thresholds": {"esa": state["thresholds"][Medication.ESA],
                           "is": state["thresholds"][Medication.IS]},
            "training_manifest": state["manifest"],
            "history_len": history_len,
        }

    return app
