"""HTTP wrapper around a loaded :class:`tryon.pipeline.Pipeline`.

Run with ``tryon serve`` or ``uvicorn tryon.service:app_from_env --factory``;
the latter reads checkpoint paths from ``TRYON_TOCG``, ``TRYON_TOIG`` and
``TRYON_CALIBRATION``.
"""

from __future__ import annotations

import os
import threading

from fastapi import FastAPI, HTTPException

from tryon.condgen import ConfigError
from tryon.data import Batch
from tryon.pipeline import Pipeline, swap_cloth
from tryon.rejection import gate
from tryon.schemas import (
    HealthResponse, InferRequest, InferResponse, ScoreItem, ScoreRequest, ScoreResponse,
    TensorPayload,
)


def create_app(pipeline: Pipeline) -> FastAPI:
    app = FastAPI(title="tryon", version="0.1.0")
    # torch modules are not re-entrant across threads during forward passes
    lock = threading.Lock()

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(status="ok", image_generator=pipeline.toig is not None,
                              calibrated=pipeline.calibration is not None,
                              cond_size=list(pipeline.cfg.cond_size),
                              out_size=list(pipeline.cfg.out_size))

    @app.post("/infer", response_model=InferResponse)
    def infer(req: InferRequest):
        try:
            rec = req.person.to_record()
            if req.cloth is not None:
                rec = swap_cloth(rec, req.cloth.to_record())
            batch = Batch.stack([rec])
        except (ValueError, RuntimeError) as e:
            raise HTTPException(422, str(e))
        cal = pipeline.calibration if req.use_calibration else None
        try:
            with lock:
                res = pipeline.infer(batch, calibration=cal, threshold=req.threshold)[0]
        except ConfigError as e:
            raise HTTPException(422, str(e))
        return InferResponse(
            pair_id=rec.pair_id, accepted=res.accepted, p_accept=res.p_accept,
            d_score=res.d_score,
            image=TensorPayload.from_tensor(res.image) if res.image is not None else None,
            warped_clothes=TensorPayload.from_tensor(res.warped_clothes),
            seg_labels=res.seg.argmax(0).tolist(),
        )

    @app.post("/score", response_model=ScoreResponse)
    def score(req: ScoreRequest):
        try:
            recs = [r.to_record() for r in req.records]
            batch = Batch.stack(recs)
        except (ValueError, RuntimeError) as e:
            raise HTTPException(422, str(e))
        with lock:
            d = pipeline.d_scores(batch).tolist()
        cal = pipeline.calibration
        items = []
        for rec, dk in zip(recs, d):
            if cal is None:
                items.append(ScoreItem(pair_id=rec.pair_id, d_score=dk))
            else:
                g = gate(dk, cal, req.threshold)
                items.append(ScoreItem(pair_id=rec.pair_id, d_score=dk, p_accept=g.p,
                                       accepted=g.accepted))
        tau = None
        if cal is not None:
            tau = cal.threshold if req.threshold is None else req.threshold
        return ScoreResponse(items=items, L=cal.L if cal else None, threshold=tau)

    return app


def app_from_env() -> FastAPI:
    tocg = os.environ.get("TRYON_TOCG")
    if not tocg:
        raise RuntimeError("set TRYON_TOCG to a condition-generator checkpoint")
    return create_app(Pipeline.from_checkpoints(
        tocg, os.environ.get("TRYON_TOIG") or None, os.environ.get("TRYON_CALIBRATION") or None))
