"""FastAPI application exposing the inference engine."""
from __future__ import annotations

from fastapi import FastAPI, HTTPException

from ..segkit.prompt import PromptError
from .engine import Engine
from .schemas import (HealthResponse, ImageIn, ProfileResponse, ProposalsResponse, SegAnyRequest,
                      SegAnyResponse, SegEveryRequest, SegEveryResponse)


def create_app(engine: Engine) -> FastAPI:
    app = FastAPI(title="litesam", version="0.1.0")

    def guarded(fn, *args):
        try:
            return fn(*args)
        except (PromptError, ValueError) as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health():
        return engine.health()

    @app.post("/segany", response_model=SegAnyResponse)
    def segany(req: SegAnyRequest):
        return guarded(engine.segany, req)

    @app.post("/segevery", response_model=SegEveryResponse)
    def segevery(req: SegEveryRequest):
        return guarded(engine.segevery, req)

    @app.post("/proposals", response_model=ProposalsResponse)
    def proposals(req: ImageIn):
        return guarded(engine.proposals, req)

    @app.get("/profile", response_model=ProfileResponse)
    def profile():
        return engine.profile()

    return app
