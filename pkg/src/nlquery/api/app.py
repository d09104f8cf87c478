"""HTTP surface over the service core.

Every error body has the shape {error_code, message}; raw internals never
leak. Ask is synchronous by design: desk-scale latency is seconds, and the
409 in-flight guard replaces a job queue.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from ..service import AppState, ServiceError
from .models import (
    AnswerResponse,
    AskRequest,
    DatabaseModel,
    DatabasesResponse,
    RuleCreateRequest,
    RuleModel,
    RulesResponse,
    ScanRequest,
    ScanSummaryResponse,
    SessionCreatedResponse,
    SessionCreateRequest,
    SessionDetailResponse,
    TraceResponse,
    TurnModel,
)


def _error(status_code: int, error_code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status_code, content={"error_code": error_code, "message": message})


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="nlquery", version="0.1.0")
    app.state.engine = state

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    auth_env = state.config.auth_token_env_var

    @app.middleware("http")
    async def bearer_auth(request: Request, call_next):
        if auth_env:
            expected = os.environ.get(auth_env, "")
            supplied = request.headers.get("authorization", "")
            if not expected or supplied != f"Bearer {expected}":
                return _error(401, "unauthorized", "missing or invalid bearer token")
        return await call_next(request)

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return _error(exc.status_code, exc.error_code, str(exc))

    @app.exception_handler(RequestValidationError)
    async def validation_error_handler(request: Request, exc: RequestValidationError):
        return _error(422, "validation_error", str(exc.errors()[:1]))

    @app.exception_handler(Exception)
    async def unhandled_error_handler(request: Request, exc: Exception):
        return _error(500, "internal_error", f"{type(exc).__name__}: {exc}")

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/databases", response_model=DatabasesResponse)
    def list_databases():
        return DatabasesResponse(
            databases=[DatabaseModel(name=p.name, kind=p.kind) for p in state.list_databases()]
        )

    @app.post("/sessions", response_model=SessionCreatedResponse, status_code=201)
    def create_session(body: SessionCreateRequest):
        session = state.create_session(body.database)
        return SessionCreatedResponse(session_id=session.session_id, database=session.database)

    @app.get("/sessions/{session_id}", response_model=SessionDetailResponse)
    def get_session(session_id: str):
        session = state.get_session(session_id)
        return SessionDetailResponse(
            session_id=session.session_id,
            database=session.database,
            turns=[
                TurnModel(question=q, answer=AnswerResponse(**envelope.to_dict()))
                for q, envelope in session.turns
            ],
            session_rules=[RuleModel(**r.to_dict()) for r in session.session_rules],
        )

    @app.post("/sessions/{session_id}/ask", response_model=AnswerResponse)
    def ask(session_id: str, body: AskRequest):
        envelope, _ = state.ask(session_id, body.question)
        return AnswerResponse(**envelope.to_dict())

    @app.get("/traces/{trace_id}", response_model=TraceResponse)
    def get_trace(trace_id: str):
        return TraceResponse(**state.get_trace(trace_id))

    @app.post("/rules", response_model=RuleModel, status_code=201)
    def add_rule(body: RuleCreateRequest):
        rule = state.add_rule(body.text, scope=body.scope, session_id=body.session_id)
        return RuleModel(**rule.to_dict())

    @app.get("/rules", response_model=RulesResponse)
    def list_rules():
        return RulesResponse(rules=[RuleModel(**r.to_dict()) for r in state.list_rules()])

    @app.delete("/rules/{rule_id}", response_model=RuleModel)
    def delete_rule(rule_id: str):
        rule = state.delete_rule(rule_id)
        return RuleModel(**rule.to_dict())

    @app.post("/scan", response_model=ScanSummaryResponse)
    def scan(body: ScanRequest):
        snapshot = state.scan_database(body.database)
        return ScanSummaryResponse(
            database=body.database,
            tables=[t.name for t in snapshot.tables],
            table_count=len(snapshot.tables),
            scanned_at=snapshot.scanned_at,
        )

    @app.get("/schema/{database}")
    def get_schema(database: str):
        return state.get_snapshot(database).to_dict()

    return app
