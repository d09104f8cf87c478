"""Pydantic request/response models for the HTTP API.

Field names and shapes are pinned by docs/api_schema.json in the repo root;
the web console and the benchmark tooling both consume that contract.
"""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel


class ErrorBody(BaseModel):
    error_code: str
    message: str


class SessionCreateRequest(BaseModel):
    database: str


class SessionCreatedResponse(BaseModel):
    session_id: str
    database: str


class AskRequest(BaseModel):
    question: str = ""


class ColumnModel(BaseModel):
    name: str
    declared_type: str = ""


class TableModel(BaseModel):
    columns: list[ColumnModel]
    rows: list[list[Any]]
    truncated: bool = False


class ChartModel(BaseModel):
    kind: str
    x_column: str
    y_column: str


class AnswerResponse(BaseModel):
    text: str
    table: Optional[TableModel] = None
    chart: Optional[ChartModel] = None
    sql: Optional[str] = None
    trace_id: str


class OutcomeModel(BaseModel):
    status: str
    detail: str = ""
    sample_rows: Optional[TableModel] = None


class CandidateModel(BaseModel):
    iteration: int
    sql: str
    outcome: OutcomeModel


class TraceResponse(BaseModel):
    question: str
    intent: str
    intent_source: str
    context: dict
    candidates: list[CandidateModel]
    final_status: str
    timings: dict


class TurnModel(BaseModel):
    question: str
    answer: AnswerResponse


class SessionDetailResponse(BaseModel):
    session_id: str
    database: str
    turns: list[TurnModel]
    session_rules: list[RuleModel]


class RuleCreateRequest(BaseModel):
    text: str = ""
    scope: str = "global"
    session_id: Optional[str] = None


class RuleModel(BaseModel):
    rule_id: str
    text: str
    tags: list[str] = []
    created_at: str = ""
    updated_at: str = ""
    active: bool = True


class RulesResponse(BaseModel):
    rules: list[RuleModel]


class ScanRequest(BaseModel):
    database: str


class ScanSummaryResponse(BaseModel):
    database: str
    tables: list[str]
    table_count: int
    scanned_at: str


class DatabaseModel(BaseModel):
    name: str
    kind: str


class DatabasesResponse(BaseModel):
    databases: list[DatabaseModel]


SessionDetailResponse.model_rebuild()
