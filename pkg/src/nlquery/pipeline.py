"""The five-stage question-answering pipeline.

A question is classified (structure vs. data), context is retrieved from the
vector index, SQL is generated, validated in two steps (guard + engine
dry-run, then LLM introspection), refined on failure up to a bounded number
of iterations, executed in full, and finally narrated as a natural-language
answer. Every run leaves a complete PipelineTrace: which SQL was tried, what
failed, and in which order the checks ran.
"""

from __future__ import annotations

import re
import time
import uuid
from dataclasses import dataclass, field

from . import sql_guard
from .db_connector import Connection, ExecError, ResultTable, execute
from .embedding_index import BusinessRule, SearchHit, VectorIndex, rule_chunk
from .llm_gateway import (
    BackendUnavailable,
    CompletionRequest,
    ExtractionError,
    Gateway,
    extract_sql,
    extract_verdict,
    render_template,
)
from .schema_scanner import SchemaSnapshot, render_chunks

STRUCTURE_QUERY = "structure_query"
DATA_QUERY = "data_query"

PASS = "pass"
GUARD_FAIL = "guard_fail"
EXEC_FAIL = "exec_fail"
SEMANTIC_FAIL = "semantic_fail"

ANSWERED = "answered"
EXHAUSTED = "exhausted"
STRUCTURE_ANSWERED = "structure_answered"

TRUNCATION_MARKER = "\n[context truncated]"

_STRUCTURE_WORDS = {
    "table", "tables", "column", "columns", "schema", "structure",
    "field", "fields", "key", "keys", "describe", "database",
}

_CHART_RE = re.compile(
    r"^\s*CHART\s*:\s*(bar|line)\s*,\s*x\s*=\s*([^,\s]+)\s*,\s*y\s*=\s*([^,\s]+)\s*$",
    re.IGNORECASE | re.MULTILINE,
)


class EmptyIndex(Exception):
    """The index holds no table_doc chunks; scan the database first."""


class PreconditionViolation(Exception):
    pass


class EmptyRule(Exception):
    pass


@dataclass
class PipelineConfig:
    max_iterations: int = 3
    k_tables: int = 5
    k_rules: int = 5
    char_budget: int = 8000
    probe_rows: int = 10
    row_cap_full: int = 1000
    rows_in_prompt: int = 50
    max_history: int = 4
    dialect: str = "SQLite"
    max_output_tokens: int = 1024

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.k_tables < 0 or self.k_rules < 0:
            raise ValueError("k_tables and k_rules must be >= 0")
        if self.char_budget < 1:
            raise ValueError("char_budget must be >= 1")
        for name in ("probe_rows", "row_cap_full", "rows_in_prompt", "max_output_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_history < 0:
            raise ValueError("max_history must be >= 0")


@dataclass
class ContextBundle:
    schema_hits: list[SearchHit]
    rule_hits: list[SearchHit]
    rendered_schema: str
    rendered_rules: str
    char_budget_used: int

    def summary(self) -> dict:
        return {
            "schema": [
                {"id": h.chunk.id, "source_ref": h.chunk.source_ref, "score": h.score}
                for h in self.schema_hits
            ],
            "rules": [
                {"id": h.chunk.id, "source_ref": h.chunk.source_ref, "score": h.score}
                for h in self.rule_hits
            ],
            "char_budget_used": self.char_budget_used,
        }


@dataclass
class ValidationOutcome:
    status: str  # pass | guard_fail | exec_fail | semantic_fail
    detail: str = ""
    sample_rows: ResultTable | None = None

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "detail": self.detail,
            "sample_rows": self.sample_rows.to_dict() if self.sample_rows else None,
        }


@dataclass
class SqlCandidate:
    iteration: int
    sql: str
    outcome: ValidationOutcome

    def to_dict(self) -> dict:
        return {"iteration": self.iteration, "sql": self.sql, "outcome": self.outcome.to_dict()}


@dataclass
class ChartSpec:
    kind: str  # bar | line
    x_column: str
    y_column: str

    def to_dict(self) -> dict:
        return {"kind": self.kind, "x_column": self.x_column, "y_column": self.y_column}

    @classmethod
    def from_dict(cls, data: dict) -> "ChartSpec":
        return cls(kind=data["kind"], x_column=data["x_column"], y_column=data["y_column"])


@dataclass
class AnswerEnvelope:
    text: str
    table: ResultTable | None = None
    chart: ChartSpec | None = None
    sql: str | None = None
    trace_id: str = ""

    def to_dict(self) -> dict:
        return {
            "text": self.text,
            "table": self.table.to_dict() if self.table else None,
            "chart": self.chart.to_dict() if self.chart else None,
            "sql": self.sql,
            "trace_id": self.trace_id,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AnswerEnvelope":
        return cls(
            text=data["text"],
            table=ResultTable.from_dict(data["table"]) if data.get("table") else None,
            chart=ChartSpec.from_dict(data["chart"]) if data.get("chart") else None,
            sql=data.get("sql"),
            trace_id=data.get("trace_id", ""),
        )


@dataclass
class PipelineTrace:
    question: str
    intent: str
    intent_source: str  # model | fallback
    context: dict
    candidates: list[SqlCandidate]
    final_status: str
    timings: dict

    def to_dict(self) -> dict:
        return {
            "question": self.question,
            "intent": self.intent,
            "intent_source": self.intent_source,
            "context": self.context,
            "candidates": [c.to_dict() for c in self.candidates],
            "final_status": self.final_status,
            "timings": self.timings,
        }


@dataclass
class Session:
    """One conversation against one database. Turns are append-only."""

    session_id: str
    database: str
    turns: list = field(default_factory=list)  # (question, AnswerEnvelope)
    session_rules: list[BusinessRule] = field(default_factory=list)


@dataclass
class PipelineDeps:
    """Everything one ask needs: an open connection, the database's index and
    snapshot, the completion gateway, and the tuning knobs."""

    conn: Connection
    index: VectorIndex
    snapshot: SchemaSnapshot
    gateway: Gateway
    config: PipelineConfig = field(default_factory=PipelineConfig)


def render_table_text(table: ResultTable, max_rows: int | None = None) -> str:
    """Rows as aligned monospace text for prompts, with a truncation note
    when rows are held back."""
    names = table.column_names
    shown = table.rows if max_rows is None else table.rows[:max_rows]
    cells = [[_cell_text(v) for v in row] for row in shown]
    if not names:
        return "(no rows)"
    widths = [len(n) for n in names]
    for row in cells:
        for i, text in enumerate(row):
            widths[i] = max(widths[i], len(text))
    lines = [" | ".join(n.ljust(widths[i]) for i, n in enumerate(names))]
    lines.append("-+-".join("-" * w for w in widths))
    for row in cells:
        lines.append(" | ".join(text.ljust(widths[i]) for i, text in enumerate(row)))
    if not cells:
        lines.append("(no rows)")
    held_back = len(table.rows) - len(shown)
    if held_back > 0 or table.truncated:
        suffix = "+" if table.truncated else ""
        lines.append(f"... showing first {len(shown)} of {len(table.rows)}{suffix} rows")
    return "\n".join(lines)


def _cell_text(value) -> str:
    if value is None:
        return "NULL"
    return str(value)


def render_history(session: Session, max_history: int) -> str:
    """The last turns as prompt text; answers are clipped to keep prompts
    bounded."""
    if max_history <= 0 or not session.turns:
        return "(no previous turns)"
    parts = []
    for question, envelope in session.turns[-max_history:]:
        answer = envelope.text if envelope else ""
        if len(answer) > 400:
            answer = answer[:400] + "..."
        parts.append(f"Q: {question}\nA: {answer}")
    return "\n\n".join(parts)


def classify_intent(question: str, session: Session, gateway: Gateway,
                    config: PipelineConfig | None = None) -> tuple[str, str]:
    """Classify the question as structure_query or data_query.

    The model is asked for a one-word answer; anything unparseable falls back
    to a vocabulary heuristic, so classification is total. Returns
    (intent, source) where source is "model" or "fallback".
    """
    if not question:
        raise ValueError("question must be non-empty")
    config = config or PipelineConfig()
    prompt = render_template(
        "classify_intent",
        {"question": question, "history": render_history(session, config.max_history)},
    )
    try:
        completion = gateway.complete(
            CompletionRequest("classify_intent", prompt, max_output_tokens=8)
        )
        words = set(re.findall(r"[A-Z]+", completion.text.upper()))
        has_structure = "STRUCTURE" in words
        has_data = "DATA" in words
        if has_structure != has_data:
            return (STRUCTURE_QUERY if has_structure else DATA_QUERY, "model")
    except BackendUnavailable:
        pass
    question_words = set(re.findall(r"[a-z]+", question.lower()))
    if question_words & _STRUCTURE_WORDS:
        return (STRUCTURE_QUERY, "fallback")
    return (DATA_QUERY, "fallback")


def build_context(
    question: str,
    index: VectorIndex,
    session_rules: list[BusinessRule] | None = None,
    k_tables: int = 5,
    k_rules: int = 5,
    char_budget: int = 8000,
) -> ContextBundle:
    """Retrieve the context for SQL generation.

    Session rules come first and are never dropped (they do count against the
    budget). The best-scoring schema chunk is always included, truncated with
    a marker if it alone would blow the budget. Remaining schema and rule
    hits are appended in score order until the budget runs out.
    """
    if not index.has_kind("table_doc"):
        raise EmptyIndex("no table_doc chunks in the index; scan the database first")

    schema_hits = index.search(question, k_tables, kind_filter="table_doc") if k_tables > 0 else []
    rule_hits = index.search(question, k_rules, kind_filter="rule") if k_rules > 0 else []

    joiner = "\n\n"
    schema_parts: list[str] = []
    rule_parts: list[str] = []
    used = 0

    def cost(parts: list[str], text: str) -> int:
        return len(text) + (len(joiner) if parts else 0)

    for rule in session_rules or []:
        used += cost(rule_parts, rule.text)
        rule_parts.append(rule.text)

    included_schema: list[SearchHit] = []
    included_rules: list[SearchHit] = []

    if schema_hits:
        top = schema_hits[0]
        text = top.chunk.text
        add = cost(schema_parts, text)
        if used + add > char_budget:
            room = max(0, char_budget - used - len(TRUNCATION_MARKER))
            text = text[:room] + TRUNCATION_MARKER
            add = cost(schema_parts, text)
        used += add
        schema_parts.append(text)
        included_schema.append(top)

    remaining = sorted(
        [("schema", h) for h in schema_hits[1:]] + [("rule", h) for h in rule_hits],
        key=lambda pair: (-pair[1].score, pair[1].chunk.id),
    )
    for kind, hit in remaining:
        parts = schema_parts if kind == "schema" else rule_parts
        add = cost(parts, hit.chunk.text)
        if used + add > char_budget:
            break
        used += add
        parts.append(hit.chunk.text)
        if kind == "schema":
            included_schema.append(hit)
        else:
            included_rules.append(hit)

    included_schema.sort(key=lambda h: (-h.score, h.chunk.id))
    included_rules.sort(key=lambda h: (-h.score, h.chunk.id))
    return ContextBundle(
        schema_hits=included_schema,
        rule_hits=included_rules,
        rendered_schema=joiner.join(schema_parts),
        rendered_rules=joiner.join(rule_parts),
        char_budget_used=used,
    )


def _rules_text(bundle: ContextBundle) -> str:
    return bundle.rendered_rules if bundle.rendered_rules else "(none)"


def generate_sql(
    question: str,
    bundle: ContextBundle,
    gateway: Gateway,
    config: PipelineConfig | None = None,
    history: str = "(no previous turns)",
) -> str:
    """Render the generation prompt, call the model, and extract one SQL
    statement. Raises ExtractionError (carrying the raw model text) when no
    statement can be pulled out."""
    config = config or PipelineConfig()
    prompt = render_template(
        "generate_sql",
        {
            "question": question,
            "schema": bundle.rendered_schema,
            "rules": _rules_text(bundle),
            "history": history,
            "dialect": config.dialect,
        },
    )
    completion = gateway.complete(
        CompletionRequest("generate_sql", prompt, max_output_tokens=config.max_output_tokens)
    )
    return extract_sql(completion.text)


def validate(
    candidate_sql: str,
    question: str,
    bundle: ContextBundle,
    conn: Connection,
    gateway: Gateway,
    config: PipelineConfig | None = None,
) -> ValidationOutcome:
    """Two-step validation, strictly in order: guard check, engine dry-run,
    then LLM introspection. Every failure is an outcome, never an exception;
    no SQL reaches the engine without a guard ok."""
    config = config or PipelineConfig()
    verdict = sql_guard.guard_check(candidate_sql)
    if not verdict.ok:
        return ValidationOutcome(status=GUARD_FAIL, detail=f"{verdict.status}: {verdict.detail}")

    result = sql_guard.dry_run(conn, candidate_sql, n=config.probe_rows)
    if isinstance(result, ExecError):
        return ValidationOutcome(status=EXEC_FAIL, detail=result.message)

    prompt = render_template(
        "introspect",
        {
            "question": question,
            "sql": candidate_sql,
            "sample_rows": render_table_text(result),
            "rules": _rules_text(bundle),
        },
    )
    try:
        completion = gateway.complete(
            CompletionRequest("introspect", prompt, max_output_tokens=config.max_output_tokens)
        )
    except BackendUnavailable as exc:
        return ValidationOutcome(status=SEMANTIC_FAIL, detail=f"introspection unavailable: {exc}")
    verdict_parsed = extract_verdict(completion.text)
    if not verdict_parsed.passed:
        return ValidationOutcome(status=SEMANTIC_FAIL, detail=verdict_parsed.critique or "introspection failed")
    return ValidationOutcome(status=PASS, detail="", sample_rows=result)


def refine(
    prior: SqlCandidate,
    question: str,
    bundle: ContextBundle,
    gateway: Gateway,
    config: PipelineConfig | None = None,
) -> str:
    """Ask the model to fix a failed candidate. The prior SQL and the failure
    detail go into the prompt verbatim."""
    if prior.outcome.status == PASS:
        raise PreconditionViolation("refine called on a passing candidate")
    config = config or PipelineConfig()
    prompt = render_template(
        "refine_sql",
        {
            "question": question,
            "schema": bundle.rendered_schema,
            "rules": _rules_text(bundle),
            "sql": prior.sql,
            "error": prior.outcome.detail,
            "dialect": config.dialect,
        },
    )
    completion = gateway.complete(
        CompletionRequest("refine_sql", prompt, max_output_tokens=config.max_output_tokens)
    )
    return extract_sql(completion.text)


def _parse_chart_directive(text: str, table: ResultTable | None) -> tuple[str, ChartSpec | None]:
    """Strip well-formed CHART directive lines from the answer text and turn
    the first one naming real columns into a ChartSpec. Malformed directives
    are left alone and ignored."""
    chart: ChartSpec | None = None
    columns = set(table.column_names) if table else set()

    def consume(match: re.Match) -> str:
        nonlocal chart
        kind, x, y = match.group(1).lower(), match.group(2), match.group(3)
        if chart is None and x in columns and y in columns:
            chart = ChartSpec(kind=kind, x_column=x, y_column=y)
        return ""

    stripped = _CHART_RE.sub(consume, text)
    stripped = re.sub(r"\n{3,}", "\n\n", stripped).strip()
    return stripped, chart


def answer_data(
    question: str,
    sql: str,
    conn: Connection,
    gateway: Gateway,
    config: PipelineConfig | None = None,
) -> tuple[AnswerEnvelope, bool]:
    """Run the validated SQL in full (capped) and narrate the result.

    Returns (envelope, ok). ok is False when the full run fails where the
    probe passed (e.g. interrupted mid-scan); the envelope then explains.
    """
    config = config or PipelineConfig()
    result = execute(conn, sql, row_cap=config.row_cap_full)
    if isinstance(result, ExecError):
        text = (
            "The query validated but failed when run in full: "
            f"{result.message}"
        )
        return AnswerEnvelope(text=text, sql=sql), False

    rows_text = render_table_text(result, max_rows=config.rows_in_prompt)
    prompt = render_template("answer", {"question": question, "sample_rows": rows_text})
    try:
        completion = gateway.complete(
            CompletionRequest("answer", prompt, max_output_tokens=config.max_output_tokens)
        )
        raw_text = completion.text
    except BackendUnavailable as exc:
        raw_text = f"Here are the results. (answer generation unavailable: {exc})"
    text, chart = _parse_chart_directive(raw_text, result)
    return AnswerEnvelope(text=text, table=result, chart=chart, sql=sql), True


def answer_structure(
    question: str,
    snapshot: SchemaSnapshot,
    gateway: Gateway,
    config: PipelineConfig | None = None,
) -> AnswerEnvelope:
    """Answer a structure question from the rendered schema alone: no SQL is
    generated and nothing touches the database."""
    config = config or PipelineConfig()
    chunks = render_chunks(snapshot)
    context = "\n\n".join(c.text for c in chunks) if chunks else "(the database has no tables)"
    prompt = render_template("answer", {"question": question, "sample_rows": context})
    try:
        completion = gateway.complete(
            CompletionRequest("answer", prompt, max_output_tokens=config.max_output_tokens)
        )
        raw_text = completion.text
    except BackendUnavailable as exc:
        raw_text = f"(answer generation unavailable: {exc})"
    text, _ = _parse_chart_directive(raw_text, None)
    return AnswerEnvelope(text=text)


def add_rule(
    scope: str,
    text: str,
    indexes=(),
    session: Session | None = None,
    now: str = "",
) -> BusinessRule:
    """Create a business rule.

    Global rules are upserted into every given index as rule chunks; session
    rules attach to the session only (always present in its context, never
    indexed) so they cannot leak across sessions.
    """
    if not text or not text.strip():
        raise EmptyRule("rule text must be non-empty")
    if scope not in ("global", "session"):
        raise ValueError(f"unknown rule scope: {scope!r}")
    rule = BusinessRule(
        rule_id=uuid.uuid4().hex[:12],
        text=text.strip(),
        created_at=now,
        updated_at=now,
    )
    if scope == "global":
        for index in indexes:
            index.upsert(rule_chunk(rule))
    else:
        if session is None:
            raise ValueError("session scope requires a session")
        session.session_rules.append(rule)
    return rule


def ask(session: Session, question: str, deps: PipelineDeps) -> tuple[AnswerEnvelope, PipelineTrace]:
    """Run the full pipeline for one question in a session.

    Never raises toward the caller: every failure becomes an envelope plus a
    trace. The turn is appended to the session on the way out.
    """
    if not question or not question.strip():
        raise ValueError("question must be non-empty")
    config = deps.config
    config.validate()
    timings: dict[str, int] = {}

    start = time.monotonic()
    intent, intent_source = classify_intent(question, session, deps.gateway, config)
    timings["classify_ms"] = _ms_since(start)

    if intent == STRUCTURE_QUERY:
        start = time.monotonic()
        envelope = answer_structure(question, deps.snapshot, deps.gateway, config)
        timings["answer_ms"] = _ms_since(start)
        trace = PipelineTrace(
            question=question,
            intent=intent,
            intent_source=intent_source,
            context={"schema": [], "rules": [], "char_budget_used": 0},
            candidates=[],
            final_status=STRUCTURE_ANSWERED,
            timings=timings,
        )
        return _finish(session, question, envelope, trace)

    history = render_history(session, config.max_history)

    start = time.monotonic()
    try:
        bundle = build_context(
            question,
            deps.index,
            session_rules=session.session_rules,
            k_tables=config.k_tables,
            k_rules=config.k_rules,
            char_budget=config.char_budget,
        )
    except EmptyIndex as exc:
        timings["retrieve_ms"] = _ms_since(start)
        envelope = AnswerEnvelope(text=f"I cannot answer data questions yet: {exc}")
        trace = PipelineTrace(
            question=question,
            intent=intent,
            intent_source=intent_source,
            context={"schema": [], "rules": [], "char_budget_used": 0},
            candidates=[],
            final_status=EXHAUSTED,
            timings=timings,
        )
        return _finish(session, question, envelope, trace)
    timings["retrieve_ms"] = _ms_since(start)

    candidates: list[SqlCandidate] = []
    envelope: AnswerEnvelope | None = None
    final_status = EXHAUSTED
    generate_ms = 0
    validate_ms = 0

    for iteration in range(1, config.max_iterations + 1):
        start = time.monotonic()
        try:
            if iteration == 1:
                candidate_sql = generate_sql(question, bundle, deps.gateway, config, history=history)
            else:
                candidate_sql = refine(candidates[-1], question, bundle, deps.gateway, config)
        except ExtractionError as exc:
            generate_ms += _ms_since(start)
            candidates.append(
                SqlCandidate(
                    iteration=iteration,
                    sql="",
                    outcome=ValidationOutcome(status=GUARD_FAIL, detail=exc.raw_text or str(exc)),
                )
            )
            continue
        except BackendUnavailable as exc:
            generate_ms += _ms_since(start)
            candidates.append(
                SqlCandidate(
                    iteration=iteration,
                    sql="",
                    outcome=ValidationOutcome(
                        status=GUARD_FAIL, detail=f"completion backend error: {exc}"
                    ),
                )
            )
            break
        generate_ms += _ms_since(start)

        start = time.monotonic()
        outcome = validate(candidate_sql, question, bundle, deps.conn, deps.gateway, config)
        validate_ms += _ms_since(start)
        candidates.append(SqlCandidate(iteration=iteration, sql=candidate_sql, outcome=outcome))

        if outcome.status == PASS:
            start = time.monotonic()
            envelope, ok = answer_data(question, candidate_sql, deps.conn, deps.gateway, config)
            timings["answer_ms"] = _ms_since(start)
            final_status = ANSWERED if ok else EXHAUSTED
            break

    timings["generate_ms"] = generate_ms
    timings["validate_ms"] = validate_ms

    if envelope is None:
        last_detail = candidates[-1].outcome.detail if candidates else "no SQL was produced"
        envelope = AnswerEnvelope(
            text=(
                "I'm sorry - I could not produce a working SQL query for this question. "
                f"Last failure: {last_detail}"
            ),
        )

    trace = PipelineTrace(
        question=question,
        intent=intent,
        intent_source=intent_source,
        context=bundle.summary(),
        candidates=candidates,
        final_status=final_status,
        timings=timings,
    )
    return _finish(session, question, envelope, trace)


def _finish(
    session: Session, question: str, envelope: AnswerEnvelope, trace: PipelineTrace
) -> tuple[AnswerEnvelope, PipelineTrace]:
    envelope.trace_id = uuid.uuid4().hex
    session.turns.append((question, envelope))
    return envelope, trace


def _ms_since(start: float) -> int:
    return int((time.monotonic() - start) * 1000)
