"""Benchmark harness: run the pipeline over a question set and score
execution accuracy against gold SQL.

The dataset layout follows the public text-to-SQL benchmark distributions: a
JSON array of question records plus one single-file database per db_id. Gold
queries are validated by execution at load time; correctness is the
order-insensitive execution match from sql_guard. Each item's optional
"evidence" hint is injected as a session business rule.

Two accuracies are reported. first-attempt: candidate 1's SQL executed on its
own, regardless of later refinement (and an outright miss when candidate 1
never passed the guard). final: the pipeline answered and its SQL matches
gold. With refinement enabled, final can only gain over first-attempt.
"""

from __future__ import annotations

import csv
import io
import json
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .db_connector import ConnectionProfile, ExecError, connect, execute
from .embedding_index import VectorIndex
from .llm_gateway import Gateway, ScriptEntry, ScriptedBackend
from .pipeline import PipelineConfig, PipelineDeps, Session, add_rule, ask
from .schema_scanner import ScanOptions, render_chunks, scan
from .sql_guard import rows_equal

DIFFICULTIES = ("simple", "moderate", "challenging")

_DB_DIR_CANDIDATES = ("databases", "dev_databases", "train_databases")


class DatasetNotFound(Exception):
    pass


class MalformedDataset(Exception):
    pass


@dataclass
class BenchItem:
    question_id: str
    db_id: str
    question: str
    evidence: str
    gold_sql: str
    difficulty: str
    db_path: str = ""


@dataclass
class DatasetLoad:
    items: list[BenchItem]
    skipped: list[dict]  # {question_id, reason} for gold that failed to execute
    path: str


@dataclass
class ItemResult:
    question_id: str
    db_id: str
    difficulty: str
    predicted_sql: str
    first_attempt_correct: bool
    final_correct: bool
    iterations_used: int
    failure_detail: str
    answered: bool

    def to_dict(self) -> dict:
        return {
            "question_id": self.question_id,
            "db_id": self.db_id,
            "difficulty": self.difficulty,
            "predicted_sql": self.predicted_sql,
            "first_attempt_correct": self.first_attempt_correct,
            "final_correct": self.final_correct,
            "iterations_used": self.iterations_used,
            "failure_detail": self.failure_detail,
            "answered": self.answered,
        }


@dataclass
class BenchReport:
    dataset_path: str
    results: list[ItemResult]
    skipped: list[dict] = field(default_factory=list)
    runtime_s: float = 0.0

    @property
    def item_count(self) -> int:
        return len(self.results)

    def aggregates(self) -> dict:
        def bucket(results):
            n = len(results)
            first = sum(1 for r in results if r.first_attempt_correct)
            final = sum(1 for r in results if r.final_correct)
            return {
                "count": n,
                "first_attempt_correct": first,
                "final_correct": final,
                "first_attempt_accuracy": (first / n) if n else 0.0,
                "final_accuracy": (final / n) if n else 0.0,
            }

        by_difficulty = {}
        for difficulty in DIFFICULTIES:
            group = [r for r in self.results if r.difficulty == difficulty]
            if group:
                by_difficulty[difficulty] = bucket(group)
        return {"overall": bucket(self.results), "by_difficulty": by_difficulty}


def _find_questions_file(dir_path: str) -> str:
    preferred = os.path.join(dir_path, "questions.json")
    if os.path.isfile(preferred):
        return preferred
    candidates = [
        os.path.join(dir_path, name)
        for name in sorted(os.listdir(dir_path))
        if name.endswith(".json")
    ]
    if len(candidates) == 1:
        return candidates[0]
    if not candidates:
        raise DatasetNotFound(f"no question JSON file in {dir_path}")
    raise DatasetNotFound(
        f"multiple JSON files in {dir_path}; name the question file questions.json"
    )


def _find_db_file(dir_path: str, db_id: str) -> str | None:
    for sub in _DB_DIR_CANDIDATES:
        for candidate in (
            os.path.join(dir_path, sub, db_id, f"{db_id}.sqlite"),
            os.path.join(dir_path, sub, f"{db_id}.sqlite"),
        ):
            if os.path.isfile(candidate):
                return candidate
    return None


def load_dataset(dir_path: str) -> DatasetLoad:
    """Load and pre-validate a benchmark directory.

    A missing database file or a malformed record is fatal (MalformedDataset
    naming the offender); an item whose gold SQL fails to execute is skipped
    and counted instead.
    """
    if not os.path.isdir(dir_path):
        raise DatasetNotFound(f"dataset directory not found: {dir_path}")
    questions_file = _find_questions_file(dir_path)
    with open(questions_file, "r", encoding="utf-8") as fh:
        try:
            records = json.load(fh)
        except json.JSONDecodeError as exc:
            raise MalformedDataset(f"{questions_file} is not valid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise MalformedDataset(f"{questions_file} must hold a JSON array of question records")

    items: list[BenchItem] = []
    skipped: list[dict] = []
    conns: dict[str, object] = {}
    try:
        for i, record in enumerate(records):
            qid = str(record.get("question_id", i))
            question = record.get("question")
            db_id = record.get("db_id")
            gold = record.get("SQL") or record.get("gold_sql") or record.get("query")
            if not question or not db_id or not gold:
                raise MalformedDataset(
                    f"record {qid}: question, db_id, and SQL are all required"
                )
            difficulty = record.get("difficulty") or "simple"
            if difficulty not in DIFFICULTIES:
                raise MalformedDataset(f"record {qid}: unknown difficulty {difficulty!r}")
            db_path = _find_db_file(dir_path, db_id)
            if db_path is None:
                raise MalformedDataset(f"record {qid}: database file for db_id {db_id!r} not found")

            if db_id not in conns:
                profile = ConnectionProfile(name=db_id, kind="embedded-file", location=db_path)
                conns[db_id] = connect(profile)
            probe = execute(conns[db_id], gold, row_cap=1)
            if isinstance(probe, ExecError):
                skipped.append({"question_id": qid, "reason": f"gold SQL fails: {probe.message}"})
                continue

            items.append(
                BenchItem(
                    question_id=qid,
                    db_id=db_id,
                    question=question,
                    evidence=record.get("evidence") or "",
                    gold_sql=gold,
                    difficulty=difficulty,
                    db_path=db_path,
                )
            )
    finally:
        for conn in conns.values():
            conn.close()
    return DatasetLoad(items=items, skipped=skipped, path=dir_path)


@dataclass
class _DbContext:
    profile: ConnectionProfile
    snapshot: object
    index: VectorIndex


def _build_db_contexts(items: list[BenchItem]) -> dict[str, _DbContext]:
    contexts: dict[str, _DbContext] = {}
    for item in items:
        if item.db_id in contexts:
            continue
        profile = ConnectionProfile(name=item.db_id, kind="embedded-file", location=item.db_path)
        conn = connect(profile)
        try:
            snapshot = scan(conn, ScanOptions())
        finally:
            conn.close()
        index = VectorIndex()
        for chunk in render_chunks(snapshot):
            index.upsert(chunk)
        contexts[item.db_id] = _DbContext(profile=profile, snapshot=snapshot, index=index)
    return contexts


def _run_with_timeout(fn, timeout_s: float):
    """Run fn() in a daemon thread; raises TimeoutError when the deadline
    passes (the thread is abandoned, which is acceptable at desk scale)."""
    box: dict = {}

    def runner():
        try:
            box["value"] = fn()
        except BaseException as exc:  # noqa: BLE001 - re-raised in caller
            box["error"] = exc

    thread = threading.Thread(target=runner, daemon=True)
    thread.start()
    thread.join(timeout_s)
    if thread.is_alive():
        raise TimeoutError(f"item exceeded {timeout_s} s")
    if "error" in box:
        raise box["error"]
    return box["value"]


def _evaluate_item(
    item: BenchItem,
    context: _DbContext,
    gateway: Gateway,
    pipeline_config: PipelineConfig,
    timeout_s: float,
) -> ItemResult:
    def work():
        session = Session(session_id=f"bench-{item.question_id}", database=item.db_id)
        if item.evidence:
            add_rule("session", item.evidence, session=session)
        conn = connect(context.profile)
        try:
            deps = PipelineDeps(
                conn=conn,
                index=context.index,
                snapshot=context.snapshot,
                gateway=gateway,
                config=pipeline_config,
            )
            envelope, trace = ask(session, item.question, deps)

            answered = trace.final_status == "answered"
            predicted = envelope.sql or ""
            gold_rows = execute(conn, item.gold_sql)

            final_correct = False
            failure_detail = ""
            if answered and predicted:
                predicted_rows = execute(conn, predicted)
                if isinstance(predicted_rows, ExecError):
                    failure_detail = f"predicted SQL fails: {predicted_rows.message}"
                elif isinstance(gold_rows, ExecError):
                    failure_detail = f"gold SQL fails: {gold_rows.message}"
                elif rows_equal(predicted_rows, gold_rows):
                    final_correct = True
                else:
                    failure_detail = "execution mismatch against gold"
            elif trace.candidates:
                failure_detail = trace.candidates[-1].outcome.detail
            else:
                failure_detail = "pipeline produced no SQL candidates"

            first_attempt_correct = False
            if trace.candidates:
                first = trace.candidates[0]
                if first.outcome.status != "guard_fail" and first.sql:
                    first_rows = execute(conn, first.sql)
                    if not isinstance(first_rows, ExecError) and not isinstance(gold_rows, ExecError):
                        first_attempt_correct = rows_equal(first_rows, gold_rows)

            return ItemResult(
                question_id=item.question_id,
                db_id=item.db_id,
                difficulty=item.difficulty,
                predicted_sql=predicted,
                first_attempt_correct=first_attempt_correct,
                final_correct=final_correct,
                iterations_used=len(trace.candidates),
                failure_detail=failure_detail,
                answered=answered,
            )
        finally:
            conn.close()

    try:
        return _run_with_timeout(work, timeout_s)
    except TimeoutError:
        return ItemResult(
            item.question_id, item.db_id, item.difficulty, "", False, False, 0,
            f"timeout after {timeout_s} s", False,
        )
    except Exception as exc:  # item isolation is total
        return ItemResult(
            item.question_id, item.db_id, item.difficulty, "", False, False, 0,
            f"harness error: {exc}", False,
        )


def evaluate(
    items: list[BenchItem],
    pipeline_config: PipelineConfig | None = None,
    gateway: Gateway | None = None,
    workers: int = 1,
    item_timeout_s: float = 120.0,
    skipped: list[dict] | None = None,
    dataset_path: str = "",
) -> BenchReport:
    """Run the pipeline on every item and score it. Item failures never abort
    the run; they score as incorrect with a recorded detail."""
    if gateway is None:
        raise ValueError("evaluate requires a gateway")
    pipeline_config = pipeline_config or PipelineConfig()
    started = time.monotonic()
    contexts = _build_db_contexts(items)

    def run(item: BenchItem) -> ItemResult:
        return _evaluate_item(item, contexts[item.db_id], gateway, pipeline_config, item_timeout_s)

    if workers <= 1:
        results = [run(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, items))

    return BenchReport(
        dataset_path=dataset_path,
        results=results,
        skipped=list(skipped or []),
        runtime_s=time.monotonic() - started,
    )


def _pct(value: float) -> str:
    return f"{value * 100:.1f}%"


def render_report(report: BenchReport, fmt: str = "text") -> str:
    """Render a finished report as text, json, or csv."""
    agg = report.aggregates()
    overall = agg["overall"]
    if fmt == "text":
        lines = [
            f"dataset: {report.dataset_path}",
            f"items: {report.item_count} (skipped at load: {len(report.skipped)})",
            (
                f"first-attempt accuracy {_pct(overall['first_attempt_accuracy'])} "
                f"({overall['first_attempt_correct']}/{overall['count']})"
            ),
            (
                f"final accuracy {_pct(overall['final_accuracy'])} "
                f"({overall['final_correct']}/{overall['count']})"
            ),
        ]
        if agg["by_difficulty"]:
            lines.append("by difficulty:")
            for difficulty, bucket in agg["by_difficulty"].items():
                lines.append(
                    f"  {difficulty:<12} first {_pct(bucket['first_attempt_accuracy'])} "
                    f"({bucket['first_attempt_correct']}/{bucket['count']})  "
                    f"final {_pct(bucket['final_accuracy'])} "
                    f"({bucket['final_correct']}/{bucket['count']})"
                )
        lines.append(f"runtime: {report.runtime_s:.1f} s")
        return "\n".join(lines)

    if fmt == "json":
        payload = {
            "dataset_path": report.dataset_path,
            "item_count": report.item_count,
            "skipped": report.skipped,
            "aggregates": agg,
            "items": [r.to_dict() for r in report.results],
            "runtime_s": round(report.runtime_s, 3),
        }
        return json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False)

    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer)
        writer.writerow(
            [
                "question_id", "db_id", "difficulty", "first_attempt_correct",
                "final_correct", "iterations_used", "predicted_sql", "failure_detail",
            ]
        )
        for r in report.results:
            writer.writerow(
                [
                    r.question_id, r.db_id, r.difficulty,
                    int(r.first_attempt_correct), int(r.final_correct),
                    r.iterations_used, r.predicted_sql, r.failure_detail,
                ]
            )
        writer.writerow(
            [
                "TOTAL", "", "",
                f"{overall['first_attempt_correct']}/{overall['count']}",
                f"{overall['final_correct']}/{overall['count']}",
                "", "", _pct(overall["final_accuracy"]),
            ]
        )
        return buffer.getvalue()

    raise ValueError(f"unknown report format: {fmt!r}")


def make_gold_echo_backend(items: list[BenchItem]) -> ScriptedBackend:
    """An oracle backend that answers each item's generation prompt with its
    gold SQL. Running the bench with it must score 100%; that validates the
    loader, the scorer, and the pipeline plumbing in one pass."""
    entries = []
    for item in items:
        entries.append(
            ScriptEntry("generate_sql", item.question, f"```sql\n{item.gold_sql}\n```")
        )
    entries.extend(
        [
            ScriptEntry("classify_intent", "", "DATA"),
            ScriptEntry("introspect", "", "VERDICT: PASS\nMatches the question."),
            ScriptEntry("answer", "", "Here are the results you asked for."),
        ]
    )
    return ScriptedBackend(entries)
