"""Service core: long-lived state behind the HTTP API and the CLI.

Owns the connection profiles, per-database snapshots and vector indexes, the
global rule store, sessions, and completed traces. Everything is persisted
under storage_dir and reloaded on construction, so a restart loses nothing
that was fully written.
"""

from __future__ import annotations

import os
import threading
import uuid

from . import pipeline as pl
from .config import ServiceConfig
from .db_connector import ConnectFailure, ConnectionProfile, connect
from .embedding_index import BusinessRule, NotFound, RemoteEmbedder, VectorIndex, rule_chunk
from .llm_gateway import Gateway, HttpChatBackend, ScriptedBackend
from .pipeline import AnswerEnvelope, PipelineDeps, Session
from .schema_scanner import ScanError, SchemaSnapshot, render_chunks, scan
from .storage import JsonlLog, RuleStore, atomic_write_text, read_json, utc_now


class ServiceError(Exception):
    status_code = 500
    error_code = "internal_error"


class UnknownResource(ServiceError):
    status_code = 404
    error_code = "not_found"


class AskInFlight(ServiceError):
    status_code = 409
    error_code = "ask_in_flight"


class InvalidRequest(ServiceError):
    status_code = 422
    error_code = "invalid_request"


class ScanFailed(ServiceError):
    status_code = 502
    error_code = "scan_error"


def build_gateway(config: ServiceConfig, script_file: str | None = None) -> Gateway:
    """Construct the completion gateway the config describes; script_file
    overrides the configured backend with a scripted one."""
    llm = config.llm
    if script_file:
        backend = ScriptedBackend.from_file(script_file)
    elif llm.backend == "scripted":
        backend = ScriptedBackend.from_file(llm.script_file)
    else:
        backend = HttpChatBackend(
            url=llm.url,
            model=llm.model,
            auth_env_var=llm.auth_env_var or None,
            timeout_s=llm.timeout_s,
            model_by_template=llm.model_by_template,
        )
    return Gateway(
        backend,
        retry_max=llm.retry_max,
        rate_limit_per_minute=llm.rate_limit_per_minute or None,
    )


class AppState:
    """All mutable service state plus its persistence."""

    def __init__(self, config: ServiceConfig, gateway: Gateway | None = None):
        config.validate()
        self.config = config
        self.gateway = gateway or build_gateway(config)

        os.makedirs(config.storage_dir, exist_ok=True)
        self._snapshot_dir = os.path.join(config.storage_dir, "snapshots")
        self._index_dir = os.path.join(config.storage_dir, "index")
        os.makedirs(self._snapshot_dir, exist_ok=True)
        os.makedirs(self._index_dir, exist_ok=True)

        self.profiles: dict[str, ConnectionProfile] = {p.name: p for p in config.databases}
        self.rule_store = RuleStore(os.path.join(config.storage_dir, "rules.json"))
        self.session_log = JsonlLog(os.path.join(config.storage_dir, "sessions.jsonl"))

        self._embedder = self._build_embedder()
        self.snapshots: dict[str, SchemaSnapshot] = {}
        self.indexes: dict[str, VectorIndex] = {}
        self.sessions: dict[str, Session] = {}
        self.traces: dict[str, dict] = {}

        self._state_lock = threading.Lock()
        self._session_locks: dict[str, threading.Lock] = {}

        self._load_persisted()

    # -- construction helpers -------------------------------------------

    def _build_embedder(self):
        emb = self.config.embedder
        if emb.kind == "remote":
            return RemoteEmbedder(
                url=emb.url,
                model=emb.model,
                dim=emb.dimension,
                auth_env_var=emb.auth_env_var or None,
                cache_path=os.path.join(self.config.storage_dir, "embedding_cache.json"),
            )
        return None  # VectorIndex falls back to the built-in embedder

    def _new_index(self) -> VectorIndex:
        return VectorIndex(dim=self.config.embedder.dimension, embedder=self._embedder)

    def _snapshot_path(self, database: str) -> str:
        return os.path.join(self._snapshot_dir, f"{database}.json")

    def _index_path(self, database: str) -> str:
        return os.path.join(self._index_dir, f"{database}.jsonl")

    def _load_persisted(self) -> None:
        for name in self.profiles:
            snap_path = self._snapshot_path(name)
            if os.path.exists(snap_path):
                self.snapshots[name] = SchemaSnapshot.from_dict(read_json(snap_path))
            idx_path = self._index_path(name)
            if os.path.exists(idx_path):
                self.indexes[name] = VectorIndex.load(
                    idx_path, dim=self.config.embedder.dimension, embedder=self._embedder
                )
            elif name in self.snapshots:
                self.indexes[name] = self._rebuild_index(self.snapshots[name])

        for record in self.session_log.read_all():
            event = record.get("event")
            if event == "session_created":
                session = Session(
                    session_id=record["session_id"], database=record["database"]
                )
                self.sessions[session.session_id] = session
            elif event == "turn":
                session = self.sessions.get(record["session_id"])
                if session is None:
                    continue
                envelope = AnswerEnvelope.from_dict(record["envelope"])
                session.turns.append((record["question"], envelope))
                if envelope.trace_id and record.get("trace"):
                    self.traces[envelope.trace_id] = record["trace"]
            elif event == "session_rule":
                session = self.sessions.get(record["session_id"])
                if session is not None:
                    session.session_rules.append(BusinessRule.from_dict(record["rule"]))

    def _rebuild_index(self, snapshot: SchemaSnapshot) -> VectorIndex:
        index = self._new_index()
        for chunk in render_chunks(snapshot):
            index.upsert(chunk)
        for rule in self.rule_store.active_rules():
            index.upsert(rule_chunk(rule))
        return index

    # -- databases & scanning --------------------------------------------

    def _profile(self, database: str) -> ConnectionProfile:
        profile = self.profiles.get(database)
        if profile is None:
            raise UnknownResource(f"unknown database: {database!r}")
        return profile

    def list_databases(self) -> list[ConnectionProfile]:
        return [self.profiles[name] for name in sorted(self.profiles)]

    def scan_database(self, database: str) -> SchemaSnapshot:
        """Scan, persist the snapshot, and rebuild the database's index
        (table_doc chunks replaced, rule chunks re-added unchanged)."""
        profile = self._profile(database)
        try:
            conn = connect(profile)
        except ConnectFailure as exc:
            raise ScanFailed(str(exc)) from exc
        try:
            snapshot = scan(conn)
        except ScanError as exc:
            raise ScanFailed(str(exc)) from exc
        finally:
            conn.close()

        index = self._rebuild_index(snapshot)
        with self._state_lock:
            self.snapshots[database] = snapshot
            self.indexes[database] = index
            atomic_write_text(self._snapshot_path(database), snapshot.to_canonical_json() + "\n")
            index.save(self._index_path(database))
        return snapshot

    def get_snapshot(self, database: str) -> SchemaSnapshot:
        self._profile(database)
        snapshot = self.snapshots.get(database)
        if snapshot is None:
            raise UnknownResource(f"database {database!r} has not been scanned yet")
        return snapshot

    def _ensure_scanned(self, database: str) -> None:
        if database not in self.snapshots or database not in self.indexes:
            self.scan_database(database)

    # -- sessions & asking -------------------------------------------------

    def create_session(self, database: str) -> Session:
        self._profile(database)
        session = Session(session_id=uuid.uuid4().hex[:16], database=database)
        with self._state_lock:
            self.sessions[session.session_id] = session
            self._session_locks[session.session_id] = threading.Lock()
        self.session_log.append(
            {
                "event": "session_created",
                "session_id": session.session_id,
                "database": database,
                "created_at": utc_now(),
            }
        )
        return session

    def get_session(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownResource(f"unknown session: {session_id!r}")
        return session

    def _session_lock(self, session_id: str) -> threading.Lock:
        with self._state_lock:
            if session_id not in self._session_locks:
                self._session_locks[session_id] = threading.Lock()
            return self._session_locks[session_id]

    def ask(self, session_id: str, question: str) -> tuple[AnswerEnvelope, dict]:
        """Run one pipeline turn inside the session. One ask per session at a
        time; a second concurrent ask fails fast with AskInFlight."""
        session = self.get_session(session_id)
        if not question or not question.strip():
            raise InvalidRequest("question must be non-empty")
        lock = self._session_lock(session_id)
        if not lock.acquire(blocking=False):
            raise AskInFlight(f"an ask is already in flight for session {session_id!r}")
        try:
            self._ensure_scanned(session.database)
            profile = self._profile(session.database)
            conn = connect(profile)
            try:
                deps = PipelineDeps(
                    conn=conn,
                    index=self.indexes[session.database],
                    snapshot=self.snapshots[session.database],
                    gateway=self.gateway,
                    config=self.config.pipeline,
                )
                envelope, trace = pl.ask(session, question, deps)
            finally:
                conn.close()
            trace_dict = trace.to_dict()
            self.traces[envelope.trace_id] = trace_dict
            self.session_log.append(
                {
                    "event": "turn",
                    "session_id": session_id,
                    "question": question,
                    "envelope": envelope.to_dict(),
                    "trace": trace_dict,
                    "at": utc_now(),
                }
            )
            return envelope, trace_dict
        finally:
            lock.release()

    def get_trace(self, trace_id: str) -> dict:
        trace = self.traces.get(trace_id)
        if trace is None:
            raise UnknownResource(f"unknown trace: {trace_id!r}")
        return trace

    # -- rules --------------------------------------------------------------

    def add_rule(self, text: str, scope: str = "global", session_id: str | None = None) -> BusinessRule:
        if not text or not text.strip():
            raise InvalidRequest("rule text must be non-empty")
        if scope == "session":
            if not session_id:
                raise InvalidRequest("session-scoped rules need a session_id")
            session = self.get_session(session_id)
            rule = pl.add_rule("session", text, session=session, now=utc_now())
            self.session_log.append(
                {
                    "event": "session_rule",
                    "session_id": session_id,
                    "rule": rule.to_dict(),
                }
            )
            return rule
        if scope != "global":
            raise InvalidRequest(f"unknown rule scope: {scope!r}")
        with self._state_lock:
            rule = pl.add_rule("global", text, indexes=list(self.indexes.values()), now=utc_now())
            self.rule_store.add(rule)
            for database, index in self.indexes.items():
                index.save(self._index_path(database))
        return rule

    def list_rules(self) -> list[BusinessRule]:
        return self.rule_store.active_rules()

    def delete_rule(self, rule_id: str) -> BusinessRule:
        """Deactivate a global rule everywhere; it stays stored for audit."""
        rule = self.rule_store.deactivate(rule_id)
        if rule is None:
            raise UnknownResource(f"unknown rule: {rule_id!r}")
        with self._state_lock:
            chunk = rule_chunk(rule)
            for database, index in self.indexes.items():
                try:
                    index.deactivate(chunk.id)
                except NotFound:
                    continue  # index rebuilt after the rule was added elsewhere
                index.save(self._index_path(database))
        return rule
