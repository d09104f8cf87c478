"""Scan a live database into a SchemaSnapshot and render it as retrievable text.

A snapshot captures tables, columns, keys, harvested categorical values, and
approximate row counts. Each table renders into exactly one plain-text chunk
with a fixed layout, so retrieval over the rendered chunks is deterministic.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone

from .db_connector import Connection, ExecError, ExecFailure, execute
from . import db_connector
from .embedding_index import ContextChunk, chunk_id

ROW_COUNT_BUDGET_S = 5.0


class ScanError(Exception):
    """Scan failed; wraps the underlying engine error. No partial snapshot escapes."""

    def __init__(self, message: str, exec_error: ExecError | None = None):
        super().__init__(message)
        self.exec_error = exec_error


@dataclass(frozen=True)
class ScanOptions:
    """Knobs for the scan.

    Columns whose type-class is in categorical_type_filter and whose distinct
    non-null count is <= categorical_max_distinct get their values harvested
    into the snapshot.
    """

    categorical_max_distinct: int = 20
    categorical_type_filter: frozenset = frozenset({"text"})
    max_tables: int | None = None

    def __post_init__(self) -> None:
        if self.categorical_max_distinct < 1:
            raise ValueError("categorical_max_distinct must be >= 1")

    def to_dict(self) -> dict:
        return {
            "categorical_max_distinct": self.categorical_max_distinct,
            "categorical_type_filter": sorted(self.categorical_type_filter),
            "max_tables": self.max_tables,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScanOptions":
        return cls(
            categorical_max_distinct=data.get("categorical_max_distinct", 20),
            categorical_type_filter=frozenset(data.get("categorical_type_filter", ["text"])),
            max_tables=data.get("max_tables"),
        )


@dataclass
class TableInfo:
    name: str
    columns: list[dict]  # {name, declared_type, nullable}
    primary_key: list[str]
    foreign_keys: list[dict]  # {local_columns, referenced_table, referenced_columns}
    categorical_values: dict[str, list] = field(default_factory=dict)
    approx_row_count: int | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "columns": self.columns,
            "primary_key": self.primary_key,
            "foreign_keys": self.foreign_keys,
            "categorical_values": self.categorical_values,
            "approx_row_count": self.approx_row_count,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TableInfo":
        return cls(
            name=data["name"],
            columns=[dict(c) for c in data["columns"]],
            primary_key=list(data["primary_key"]),
            foreign_keys=[dict(f) for f in data["foreign_keys"]],
            categorical_values={k: list(v) for k, v in data.get("categorical_values", {}).items()},
            approx_row_count=data.get("approx_row_count"),
        )


@dataclass
class SchemaSnapshot:
    database_name: str
    tables: list[TableInfo]
    scanned_at: str
    scan_options: ScanOptions

    def to_dict(self) -> dict:
        return {
            "database_name": self.database_name,
            "tables": [t.to_dict() for t in self.tables],
            "scanned_at": self.scanned_at,
            "scan_options": self.scan_options.to_dict(),
        }

    def to_canonical_json(self) -> str:
        """Stable-key serialization; equal snapshots serialize byte-identically."""
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SchemaSnapshot":
        return cls(
            database_name=data["database_name"],
            tables=[TableInfo.from_dict(t) for t in data["tables"]],
            scanned_at=data["scanned_at"],
            scan_options=ScanOptions.from_dict(data.get("scan_options", {})),
        )


def type_class(declared_type: str) -> str:
    """Bucket a declared column type into text/integer/real/numeric/blob,
    following the engine's affinity rules."""
    t = declared_type.upper()
    if "INT" in t:
        return "integer"
    if "CHAR" in t or "CLOB" in t or "TEXT" in t:
        return "text"
    if not t or "BLOB" in t:
        return "blob"
    if "REAL" in t or "FLOA" in t or "DOUB" in t:
        return "real"
    return "numeric"


def scan(conn: Connection, options: ScanOptions | None = None) -> SchemaSnapshot:
    """Build a SchemaSnapshot of every user table reachable on the connection.

    Raises ScanError on any engine failure; a snapshot is returned whole or
    not at all.
    """
    options = options or ScanOptions()
    try:
        cat = db_connector.catalog(conn)
    except ExecFailure as exc:
        raise ScanError(f"catalog scan failed: {exc.error.message}", exc.error) from exc

    table_names = cat["tables"]
    if options.max_tables is not None:
        table_names = table_names[: options.max_tables]
    known = set(table_names)

    tables = []
    for name in table_names:
        cat_cols = cat["columns"][name]
        columns = [
            {"name": c["name"], "declared_type": c["declared_type"], "nullable": not c["notnull"]}
            for c in cat_cols
        ]
        primary_key = [c["name"] for c in sorted(cat_cols, key=lambda c: c["pk"]) if c["pk"] > 0]
        col_names = {c["name"] for c in cat_cols}

        foreign_keys = []
        for fk in cat["foreign_keys"][name]:
            # An edge whose target was cut off (max_tables) or is missing from
            # the catalog cannot be represented in the snapshot; drop it.
            if fk["referenced_table"] not in known:
                continue
            ref_cols = fk["referenced_columns"]
            if None in ref_cols:
                # Engine elides the referenced column for implicit-PK references.
                ref_pk = [
                    c["name"]
                    for c in sorted(cat["columns"][fk["referenced_table"]], key=lambda c: c["pk"])
                    if c["pk"] > 0
                ]
                if len(ref_pk) != len(ref_cols):
                    continue
                ref_cols = ref_pk
            target_cols = {c["name"] for c in cat["columns"][fk["referenced_table"]]}
            if not set(ref_cols) <= target_cols or not set(fk["columns"]) <= col_names:
                continue
            foreign_keys.append(
                {
                    "local_columns": fk["columns"],
                    "referenced_table": fk["referenced_table"],
                    "referenced_columns": ref_cols,
                }
            )

        categorical = {}
        for col in columns:
            if type_class(col["declared_type"]) not in options.categorical_type_filter:
                continue
            values = _harvest_distinct(conn, name, col["name"], options.categorical_max_distinct)
            if values is not None:
                categorical[col["name"]] = values

        tables.append(
            TableInfo(
                name=name,
                columns=columns,
                primary_key=primary_key,
                foreign_keys=foreign_keys,
                categorical_values=categorical,
                approx_row_count=_count_rows(conn, name),
            )
        )

    return SchemaSnapshot(
        database_name=conn.profile.name,
        tables=tables,
        scanned_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        scan_options=options,
    )


def _harvest_distinct(conn: Connection, table: str, column: str, max_distinct: int) -> list | None:
    """Distinct non-null values of a column, sorted, or None when the column
    has more than max_distinct values."""
    q = (
        f'SELECT DISTINCT "{_q(column)}" FROM "{_q(table)}" '
        f'WHERE "{_q(column)}" IS NOT NULL ORDER BY 1 LIMIT {max_distinct + 1}'
    )
    result = execute(conn, q)
    if isinstance(result, ExecError):
        raise ScanError(f"categorical harvest failed on {table}.{column}: {result.message}", result)
    if len(result.rows) > max_distinct:
        return None
    return [row[0] for row in result.rows]


def _count_rows(conn: Connection, table: str) -> int | None:
    """COUNT(*) with a wall-clock budget; None when the count is interrupted
    or fails (large tables must not stall the scan)."""
    deadline = time.monotonic() + ROW_COUNT_BUDGET_S
    conn.raw.set_progress_handler(lambda: 1 if time.monotonic() > deadline else 0, 10000)
    try:
        result = execute(conn, f'SELECT COUNT(*) FROM "{_q(table)}"')
    finally:
        conn.raw.set_progress_handler(None, 0)
    if isinstance(result, ExecError):
        return None
    return int(result.rows[0][0])


def _q(name: str) -> str:
    return name.replace('"', '""')


def render_table_doc(table: TableInfo) -> str:
    """Fixed plain-text layout for one table: header, one line per column,
    key lines, then values lines for harvested columns."""
    lines = [f"Table: {table.name}"]
    lines.append("Columns:")
    for col in table.columns:
        dtype = col["declared_type"] or "ANY"
        nullness = "nullable" if col["nullable"] else "not null"
        lines.append(f"  {col['name']} {dtype} {nullness}")
    if table.primary_key:
        lines.append(f"Primary key: {', '.join(table.primary_key)}")
    for fk in table.foreign_keys:
        local = ", ".join(fk["local_columns"])
        remote = ", ".join(fk["referenced_columns"])
        lines.append(f"Foreign key: {local} -> {fk['referenced_table']}({remote})")
    for col_name in sorted(table.categorical_values):
        values = table.categorical_values[col_name]
        if values:
            rendered = ", ".join(_render_value(v) for v in values)
            lines.append(f"Values for {col_name}: {rendered}")
    if table.approx_row_count is not None:
        lines.append(f"Approx rows: {table.approx_row_count}")
    return "\n".join(lines)


def _render_value(value) -> str:
    if isinstance(value, str):
        return f"'{value}'"
    return str(value)


def render_chunks(snapshot: SchemaSnapshot) -> list[ContextChunk]:
    """One table_doc chunk per table, in snapshot order. Rendering is a total,
    deterministic function of the snapshot; embeddings are filled in by the
    index at upsert time."""
    chunks = []
    for table in snapshot.tables:
        text = render_table_doc(table)
        chunks.append(
            ContextChunk(
                id=chunk_id("table_doc", table.name, text),
                kind="table_doc",
                text=text,
                source_ref=table.name,
                embedding=None,
                active=True,
            )
        )
    return chunks
