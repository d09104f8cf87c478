"""Uniform read-only access to relational databases.

The embedded engine is SQLite (single-file databases, as shipped by public
text-to-SQL benchmarks). Files are opened in read-only mode, so even a SQL
statement that slips past upstream guards cannot modify data. A second,
network-based connector can be plugged in behind the same interface.
"""

from __future__ import annotations

import os
import sqlite3
from dataclasses import dataclass, field

DEFAULT_ROW_CAP = 1000


class ConnectFailure(Exception):
    """Raised when a connection cannot be established."""


class ExecFailure(Exception):
    """Exception form of ExecError, for operations that cannot return it as a value."""

    def __init__(self, error: "ExecError"):
        super().__init__(error.message)
        self.error = error


@dataclass(frozen=True)
class ConnectionProfile:
    """A named database endpoint from the service config.

    kind is "embedded-file" (SQLite file path) or "network" (reserved for
    engine adapters not bundled here).
    """

    name: str
    kind: str
    location: str
    default_row_cap: int = DEFAULT_ROW_CAP

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("profile name must be non-empty")
        if self.kind not in ("embedded-file", "network"):
            raise ValueError(f"unknown profile kind: {self.kind!r}")
        if self.default_row_cap < 1:
            raise ValueError("default_row_cap must be >= 1")


@dataclass
class ResultTable:
    """Rows returned by a query.

    columns holds (name, declared_type) pairs; declared_type is "" when the
    engine does not declare one (computed expressions). Cells are one of
    None, int, float, str, or hex-encoded str for blobs. truncated is True
    iff the row cap cut off results.
    """

    columns: list[tuple[str, str]] = field(default_factory=list)
    rows: list[list] = field(default_factory=list)
    truncated: bool = False

    @property
    def column_names(self) -> list[str]:
        return [name for name, _ in self.columns]

    def to_dict(self) -> dict:
        return {
            "columns": [{"name": n, "declared_type": t} for n, t in self.columns],
            "rows": self.rows,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ResultTable":
        return cls(
            columns=[(c["name"], c.get("declared_type", "")) for c in data["columns"]],
            rows=[list(r) for r in data["rows"]],
            truncated=bool(data.get("truncated", False)),
        )


@dataclass
class ExecError:
    """A failed statement: phase is "prepare" (the engine rejected the SQL
    before producing any row) or "execute" (failure while fetching rows).
    The message is the engine's verbatim error text."""

    phase: str
    message: str
    sql: str


def _to_cell(value):
    if isinstance(value, bytes):
        return value.hex()
    return value


class Connection:
    """A single-threaded handle over one database.

    Callers needing concurrency open independent connections via connect();
    SQLite permits concurrent readers on the same file.
    """

    def __init__(self, profile: ConnectionProfile, raw: sqlite3.Connection):
        self.profile = profile
        self._raw = raw

    @property
    def raw(self) -> sqlite3.Connection:
        return self._raw

    def close(self) -> None:
        self._raw.close()

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def connect(profile: ConnectionProfile) -> Connection:
    """Open a read-only connection described by the profile.

    Raises ConnectFailure with the engine message when the target is
    missing or unreadable.
    """
    if profile.kind == "network":
        raise ConnectFailure(
            f"profile {profile.name!r}: no network connector is bundled; "
            "use an embedded-file profile"
        )
    if not os.path.isfile(profile.location):
        raise ConnectFailure(f"database file not found: {profile.location}")
    try:
        raw = sqlite3.connect(f"file:{profile.location}?mode=ro", uri=True)
    except sqlite3.Error as exc:
        raise ConnectFailure(f"cannot open {profile.location}: {exc}") from exc
    return Connection(profile, raw)


def execute(conn: Connection, sql: str, row_cap: int | None = None) -> ResultTable | ExecError:
    """Run one read query, returning at most row_cap rows.

    row_cap=None fetches everything. Failures come back as ExecError values
    (never exceptions): errors the engine raises before any row is produced
    are phase "prepare", errors during row fetch are phase "execute".
    """
    if row_cap is not None and row_cap < 1:
        raise ValueError("row_cap must be >= 1")
    cur = conn.raw.cursor()
    try:
        try:
            cur.execute(sql)
        except sqlite3.Error as exc:
            return ExecError(phase="prepare", message=str(exc), sql=sql)
        try:
            if row_cap is None:
                fetched = cur.fetchall()
                truncated = False
            else:
                fetched = cur.fetchmany(row_cap + 1)
                truncated = len(fetched) > row_cap
                if truncated:
                    fetched = fetched[:row_cap]
        except sqlite3.Error as exc:
            return ExecError(phase="execute", message=str(exc), sql=sql)
        description = cur.description or []
        columns = [(d[0], "") for d in description]
        rows = [[_to_cell(v) for v in row] for row in fetched]
        return ResultTable(columns=columns, rows=rows, truncated=truncated)
    finally:
        cur.close()


def catalog(conn: Connection) -> dict:
    """Return raw catalog rows: user tables, their columns, and key constraints.

    System/internal tables are excluded. Shape:
      tables:       sorted list of table names
      columns:      table -> [{name, declared_type, notnull, pk}] in schema order
      foreign_keys: table -> [{columns, referenced_table, referenced_columns}]
    """
    cur = conn.raw.cursor()
    try:
        cur.execute(
            "SELECT name FROM sqlite_master "
            "WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        )
        tables = [row[0] for row in cur.fetchall()]
        columns: dict[str, list[dict]] = {}
        foreign_keys: dict[str, list[dict]] = {}
        for table in tables:
            cur.execute(f'PRAGMA table_info("{_escape_ident(table)}")')
            columns[table] = [
                {
                    "name": row[1],
                    "declared_type": row[2] or "",
                    "notnull": bool(row[3]),
                    "pk": int(row[5]),
                }
                for row in cur.fetchall()
            ]
            cur.execute(f'PRAGMA foreign_key_list("{_escape_ident(table)}")')
            grouped: dict[int, dict] = {}
            for row in cur.fetchall():
                fk_id, seq, ref_table, local_col, ref_col = row[0], row[1], row[2], row[3], row[4]
                entry = grouped.setdefault(
                    fk_id,
                    {"columns": [], "referenced_table": ref_table, "referenced_columns": []},
                )
                entry["columns"].append((seq, local_col))
                entry["referenced_columns"].append((seq, ref_col))
            fks = []
            for fk_id in sorted(grouped):
                entry = grouped[fk_id]
                fks.append(
                    {
                        "columns": [c for _, c in sorted(entry["columns"])],
                        "referenced_table": entry["referenced_table"],
                        "referenced_columns": [c for _, c in sorted(entry["referenced_columns"])],
                    }
                )
            foreign_keys[table] = fks
        return {"tables": tables, "columns": columns, "foreign_keys": foreign_keys}
    except sqlite3.Error as exc:
        raise ExecFailure(ExecError(phase="execute", message=str(exc), sql="<catalog>")) from exc
    finally:
        cur.close()


def _escape_ident(name: str) -> str:
    return name.replace('"', '""')
