"""Deterministic SQL safety checks, limit probes, and result comparison.

guard_check classifies a statement at the statement-class level: is it
exactly one read-only query? Full dialect validation is deliberately left to
the engine's own dry-run — the engine is the only authority on its grammar;
the guard's job is safety and fast rejection. The tokenizer is quote- and
comment-aware so string literals can never smuggle keywords past it.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

from .db_connector import Connection, ExecError, ResultTable, execute

PROBE_ROWS_DEFAULT = 10
FLOAT_DECIMALS = 6

OK = "ok"
SYNTAX_ERROR = "syntax_error"
READ_ONLY_VIOLATION = "read_only_violation"
MULTI_STATEMENT = "multi_statement"

# Statement starters that modify data, schema, or connection state.
_WRITE_STARTERS = {
    "INSERT", "UPDATE", "DELETE", "REPLACE", "MERGE", "UPSERT",
    "CREATE", "DROP", "ALTER", "TRUNCATE", "RENAME",
    "GRANT", "REVOKE",
    "BEGIN", "COMMIT", "ROLLBACK", "SAVEPOINT", "RELEASE", "END",
    "ATTACH", "DETACH", "PRAGMA", "VACUUM", "REINDEX", "ANALYZE",
    "SET", "USE", "CALL", "EXEC", "EXECUTE", "COPY", "LOAD", "UNLOAD",
    "LOCK", "DO",
}

# Verbs that may follow a WITH clause; only SELECT is read-only.
_MAIN_VERBS = {"SELECT", "INSERT", "UPDATE", "DELETE", "REPLACE", "MERGE", "VALUES"}


class PreconditionViolation(Exception):
    """An operation was called on SQL that guard_check did not pass."""


@dataclass
class GuardVerdict:
    status: str
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OK


@dataclass
class _Statement:
    text: str
    words: list  # (WORD, paren_depth) pairs, in order


def _split_statements(sql: str) -> list[_Statement]:
    """Split on semicolons outside strings, quoted identifiers, and comments,
    collecting bare words with their parenthesis depth along the way."""
    statements: list[_Statement] = []
    text_start = 0
    words: list = []
    depth = 0
    i = 0
    n = len(sql)

    def flush(end: int) -> None:
        nonlocal text_start, words, depth
        text = sql[text_start:end].strip()
        if text:
            statements.append(_Statement(text=text, words=words))
        text_start = end + 1
        words = []
        depth = 0

    while i < n:
        ch = sql[i]
        if ch == "'" or ch == '"' or ch == "`":
            quote = ch
            i += 1
            while i < n:
                if sql[i] == quote:
                    if i + 1 < n and sql[i + 1] == quote:  # doubled-quote escape
                        i += 2
                        continue
                    i += 1
                    break
                i += 1
            continue
        if ch == "[":  # bracket-quoted identifier
            end = sql.find("]", i + 1)
            i = n if end == -1 else end + 1
            continue
        if ch == "-" and sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end == -1 else end + 1
            continue
        if ch == "/" and sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end == -1 else end + 2
            continue
        if ch == "(":
            depth += 1
            i += 1
            continue
        if ch == ")":
            depth = max(0, depth - 1)
            i += 1
            continue
        if ch == ";":
            flush(i)
            i += 1
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (sql[j].isalnum() or sql[j] == "_"):
                j += 1
            words.append((sql[i:j].upper(), depth))
            i = j
            continue
        i += 1

    flush(n)
    return statements


def guard_check(sql: str) -> GuardVerdict:
    """Classify a SQL string. ok iff it is exactly one read-only query
    (SELECT, or WITH ... SELECT). Pure function; never raises."""
    statements = _split_statements(sql)
    if len(statements) == 0:
        return GuardVerdict(SYNTAX_ERROR, "empty statement")
    if len(statements) > 1:
        return GuardVerdict(MULTI_STATEMENT, f"{len(statements)} statements found; exactly one allowed")

    stmt = statements[0]
    if not stmt.words:
        return GuardVerdict(SYNTAX_ERROR, "no SQL keywords found")
    first = stmt.words[0][0]

    if first == "SELECT":
        for word, d in stmt.words:
            if word == "INTO" and d == 0:
                return GuardVerdict(READ_ONLY_VIOLATION, "SELECT INTO creates a table")
        return GuardVerdict(OK)

    if first == "WITH":
        # The CTE bodies live inside parentheses; the statement's main verb is
        # the first verb keyword at depth 0 after the WITH prefix.
        verb = next((w for w, d in stmt.words[1:] if d == 0 and w in _MAIN_VERBS), None)
        if verb == "SELECT":
            return GuardVerdict(OK)
        if verb is None:
            return GuardVerdict(SYNTAX_ERROR, "WITH clause without a main SELECT")
        return GuardVerdict(READ_ONLY_VIOLATION, f"WITH ... {verb} modifies data")

    if first in _WRITE_STARTERS:
        return GuardVerdict(READ_ONLY_VIOLATION, f"{first} statements are not allowed; queries only")

    return GuardVerdict(SYNTAX_ERROR, f"not a query: statement starts with {first!r}")


def build_probe(sql: str, n: int) -> str:
    """Wrap a query so it returns at most n rows.

    Wrapping is unconditional: nesting takes the minimum when the inner query
    carries its own LIMIT. Trailing semicolons are stripped first.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    verdict = guard_check(sql)
    if not verdict.ok:
        raise PreconditionViolation(f"guard_check failed: {verdict.status}: {verdict.detail}")
    inner = sql.strip()
    while inner.endswith(";"):
        inner = inner[:-1].rstrip()
    return f"SELECT * FROM ({inner}) AS _probe LIMIT {n}"


def dry_run(conn: Connection, sql: str, n: int = PROBE_ROWS_DEFAULT) -> ResultTable | ExecError:
    """Execute the limit probe for a guard-approved query.

    Zero rows is a pass for this stage (emptiness is judged semantically,
    not syntactically); engine errors pass through verbatim so the
    refinement prompt sees the exact message.
    """
    return execute(conn, build_probe(sql, n), row_cap=n)


def canonical_cell(value):
    """Total, deterministic cell canonicalization: None stays None, bools
    collapse to ints, floats round to 6 decimal places, bytes hex-encode."""
    if value is None:
        return None
    if isinstance(value, bool):
        return int(value)
    if isinstance(value, float):
        return round(value, FLOAT_DECIMALS)
    if isinstance(value, bytes):
        return value.hex()
    return value


def normalized_rows(table: ResultTable) -> Counter:
    """The order-insensitive form of a result: a multiset of canonicalized
    row tuples. Column names are ignored; cell order within a row matters."""
    return Counter(tuple(canonical_cell(v) for v in row) for row in table.rows)


def rows_equal(a: ResultTable, b: ResultTable) -> bool:
    """Execution-match comparison: equal multisets of canonicalized rows.

    Row order is irrelevant, duplicates count, column names are ignored,
    floats compare after rounding (tolerance 1e-6 by construction).
    """
    return normalized_rows(a) == normalized_rows(b)
