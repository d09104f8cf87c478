import random

import pytest
from hypothesis import given, settings, strategies as st

from nlquery.db_connector import ExecError, ResultTable, execute
from nlquery.sql_guard import (
    GuardVerdict,
    PreconditionViolation,
    build_probe,
    canonical_cell,
    dry_run,
    guard_check,
    normalized_rows,
    rows_equal,
)

# --- guard_check -----------------------------------------------------------


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT 1",
        "select name from customer",
        "SELECT a FROM t WHERE x = 'DROP TABLE nope'",
        "WITH c AS (SELECT 1 AS x) SELECT x FROM c",
        "SELECT 1;",
        "  SELECT 1  -- trailing comment",
        "/* leading comment */ SELECT 2",
        'SELECT "weird;name" FROM t',
    ],
)
def test_guard_accepts_queries(sql):
    assert guard_check(sql).ok


@pytest.mark.parametrize(
    "sql",
    [
        "DROP TABLE t",
        "DELETE FROM t",
        "INSERT INTO t VALUES (1)",
        "UPDATE t SET a = 1",
        "CREATE TABLE t (a)",
        "ALTER TABLE t ADD COLUMN b",
        "PRAGMA journal_mode=WAL",
        "ATTACH DATABASE 'x' AS y",
        "BEGIN",
        "VACUUM",
        "REPLACE INTO t VALUES (1)",
        "WITH c AS (SELECT 1) DELETE FROM t",
        "SELECT a INTO newtable FROM t",
    ],
)
def test_guard_rejects_writes(sql):
    assert guard_check(sql).status == "read_only_violation"


@pytest.mark.parametrize(
    "sql",
    [
        "SELECT 1; SELECT 2",
        "SELECT 1; DROP TABLE t",
        "select 1;select 2;select 3",
    ],
)
def test_guard_rejects_multi_statement(sql):
    assert guard_check(sql).status == "multi_statement"


def test_semicolon_inside_string_is_one_statement():
    assert guard_check("SELECT 'a;b' FROM t").ok
    assert guard_check("SELECT 'a;DROP TABLE t;' FROM t").ok


@pytest.mark.parametrize("sql", ["", "   ", ";;", "SELEC 1", "???", "EXPLAIN SELECT 1"])
def test_guard_flags_non_queries(sql):
    assert guard_check(sql).status == "syntax_error"


def test_guard_detail_nonempty_unless_ok():
    for sql in ("SELECT 1", "DROP TABLE t", "SELECT 1; SELECT 2", "banana"):
        verdict = guard_check(sql)
        if verdict.ok:
            assert verdict.detail == ""
        else:
            assert verdict.detail


@settings(max_examples=300, deadline=None)
@given(st.text(max_size=200))
def test_guard_never_raises(sql):
    verdict = guard_check(sql)
    assert isinstance(verdict, GuardVerdict)
    assert verdict.status in ("ok", "syntax_error", "read_only_violation", "multi_statement")


@settings(max_examples=100, deadline=None)
@given(prefix=st.sampled_from(["DROP", "DELETE", "INSERT", "UPDATE", "CREATE", "ALTER"]),
       rest=st.text(alphabet="abc (),;'\"", max_size=50))
def test_guard_rejects_random_write_prefixes(prefix, rest):
    verdict = guard_check(f"{prefix} {rest}")
    assert verdict.status in ("read_only_violation", "multi_statement")


# --- build_probe / dry_run -------------------------------------------------


def test_build_probe_exact_shape():
    assert build_probe("SELECT a FROM t", 10) == "SELECT * FROM (SELECT a FROM t) AS _probe LIMIT 10"


def test_build_probe_strips_trailing_semicolon():
    assert build_probe("SELECT a FROM t;", 5) == "SELECT * FROM (SELECT a FROM t) AS _probe LIMIT 5"
    assert build_probe("  SELECT a FROM t ; ", 5) == "SELECT * FROM (SELECT a FROM t) AS _probe LIMIT 5"


def test_build_probe_requires_guard_ok():
    with pytest.raises(PreconditionViolation):
        build_probe("DROP TABLE t", 10)


def test_inner_limit_binds(make_conn):
    conn = make_conn(
        "CREATE TABLE t (a INTEGER); INSERT INTO t VALUES (1),(2),(3),(4),(5);"
    )
    probe = build_probe("SELECT a FROM t LIMIT 3", 10)
    result = execute(conn, probe)
    assert len(result.rows) == 3


def test_dry_run_on_fixture(shop_conn):
    result = dry_run(shop_conn, "SELECT name FROM customer")
    assert isinstance(result, ResultTable)
    assert 0 < len(result.rows) <= 10


def test_dry_run_unknown_column(shop_conn):
    result = dry_run(shop_conn, "SELECT nam FROM customer")
    assert isinstance(result, ExecError)
    assert "nam" in result.message  # engine names the unknown column


def test_dry_run_zero_rows_is_not_an_error(shop_conn):
    result = dry_run(shop_conn, "SELECT id FROM customer WHERE 1=0")
    assert isinstance(result, ResultTable)
    assert result.rows == []


def test_dry_run_with_cte(shop_conn):
    result = dry_run(shop_conn, "WITH c AS (SELECT id FROM customer) SELECT * FROM c")
    assert isinstance(result, ResultTable)
    assert len(result.rows) == 3


@pytest.mark.parametrize("n", [1, 2, 5, 10])
def test_probe_caps_rows(shop_conn, n):
    result = dry_run(shop_conn, "SELECT id FROM orders", n=n)
    assert len(result.rows) <= n


def test_probe_never_errors_when_query_would_not(shop_conn):
    # property on a small fixture-query corpus
    queries = [
        "SELECT * FROM customer",
        "SELECT name, city FROM customer ORDER BY name",
        "SELECT COUNT(*) FROM orders",
        "SELECT status, COUNT(*) FROM orders GROUP BY status",
        "SELECT c.name FROM customer c JOIN orders o ON o.customer_id = c.id",
        "SELECT price * 2 FROM product LIMIT 2",
        "WITH big AS (SELECT * FROM orders WHERE quantity > 1) SELECT id FROM big",
    ]
    for q in queries:
        direct = execute(shop_conn, q)
        assert isinstance(direct, ResultTable)
        for n in (1, 3, 50):
            probed = execute(shop_conn, build_probe(q, n))
            assert isinstance(probed, ResultTable), f"{q} failed under probe: {probed}"
            assert len(probed.rows) <= n


# --- rows_equal ------------------------------------------------------------


def _table(rows):
    width = len(rows[0]) if rows else 0
    return ResultTable(columns=[(f"c{i}", "") for i in range(width)], rows=rows)


def test_rows_equal_order_insensitive():
    assert rows_equal(_table([[1], [2]]), _table([[2], [1]]))


def test_rows_equal_is_multiset_not_set():
    assert not rows_equal(_table([[1], [1]]), _table([[1]]))


def test_rows_equal_float_rounding():
    assert rows_equal(_table([[0.3333333]]), _table([[0.33333334]]))
    assert not rows_equal(_table([[0.333]]), _table([[0.334]]))


def test_rows_equal_ignores_column_names():
    a = ResultTable(columns=[("x", "")], rows=[[1]])
    b = ResultTable(columns=[("totally_different", "")], rows=[[1]])
    assert rows_equal(a, b)


def test_rows_equal_cell_order_matters():
    assert not rows_equal(_table([[1, 2]]), _table([[2, 1]]))


def test_rows_equal_nulls():
    assert rows_equal(_table([[None, 1]]), _table([[None, 1]]))
    assert not rows_equal(_table([[None]]), _table([[0]]))


def test_canonical_cell_total():
    assert canonical_cell(None) is None
    assert canonical_cell(True) == 1
    assert canonical_cell(1.0000004) == 1.0
    assert canonical_cell(b"\xde\xad") == "dead"
    assert canonical_cell("x") == "x"


# brute-force oracle: canonicalize, sort both sides with a total-order key,
# compare lists (Python == makes 1 and 1.0 equal, matching the comparator)

def _oracle_equal(rows_a, rows_b):
    def cell_key(value):
        c = canonical_cell(value)
        if c is None:
            return (0, 0.0, "")
        if isinstance(c, (int, float)):
            return (1, float(c), "")
        return (2, 0.0, str(c))

    def row_key(row):
        return tuple(cell_key(v) for v in row)

    canon_a = [[canonical_cell(v) for v in row] for row in rows_a]
    canon_b = [[canonical_cell(v) for v in row] for row in rows_b]
    return sorted(canon_a, key=row_key) == sorted(canon_b, key=row_key)


_cell = st.one_of(
    st.none(),
    st.integers(min_value=-1000, max_value=1000),
    st.floats(min_value=-100, max_value=100, allow_nan=False, width=64),
    st.sampled_from(["a", "b", "open", "shipped", ""]),
)


@settings(max_examples=300, deadline=None)
@given(
    data=st.data(),
    width=st.integers(min_value=1, max_value=6),
)
def test_rows_equal_matches_oracle(data, width):
    row = st.lists(_cell, min_size=width, max_size=width)
    rows_a = data.draw(st.lists(row, max_size=20))
    # bias towards near-equal tables: half the time b is a shuffle/mutation of a
    if data.draw(st.booleans()):
        rows_b = [list(r) for r in rows_a]
        random.Random(data.draw(st.integers(0, 10000))).shuffle(rows_b)
        if rows_b and data.draw(st.booleans()):
            rows_b[0] = data.draw(row)
    else:
        rows_b = data.draw(st.lists(row, max_size=20))
    assert rows_equal(_table(rows_a), _table(rows_b)) == _oracle_equal(rows_a, rows_b)


@settings(max_examples=150, deadline=None)
@given(rows=st.lists(st.lists(_cell, min_size=2, max_size=2), max_size=10))
def test_rows_equal_reflexive(rows):
    assert rows_equal(_table(rows), _table(rows))


@settings(max_examples=150, deadline=None)
@given(
    rows_a=st.lists(st.lists(_cell, min_size=2, max_size=2), max_size=6),
    rows_b=st.lists(st.lists(_cell, min_size=2, max_size=2), max_size=6),
)
def test_rows_equal_symmetric(rows_a, rows_b):
    assert rows_equal(_table(rows_a), _table(rows_b)) == rows_equal(_table(rows_b), _table(rows_a))


def test_rows_equal_transitive_on_rounded_floats():
    a = _table([[0.1234564]])
    b = _table([[0.1234565]])  # rounds to 0.123456 or 0.123457? banker's: 0.123456
    c = _table([[0.12345649]])
    if rows_equal(a, b) and rows_equal(b, c):
        assert rows_equal(a, c)
    assert normalized_rows(a) == normalized_rows(_table([[0.123456401]]))
