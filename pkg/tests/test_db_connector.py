from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from nlquery.db_connector import (
    ConnectFailure,
    ConnectionProfile,
    ExecError,
    ResultTable,
    catalog,
    connect,
    execute,
)

from conftest import SHOP_DB_PATH


def test_connect_smoke(shop_profile):
    conn = connect(shop_profile)
    try:
        result = execute(conn, "SELECT 1")
        assert isinstance(result, ResultTable)
    finally:
        conn.close()


def test_connect_nonexistent_path():
    profile = ConnectionProfile(name="ghost", kind="embedded-file", location="/nope/missing.sqlite")
    with pytest.raises(ConnectFailure):
        connect(profile)


def test_connect_network_kind_not_bundled(tmp_path):
    profile = ConnectionProfile(name="remote", kind="network", location="db://host/db")
    with pytest.raises(ConnectFailure):
        connect(profile)


def test_profile_validation():
    with pytest.raises(ValueError):
        ConnectionProfile(name="", kind="embedded-file", location="x")
    with pytest.raises(ValueError):
        ConnectionProfile(name="x", kind="embedded-file", location="x", default_row_cap=0)
    with pytest.raises(ValueError):
        ConnectionProfile(name="x", kind="weird", location="x")


def test_execute_select_one(shop_conn):
    result = execute(shop_conn, "SELECT 1 AS x")
    assert result.column_names == ["x"]
    assert result.rows == [[1]]
    assert result.truncated is False


def test_execute_malformed_keyword(shop_conn):
    result = execute(shop_conn, "SELEC 1")
    assert isinstance(result, ExecError)
    assert result.phase == "prepare"
    assert result.message


def test_execute_row_cap_truncates(shop_conn):
    # Oracle: count the customer rows directly.
    total = execute(shop_conn, "SELECT COUNT(*) FROM customer").rows[0][0]
    assert total == 3

    result = execute(shop_conn, "SELECT id FROM customer", row_cap=2)
    assert len(result.rows) == 2
    assert result.truncated is True

    full = execute(shop_conn, "SELECT id FROM customer", row_cap=10)
    assert len(full.rows) == 3
    assert full.truncated is False


@pytest.mark.parametrize("cap", [1, 2, 3, 5, 100])
def test_execute_row_cap_upper_bound(shop_conn, cap):
    result = execute(shop_conn, "SELECT id FROM orders", row_cap=cap)
    assert len(result.rows) <= cap


def test_execute_rejects_bad_cap(shop_conn):
    with pytest.raises(ValueError):
        execute(shop_conn, "SELECT 1", row_cap=0)


def test_execute_is_read_only(shop_conn):
    result = execute(shop_conn, "INSERT INTO customer VALUES (99, 'Mallory', 'X', 2024)")
    assert isinstance(result, ExecError)
    assert "readonly" in result.message.lower() or "read-only" in result.message.lower()


def test_reexecution_yields_same_multiset(shop_conn):
    a = execute(shop_conn, "SELECT name, city FROM customer")
    b = execute(shop_conn, "SELECT name, city FROM customer")
    assert Counter(map(tuple, a.rows)) == Counter(map(tuple, b.rows))


def test_blob_cells_hex_encoded(make_conn):
    conn = make_conn("CREATE TABLE b (x BLOB); INSERT INTO b VALUES (X'DEADBEEF');")
    result = execute(conn, "SELECT x FROM b")
    assert result.rows == [["deadbeef"]]


def test_catalog_lists_fixture_tables(shop_conn):
    cat = catalog(shop_conn)
    # Oracle: the fixture DDL declares exactly these three tables.
    assert cat["tables"] == ["customer", "orders", "product"]


def test_catalog_empty_database(make_conn):
    conn = make_conn("SELECT 1;", name="empty")
    assert catalog(conn)["tables"] == []


def test_catalog_excludes_internal_tables(make_conn):
    conn = make_conn(
        "CREATE TABLE t (a INTEGER PRIMARY KEY AUTOINCREMENT, b TEXT);"
        "INSERT INTO t (b) VALUES ('x');"
    )
    cat = catalog(conn)
    # AUTOINCREMENT creates sqlite_sequence; it must not surface.
    assert cat["tables"] == ["t"]


def test_catalog_foreign_key_constraint_rows(shop_conn):
    cat = catalog(shop_conn)
    # The fixture DDL declares orders.customer_id -> customer.id.
    fks = cat["foreign_keys"]["orders"]
    assert {
        "columns": ["customer_id"],
        "referenced_table": "customer",
        "referenced_columns": ["id"],
    } in fks


def test_catalog_column_shapes(shop_conn):
    cat = catalog(shop_conn)
    names = [c["name"] for c in cat["columns"]["customer"]]
    assert names == ["id", "name", "city", "signup_year"]
    by_name = {c["name"]: c for c in cat["columns"]["customer"]}
    assert by_name["id"]["pk"] == 1
    assert by_name["name"]["notnull"] is True
    assert by_name["city"]["notnull"] is False


@settings(max_examples=30, deadline=None)
@given(cap=st.integers(min_value=1, max_value=8))
def test_row_cap_property(cap):
    profile = ConnectionProfile(name="shop", kind="embedded-file", location=SHOP_DB_PATH)
    conn = connect(profile)
    try:
        result = execute(conn, "SELECT id FROM orders", row_cap=cap)
        assert len(result.rows) <= cap
        assert result.truncated == (cap < 6)
    finally:
        conn.close()


def test_result_table_roundtrip():
    table = ResultTable(columns=[("a", "INTEGER"), ("b", "")], rows=[[1, None], [2, "x"]], truncated=True)
    assert ResultTable.from_dict(table.to_dict()) == table
