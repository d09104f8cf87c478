import json

import pytest

from nlquery.db_connector import execute
from nlquery.schema_scanner import (
    ScanError,
    ScanOptions,
    SchemaSnapshot,
    render_chunks,
    scan,
    type_class,
)

CATEGORICAL_DDL = """
CREATE TABLE orders (
    id INTEGER PRIMARY KEY,
    status TEXT
);
INSERT INTO orders (status) VALUES ('open'), ('shipped'), ('cancelled'), ('open');
"""


def _snapshot_dict_without_timestamp(snapshot):
    d = snapshot.to_dict()
    d.pop("scanned_at")
    return d


def test_scan_fixture_tables_and_fk_edges(shop_conn):
    snapshot = scan(shop_conn)
    # Oracle: the fixture DDL declares customer, orders, product, with two
    # FK edges out of orders (customer_id -> customer, product_id -> product).
    assert [t.name for t in snapshot.tables] == ["customer", "orders", "product"]
    orders = next(t for t in snapshot.tables if t.name == "orders")
    edges = {
        (fk["local_columns"][0], fk["referenced_table"], fk["referenced_columns"][0])
        for fk in orders.foreign_keys
    }
    assert edges == {("customer_id", "customer", "id"), ("product_id", "product", "id")}
    assert sum(len(t.foreign_keys) for t in snapshot.tables) == 2


def test_scan_empty_database(make_conn):
    conn = make_conn("SELECT 1;", name="empty")
    snapshot = scan(conn)
    assert snapshot.tables == []


def test_scan_harvests_categorical_values(make_conn):
    conn = make_conn(CATEGORICAL_DDL)
    snapshot = scan(conn, ScanOptions(categorical_max_distinct=20))
    orders = snapshot.tables[0]
    assert orders.categorical_values["status"] == ["cancelled", "open", "shipped"]


def test_scan_skips_high_cardinality_columns(make_conn):
    values = ", ".join(f"('v{i:02d}')" for i in range(25))
    conn = make_conn(f"CREATE TABLE t (x TEXT); INSERT INTO t VALUES {values};")
    snapshot = scan(conn, ScanOptions(categorical_max_distinct=20))
    assert "x" not in snapshot.tables[0].categorical_values


def test_scan_ignores_non_text_columns_for_harvest(make_conn):
    conn = make_conn("CREATE TABLE t (n INTEGER); INSERT INTO t VALUES (1), (2);")
    snapshot = scan(conn)
    assert snapshot.tables[0].categorical_values == {}


def test_scan_respects_max_tables(shop_conn):
    snapshot = scan(shop_conn, ScanOptions(max_tables=1))
    assert [t.name for t in snapshot.tables] == ["customer"]


def test_scan_drops_fk_to_table_outside_snapshot(shop_conn):
    # max_tables=2 keeps customer and orders; the orders -> product edge
    # cannot be represented and is dropped, the customer edge survives.
    snapshot = scan(shop_conn, ScanOptions(max_tables=2))
    orders = next(t for t in snapshot.tables if t.name == "orders")
    assert [fk["referenced_table"] for fk in orders.foreign_keys] == ["customer"]


def test_scan_row_counts(shop_conn):
    snapshot = scan(shop_conn)
    counts = {t.name: t.approx_row_count for t in snapshot.tables}
    # Oracle: count each table directly.
    for name in counts:
        expected = execute(shop_conn, f"SELECT COUNT(*) FROM {name}").rows[0][0]
        assert counts[name] == expected


def test_scan_idempotent_up_to_timestamp(shop_conn):
    a = scan(shop_conn)
    b = scan(shop_conn)
    assert _snapshot_dict_without_timestamp(a) == _snapshot_dict_without_timestamp(b)


def test_scan_error_on_broken_database(tmp_path):
    from nlquery.db_connector import ConnectionProfile, connect

    bad = tmp_path / "garbage.sqlite"
    bad.write_bytes(b"this is not a sqlite file at all, padded " * 4)
    conn = connect(ConnectionProfile(name="bad", kind="embedded-file", location=str(bad)))
    try:
        with pytest.raises(ScanError):
            scan(conn)
    finally:
        conn.close()


def test_type_class_buckets():
    assert type_class("VARCHAR(40)") == "text"
    assert type_class("TEXT") == "text"
    assert type_class("INTEGER") == "integer"
    assert type_class("BIGINT") == "integer"
    assert type_class("REAL") == "real"
    assert type_class("DOUBLE") == "real"
    assert type_class("") == "blob"
    assert type_class("DECIMAL(10,2)") == "numeric"


def test_invariants_hold_on_fixture(shop_conn):
    snapshot = scan(shop_conn)
    names = [t.name for t in snapshot.tables]
    assert len(names) == len(set(names))
    by_name = {t.name: t for t in snapshot.tables}
    for table in snapshot.tables:
        col_names = {c["name"] for c in table.columns}
        assert set(table.primary_key) <= col_names
        for fk in table.foreign_keys:
            target = by_name[fk["referenced_table"]]
            assert set(fk["referenced_columns"]) <= {c["name"] for c in target.columns}
        for col, values in table.categorical_values.items():
            assert col in col_names
            assert len(values) <= snapshot.scan_options.categorical_max_distinct


def test_render_chunks_one_per_table(shop_conn):
    snapshot = scan(shop_conn)
    chunks = render_chunks(snapshot)
    assert len(chunks) == len(snapshot.tables) == 3
    assert all(c.kind == "table_doc" for c in chunks)
    assert [c.source_ref for c in chunks] == ["customer", "orders", "product"]


def test_render_chunk_contents(shop_conn):
    snapshot = scan(shop_conn)
    chunks = {c.source_ref: c.text for c in render_chunks(snapshot)}
    orders = chunks["orders"]
    assert "customer_id" in orders
    assert "customer" in orders  # FK target table name
    for value in ("open", "shipped", "cancelled"):
        assert value in orders
    # every column with its type
    for col in ("id", "customer_id", "product_id", "quantity", "status", "order_year"):
        assert col in orders
    assert "INTEGER" in orders and "TEXT" in orders
    assert "Primary key: id" in orders


def test_render_is_deterministic(shop_conn):
    a = render_chunks(scan(shop_conn))
    b = render_chunks(scan(shop_conn))
    assert [c.text for c in a] == [c.text for c in b]
    assert [c.id for c in a] == [c.id for c in b]


def test_every_column_in_its_table_chunk(shop_conn):
    snapshot = scan(shop_conn)
    chunks = {c.source_ref: c.text for c in render_chunks(snapshot)}
    for table in snapshot.tables:
        for col in table.columns:
            assert col["name"] in chunks[table.name]


def test_unique_column_names_appear_in_exactly_one_chunk(shop_conn):
    snapshot = scan(shop_conn)
    chunks = render_chunks(snapshot)
    # signup_year / order_year / price are unique to one table and not
    # referenced by any foreign key, so exactly one chunk mentions them.
    for unique_col in ("signup_year", "order_year", "price"):
        hits = [c.source_ref for c in chunks if unique_col in c.text]
        assert len(hits) == 1


def test_snapshot_json_roundtrip(shop_conn):
    snapshot = scan(shop_conn)
    data = json.loads(snapshot.to_canonical_json())
    restored = SchemaSnapshot.from_dict(data)
    assert restored.to_canonical_json() == snapshot.to_canonical_json()


def test_canonical_json_is_stable(shop_conn):
    snapshot = scan(shop_conn)
    assert snapshot.to_canonical_json() == snapshot.to_canonical_json()
    assert '"database_name"' in snapshot.to_canonical_json()
