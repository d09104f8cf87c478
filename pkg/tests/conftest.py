"""Shared fixtures: the bundled shop database, throwaway databases built from
inline DDL, and scripted-backend helpers."""

import os
import sqlite3

import pytest

from nlquery.db_connector import ConnectionProfile, connect
from nlquery.llm_gateway import Gateway, ScriptedBackend, ScriptEntry

REPO_ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SHOP_DB_PATH = os.path.join(REPO_ROOT, "benchmarks", "mini_bird", "databases", "shop", "shop.sqlite")
MINI_BIRD_DIR = os.path.join(REPO_ROOT, "benchmarks", "mini_bird")


@pytest.fixture
def shop_profile():
    return ConnectionProfile(name="shop", kind="embedded-file", location=SHOP_DB_PATH)


@pytest.fixture
def shop_conn(shop_profile):
    conn = connect(shop_profile)
    yield conn
    conn.close()


@pytest.fixture
def make_db(tmp_path):
    """Build a throwaway SQLite database from a SQL script; returns its path."""

    counter = {"n": 0}

    def build(script: str, name: str = None) -> str:
        counter["n"] += 1
        path = str(tmp_path / (name or f"db{counter['n']}.sqlite"))
        conn = sqlite3.connect(path)
        try:
            conn.executescript(script)
            conn.commit()
        finally:
            conn.close()
        return path

    return build


@pytest.fixture
def make_conn(make_db):
    """Build a throwaway database and hand back an open read-only connection."""

    opened = []

    def build(script: str, name: str = "fixture"):
        path = make_db(script, name=f"{name}.sqlite")
        conn = connect(ConnectionProfile(name=name, kind="embedded-file", location=path))
        opened.append(conn)
        return conn

    yield build
    for conn in opened:
        conn.close()


def scripted_gateway(*entries, retry_max=0) -> Gateway:
    """Gateway over a ScriptedBackend; entries are (template_id, contains, response)."""
    backend = ScriptedBackend([ScriptEntry(*e) for e in entries])
    return Gateway(backend, retry_max=retry_max, sleep=lambda s: None)
