from __future__ import annotations

import sqlite3

import pytest


@pytest.fixture()
def patents_path(tmp_path):
    """A small patents-style database, enough for aggregate oracles."""
    path = tmp_path / "patents.db"
    conn = sqlite3.connect(path)
    conn.execute("CREATE TABLE TECH_CLASS (field_code TEXT, description TEXT)")
    conn.executemany(
        "INSERT INTO TECH_CLASS VALUES (?, ?)",
        [(f"MS-{i:02d}", f"materials science area {i}") for i in range(1, 10)]
        + [("EE-01", "electrical engineering"), ("CH-02", "chemistry")],
    )
    conn.execute("CREATE TABLE CITATION_RECORD (patent_id TEXT, cited_id TEXT)")
    conn.executemany(
        "INSERT INTO CITATION_RECORD VALUES (?, ?)",
        [(f"P{i}", f"C{i}") for i in range(7)],
    )
    conn.commit()
    conn.close()
    return str(path)
