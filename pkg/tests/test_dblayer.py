from __future__ import annotations

import random

import pytest

from sqlscout.dblayer import (
    Dialect,
    ExecError,
    ExecLimits,
    ResultTable,
    canonicalize,
    detect_order_sensitive,
    execute_sql,
    open_database,
    results_equivalent,
    snapshot_hierarchy,
    table_checksum,
)
from sqlscout.errors import NotFoundError, UnsupportedDialectError


class TestOpen:
    def test_open_fixture(self, patents_path):
        db = open_database(str(patents_path), Dialect.SQLITE, read_only=True)
        assert db.read_only
        db.close()

    def test_missing_file(self, tmp_path):
        with pytest.raises(NotFoundError):
            open_database(str(tmp_path / "missing.db"))

    def test_unsupported_dialect(self, patents_path):
        with pytest.raises(UnsupportedDialectError) as exc:
            open_database(str(patents_path), Dialect.SNOWFLAKE_LIKE)
        assert "SNOWFLAKE_LIKE" in str(exc.value)

    def test_read_only_rejects_writes(self, patents_db):
        before = table_checksum(patents_db)
        res = execute_sql(patents_db, "INSERT INTO TECH_CLASS VALUES (99, 'XX-99', 'bogus')")
        assert isinstance(res, ExecError)
        assert before == table_checksum(patents_db)


class TestSnapshot:
    def test_patents_tables(self, patents_db):
        snap = snapshot_hierarchy(patents_db)
        assert len(snap.schemas) == 1 and snap.schemas[0].name == "main"
        names = {t.qualified_name for t in snap.tables}
        assert names == {"TECH_CLASS", "FILING_INFO", "CITATION_RECORD", "FOREIGN_REFS", "APP_REFS"}

    def test_empty_database(self, tmp_path):
        import sqlite3

        p = tmp_path / "empty.db"
        sqlite3.connect(p).close()
        db = open_database(str(p))
        snap = snapshot_hierarchy(db)
        assert len(snap.schemas) == 1 and snap.schemas[0].tables == []
        db.close()

    def test_all_null_flag(self, misc_db):
        snap = snapshot_hierarchy(misc_db)
        events = snap.find_table("EVENTS")
        flags = {c.name: c.all_null for c in events.columns}
        assert flags == {"id": False, "label": False, "dead_col": True}

    def test_zero_row_table_not_all_null(self, misc_db):
        snap = snapshot_hierarchy(misc_db)
        empty = snap.find_table("EMPTY_TBL")
        assert all(not c.all_null for c in empty.columns)

    def test_sample_values_capped(self, patents_db):
        snap = snapshot_hierarchy(patents_db)
        tech = snap.find_table("TECH_CLASS")
        for col in tech.columns:
            assert len(col.sample_values) <= 3


class TestExecute:
    def test_select_literal(self, patents_db):
        res = execute_sql(patents_db, "SELECT 1 AS x")
        assert isinstance(res, ResultTable)
        assert res.column_names == ["x"] and res.rows == [(1,)]

    def test_missing_table(self, patents_db):
        res = execute_sql(patents_db, "SELECT * FROM no_such_table")
        assert isinstance(res, ExecError)
        assert "no_such_table" in res.message

    def test_q1_2014_count(self, patents_db):
        from fixtures import Q1_2014_FILING_COUNT

        res = execute_sql(
            patents_db,
            "SELECT COUNT(*) FROM FILING_INFO "
            "WHERE filing_date >= '2014-01-01' AND filing_date <= '2014-03-31'",
        )
        assert res.rows == [(Q1_2014_FILING_COUNT,)]

    def test_truncation(self, misc_db):
        res = execute_sql(misc_db, "SELECT * FROM BIG", ExecLimits(max_rows=100))
        assert len(res.rows) == 100
        assert res.truncated
        assert res.row_count_before_truncation == 500

    def test_no_truncation_flag_when_exact(self, misc_db):
        res = execute_sql(misc_db, "SELECT * FROM BIG LIMIT 50", ExecLimits(max_rows=100))
        assert not res.truncated and len(res.rows) == 50


def _table(rows, cols=("a", "b")):
    return ResultTable(column_names=list(cols), rows=[tuple(r) for r in rows])


class TestCanonicalize:
    def test_empty_table_stable(self):
        t = _table([])
        assert canonicalize(t).digest == canonicalize(t).digest

    def test_permutation_invariance(self):
        a = _table([(1, "x"), (2, "y")])
        b = _table([(2, "y"), (1, "x")])
        assert canonicalize(a).digest == canonicalize(b).digest
        assert canonicalize(a, order_sensitive=True).digest != canonicalize(b, order_sensitive=True).digest

    def test_numeric_tolerance(self):
        a = _table([(0.3000000001, "x")])
        b = _table([(0.3, "x")])
        assert canonicalize(a).digest == canonicalize(b).digest

    def test_beyond_tolerance(self):
        a = _table([(0.3, "x")])
        b = _table([(0.3003, "x")])
        assert canonicalize(a).digest != canonicalize(b).digest

    def test_case_insensitive_columns(self):
        a = ResultTable(column_names=["Total"], rows=[(1,)])
        b = ResultTable(column_names=["TOTAL"], rows=[(1,)])
        assert canonicalize(a).digest == canonicalize(b).digest

    def test_trailing_whitespace_trimmed(self):
        assert canonicalize(_table([("x  ", 1)])).digest == canonicalize(_table([("x", 1)])).digest

    def test_integral_real_matches_integer(self):
        assert canonicalize(_table([(5.0, "x")])).digest == canonicalize(_table([(5, "x")])).digest

    def test_idempotence(self):
        t = _table([(1.23456789, "s "), (None, "q")])
        c1 = canonicalize(t)
        t2 = ResultTable(column_names=c1.column_names, rows=list(c1.normalized_rows))
        assert canonicalize(t2).digest == c1.digest

    def test_nulls_sort_first(self):
        c = canonicalize(_table([(1, "x"), (None, "y")]))
        assert c.normalized_rows[0][0] is None


class TestEquivalence:
    def test_reflexive(self):
        t = _table([(1, "x")])
        assert results_equivalent(t, t)

    def test_row_order(self):
        assert results_equivalent(_table([(1, "x"), (2, "y")]), _table([(2, "y"), (1, "x")]))

    def test_cell_mutation(self):
        assert not results_equivalent(_table([(1, "x")]), _table([(1, "z")]))

    def test_equivalence_relation_properties(self):
        rng = random.Random(7)
        tables = []
        for _ in range(30):
            rows = [
                (rng.choice([None, rng.randint(0, 2), rng.random(), "s"]),)
                for _ in range(rng.randint(0, 3))
            ]
            tables.append(ResultTable(column_names=["c"], rows=rows))
        for a in tables:
            assert results_equivalent(a, a)
        for a in tables:
            for b in tables:
                assert results_equivalent(a, b) == results_equivalent(b, a)
        for a in tables:
            for b in tables:
                for c in tables:
                    if results_equivalent(a, b) and results_equivalent(b, c):
                        assert results_equivalent(a, c)


class TestOrderDetection:
    def test_top_level_order_by(self):
        assert detect_order_sensitive("SELECT * FROM t ORDER BY a")

    def test_subquery_order_by_ignored(self):
        assert not detect_order_sensitive("SELECT * FROM (SELECT * FROM t ORDER BY a) sub")

    def test_order_by_in_string_literal_ignored(self):
        assert not detect_order_sensitive("SELECT 'ORDER BY x' FROM t")
