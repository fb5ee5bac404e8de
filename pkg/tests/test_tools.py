from __future__ import annotations

import random

import pytest

from sqlscout.agent import ToolCallRequest
from sqlscout.context import group_time_suffix_tables, prune_null_columns
from sqlscout.dblayer import snapshot_hierarchy
from sqlscout.tools import (
    DISTINCT_VALUES_CAP,
    FIND_ROWS_CAP,
    RENDER_BUDGET,
    ToolSession,
    tool_specs_openai,
)


@pytest.fixture()
def patents_session(patents_db):
    snap = snapshot_hierarchy(patents_db)
    return ToolSession(patents_db, prune_null_columns(snap))


@pytest.fixture()
def misc_session(misc_db):
    snap, groups = group_time_suffix_tables(prune_null_columns(snapshot_hierarchy(misc_db)))
    return ToolSession(misc_db, snap, groups=groups)


class TestSpecs:
    def test_six_tools(self):
        specs = tool_specs_openai()
        names = {s["function"]["name"] for s in specs}
        assert names == {"GetSchema", "GetTableCol", "GetColValues", "FindRows", "SQLExecutor", "PythonExecutor"}

    def test_wire_shape(self):
        spec = tool_specs_openai(["FindRows"])[0]
        fn = spec["function"]
        assert spec["type"] == "function"
        assert fn["parameters"]["required"] == ["term", "column_name", "table_name"]
        assert "additional_columns" in fn["parameters"]["properties"]


class TestGetSchema:
    def test_patents_main(self, patents_session):
        res = patents_session.get_schema("main")
        assert not res.is_error
        assert len(res.payload) == 5
        assert "TECH_CLASS" in res.payload

    def test_unknown_schema_lists_valid(self, patents_session):
        res = patents_session.get_schema("NoSuch")
        assert res.is_error and "main" in res.rendered

    def test_grouped_rendering(self, misc_session):
        res = misc_session.get_schema("main")
        assert any("GA_SESSION_* (2 tables: 20240101…20240202)" == p for p in res.payload)
        assert "GA_SESSION_20240202" not in res.rendered
        # different column signature: not grouped
        assert "GA_OTHER_20240101" in res.payload


class TestGetTableCol:
    def test_field_code_present(self, patents_session):
        res = patents_session.get_table_col("TECH_CLASS")
        names = [c[0] for c in res.payload]
        assert "field_code" in names

    def test_unknown_table(self, patents_session):
        assert patents_session.get_table_col("nope").is_error

    def test_all_null_column_absent(self, misc_session):
        res = misc_session.get_table_col("EVENTS")
        assert [c[0] for c in res.payload] == ["id", "label"]


class TestGetColValues:
    def test_ms_codes(self, patents_session):
        res = patents_session.get_col_values("field_code", "TECH_CLASS")
        for code in [f"MS-0{i}" for i in range(1, 10)]:
            assert code in res.payload

    def test_empty_column(self, misc_session):
        res = misc_session.get_col_values("a", "EMPTY_TBL")
        assert res.payload == [] and not res.is_error

    def test_cap_with_notice(self, misc_session):
        res = misc_session.get_col_values("code", "WIDE_VALUES")
        assert len(res.payload) == DISTINCT_VALUES_CAP
        assert "truncated" in res.rendered

    def test_matches_select_distinct(self, patents_db, patents_session):
        snap = patents_session.snapshot
        rng = random.Random(13)
        pairs = [(t.qualified_name, c.name) for t in snap.tables for c in t.columns]
        for tname, cname in rng.sample(pairs, min(8, len(pairs))):
            res = patents_session.get_col_values(cname, tname)
            oracle = [
                r[0]
                for r in patents_db.connection.execute(
                    f'SELECT DISTINCT "{cname}" FROM "{tname}" WHERE "{cname}" IS NOT NULL'
                )
            ]
            assert sorted(map(str, res.payload)) == sorted(map(str, oracle[:DISTINCT_VALUES_CAP]))


class TestFindRows:
    def test_materials_search(self, patents_session):
        res = patents_session.find_rows("materials", "description", "TECH_CLASS", ["field_code"])
        assert not res.is_error
        codes = {row[1] for row in res.payload.rows}
        assert "MS-01" in codes

    def test_absent_term(self, patents_session):
        res = patents_session.find_rows("zzznope", "description", "TECH_CLASS", [])
        assert not res.is_error and res.payload.rows == []

    def test_missing_additional_column(self, patents_session):
        res = patents_session.find_rows("materials", "description", "TECH_CLASS", ["bogus"])
        assert res.is_error

    def test_case_insensitive_containment_oracle(self, patents_db, patents_session):
        res = patents_session.find_rows("MATERIALS", "description", "TECH_CLASS", [])
        oracle = [
            r[0]
            for r in patents_db.connection.execute("SELECT description FROM TECH_CLASS")
            if r[0] and "materials" in r[0].lower()
        ][:FIND_ROWS_CAP]
        assert [row[0] for row in res.payload.rows] == oracle


class TestExecutors:
    def test_sql_count(self, patents_session):
        res = patents_session.sql_executor(
            "SELECT COUNT(*) FROM FILING_INFO WHERE filing_date BETWEEN '2014-01-01' AND '2014-03-31'"
        )
        assert not res.is_error and res.payload.rows == [(5,)]

    def test_sql_error_is_data(self, patents_session):
        res = patents_session.sql_executor("SELEC broken")
        assert res.is_error and "SQL error" in res.rendered

    def test_exploration_truncation(self, misc_session):
        res = misc_session.sql_executor("SELECT * FROM BIG")
        assert len(res.payload.rows) == 100 and "500 rows" in res.rendered

    def test_python_without_sandbox(self, patents_session):
        res = patents_session.python_executor("x = 1")
        assert res.is_error


class StubSandbox:
    def __init__(self):
        self.ns = {}

    def exec(self, code):
        import io
        import contextlib

        buf = io.StringIO()
        try:
            with contextlib.redirect_stdout(buf):
                try:
                    value = eval(code, self.ns)
                    value_repr = "" if value is None else repr(value)
                except SyntaxError:
                    exec(code, self.ns)
                    value_repr = ""
        except Exception as exc:
            return {"status": "ERROR", "stdout": buf.getvalue(), "error": repr(exc), "value_repr": ""}
        return {"status": "OK", "stdout": buf.getvalue(), "value_repr": value_repr}


class TestPythonExecutor:
    def test_stateful(self, patents_db, patents_session):
        patents_session.sandbox = StubSandbox()
        patents_session.python_executor("x = 1")
        res = patents_session.python_executor("x + 1")
        assert res.rendered.strip() == "2"

    def test_exception_is_error(self, patents_session):
        patents_session.sandbox = StubSandbox()
        res = patents_session.python_executor("1/0")
        assert res.is_error and "ZeroDivisionError" in res.rendered


class TestDispatch:
    def _call(self, name, **args):
        return ToolCallRequest(id="c1", name=name, arguments=args)

    def test_routed_and_recorded(self, patents_session):
        res = patents_session.dispatch(self._call("GetSchema", schema_name="main"))
        assert not res.is_error
        assert len(patents_session.records) == 1
        assert patents_session.records[0].tool_name == "GetSchema"

    def test_missing_argument(self, patents_session):
        res = patents_session.dispatch(self._call("GetColValues", table_name="TECH_CLASS"))
        assert res.is_error and "column_name" in res.rendered

    def test_unknown_tool(self, patents_session):
        res = patents_session.dispatch(self._call("Nope"))
        assert res.is_error

    def test_sequence_numbers(self, patents_session):
        for _ in range(3):
            patents_session.dispatch(self._call("GetSchema", schema_name="main"))
        assert [r.sequence_no for r in patents_session.records] == [1, 2, 3]

    def test_restricted_registry(self, patents_session):
        res = patents_session.dispatch(self._call("SQLExecutor", sql_query="SELECT 1"), allowed=["GetSchema"])
        assert res.is_error

    def test_render_budget(self, misc_session):
        res = misc_session.sql_executor("SELECT n, n, n, n, n, n FROM BIG")
        assert len(res.rendered) <= RENDER_BUDGET
