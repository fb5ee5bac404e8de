import json

import pytest

from sqlscout.dblayer import ResultTable
from sqlscout.evalharness import (
    BenchmarkItem,
    GoldAnswer,
    RunRecord,
    aggregate_report,
    extract_tables,
    load_gold_csv,
    load_manifest,
    majority_at_k,
    pass_at_k,
    schema_linking_prf,
    score_result,
)
from sqlscout.pipeline import Candidate, Plan, Program


def table(cols, rows):
    return ResultTable(column_names=list(cols), rows=[tuple(r) for r in rows])


def gold(cols, rows, tables=(), order_sensitive=False):
    return GoldAnswer(
        result_table=table(cols, rows),
        gold_tables=set(tables),
        order_sensitive=order_sensitive,
    )


class TestScoreResult:
    def test_single_gold_match(self):
        out = score_result(table(["n"], [(7,)]), [gold(["n"], [(7,)])])
        assert out.correct and out.matched_gold_index == 0 and out.micro_credit == 1.0

    def test_single_gold_miss(self):
        out = score_result(table(["n"], [(8,)]), [gold(["n"], [(7,)])])
        assert not out.correct and out.matched_gold_index is None and out.micro_credit == 0.0

    def test_none_prediction(self):
        out = score_result(None, [gold(["n"], [(7,)])])
        assert not out.correct and out.micro_credit == 0.0

    def test_any_of_n_micro_credit(self):
        golds = [gold(["n"], [(1,)]), gold(["n"], [(2,)]), gold(["n"], [(3,)])]
        out = score_result(table(["n"], [(2,)]), golds)
        assert out.correct and out.matched_gold_index == 1
        assert out.micro_credit == pytest.approx(1 / 3)

    def test_order_sensitive_gold(self):
        g = gold(["v"], [("a",), ("b",)], order_sensitive=True)
        assert score_result(table(["v"], [("a",), ("b",)]), [g]).correct
        assert not score_result(table(["v"], [("b",), ("a",)]), [g]).correct

    def test_tolerance_carried_through(self):
        g = gold(["x"], [(1.0,)])
        assert score_result(table(["x"], [(1.0 + 1e-9,)]), [g]).correct
        assert not score_result(table(["x"], [(1.01,)]), [g]).correct


class TestPassAtK:
    def records(self):
        # item a: correct on sample 2 only; item b: never; item c: sample 1
        recs = []
        for item, correct_at in (("a", {2}), ("b", set()), ("c", {1})):
            for i in (1, 2, 3):
                recs.append(RunRecord(item_id=item, sample_index=i, correct=i in correct_at))
        return recs

    def test_pass_at_1(self):
        assert pass_at_k(self.records(), 1) == pytest.approx(1 / 3)

    def test_pass_at_3(self):
        assert pass_at_k(self.records(), 3) == pytest.approx(2 / 3)

    def test_empty(self):
        assert pass_at_k([], 5) == 0.0


def make_candidate(cid, language, rows, status="SUCCEEDED"):
    plan = Plan(plan_id=f"p{cid}", narrative="count rows")
    prog = Program(plan_id=plan.plan_id, language=language, source="SELECT 1")
    return Candidate(
        candidate_id=cid,
        plan=plan,
        program=prog,
        result=table(["n"], rows),
        status=status,
    )


class TestMajorityAtK:
    def test_majority_flips_with_k(self):
        # first 2 samples say 7, samples 3..5 say 9
        cands = [make_candidate(i, "SQL", [(7,)]) for i in range(2)]
        cands += [make_candidate(i, "SQL", [(9,)]) for i in range(2, 5)]
        golds7 = [gold(["n"], [(7,)])]
        assert majority_at_k([(cands, golds7)], 2) == 1.0
        assert majority_at_k([(cands, golds7)], 5) == 0.0

    def test_all_failed_counts_as_wrong(self):
        cands = [make_candidate(0, "SQL", [(7,)], status="FAILED")]
        assert majority_at_k([(cands, [gold(["n"], [(7,)])])], 1) == 0.0

    def test_empty(self):
        assert majority_at_k([], 4) == 0.0


class TestExtractTables:
    def test_simple_from(self):
        assert extract_tables("SELECT * FROM orders") == {"orders"}

    def test_joins_and_comma_list(self):
        sql = "SELECT * FROM a, b JOIN c ON a.x = c.x LEFT JOIN d USING (y)"
        assert extract_tables(sql) == {"a", "b", "c", "d"}

    def test_cte_names_excluded(self):
        sql = (
            "WITH recent AS (SELECT * FROM events), top_n AS (SELECT * FROM recent) "
            "SELECT * FROM top_n JOIN users ON top_n.uid = users.id"
        )
        assert extract_tables(sql) == {"events", "users"}

    def test_quoted_qualified_names_normalized(self):
        sql = 'SELECT 1 FROM "Db"."Sch"."Tbl" JOIN other ON 1=1'
        assert extract_tables(sql) == {"db.sch.tbl", "other"}

    def test_subquery_traversed(self):
        sql = "SELECT * FROM (SELECT * FROM inner_t) sub JOIN outer_t ON 1=1"
        assert extract_tables(sql) == {"inner_t", "outer_t"}

    def test_strings_and_comments_ignored(self):
        sql = (
            "SELECT 'from fake_tbl' AS c -- from comment_tbl\n"
            "FROM real_tbl /* join block_tbl */"
        )
        assert extract_tables(sql) == {"real_tbl"}

    def test_case_insensitive(self):
        assert extract_tables("select * From Orders join CUSTOMERS on 1=1") == {
            "orders",
            "customers",
        }


class TestSchemaLinkingPrf:
    def test_exact_match(self):
        assert schema_linking_prf({"a", "b"}, {"a", "b"}) == (1.0, 1.0, 1.0)

    def test_partial_overlap(self):
        # pred {a, b}, gold {b, c}: P = 1/2, R = 1/2, F1 = 1/2
        p, r, f = schema_linking_prf({"a", "b"}, {"b", "c"})
        assert (p, r, f) == (0.5, 0.5, 0.5)

    def test_empty_prediction(self):
        assert schema_linking_prf(set(), {"a"}) == (0.0, 0.0, 0.0)

    def test_no_overlap(self):
        assert schema_linking_prf({"a"}, {"b"}) == (0.0, 0.0, 0.0)

    def test_case_folded(self):
        assert schema_linking_prf({"Orders"}, {"ORDERS"}) == (1.0, 1.0, 1.0)


class TestGoldCsv:
    def test_typing(self, tmp_path):
        path = tmp_path / "gold.csv"
        path.write_text("id,score,name\n1,2.5,alice\n2,3,bob\n")
        tbl = load_gold_csv(path)
        assert tbl.column_names == ["id", "score", "name"]
        assert tbl.rows == [(1, 2.5, "alice"), (2, 3, "bob")]

    def test_empty_cell_is_null(self, tmp_path):
        path = tmp_path / "gold.csv"
        path.write_text("a,b\n,x\n")
        assert load_gold_csv(path).rows == [(None, "x")]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "gold.csv"
        path.write_text("")
        with pytest.raises(ValueError):
            load_gold_csv(path)


class TestManifest:
    def test_load_and_resolve_paths(self, tmp_path):
        (tmp_path / "g1.csv").write_text("n\n7\n")
        (tmp_path / "g2.csv").write_text("n\n8\n")
        manifest = tmp_path / "bench.jsonl"
        lines = [
            json.dumps(
                {
                    "id": "q1",
                    "question": "how many?",
                    "db": "data.db",
                    "golds": [
                        {"result_csv": "g1.csv", "gold_tables": ["ORDERS"]},
                        {"result_csv": "g2.csv", "order_sensitive": True},
                    ],
                }
            ),
            "",
            json.dumps(
                {
                    "id": "q2",
                    "question": "list them",
                    "db": "data.db",
                    "docs": ["notes.md"],
                    "golds": [{"result_csv": "g1.csv"}],
                }
            ),
        ]
        manifest.write_text("\n".join(lines) + "\n")
        items = load_manifest(manifest)
        assert [it.id for it in items] == ["q1", "q2"]
        assert items[0].db_location == str(tmp_path / "data.db")
        assert items[0].golds[0].gold_tables == {"orders"}
        assert items[0].golds[0].result_table.rows == [(7,)]
        assert items[0].golds[1].order_sensitive is True
        assert items[1].external_docs == [str(tmp_path / "notes.md")]

    def test_item_without_golds_rejected(self):
        with pytest.raises(ValueError):
            BenchmarkItem(id="x", question="q", db_location="d", golds=[])


class TestAggregateReport:
    def records(self):
        # q1 solved by SQL sample 1 only; q2 solved by python samples 1 and 2;
        # q3 solved by both languages; q4 unsolved; q5 all errored.
        recs = [
            RunRecord("q1", 1, correct=True, micro_credit=1.0, language="SQL",
                      tool_counts={"SQLExecutor": 2}),
            RunRecord("q1", 2, correct=False, tool_counts={"SQLExecutor": 1}),
            RunRecord("q2", 1, correct=True, micro_credit=0.5, language="PYTHON"),
            RunRecord("q2", 2, correct=True, micro_credit=0.5, language="PYTHON"),
            RunRecord("q3", 1, correct=False),
            RunRecord("q3", 2, correct=True, micro_credit=1.0, language="SQL"),
            RunRecord("q3", 3, correct=True, micro_credit=1.0, language="PYTHON"),
            RunRecord("q4", 1, correct=False),
            RunRecord("q4", 2, correct=False),
            RunRecord("q5", 1, errored=True, error="boom"),
            RunRecord("q5", 2, errored=True, error="boom"),
        ]
        return recs

    def test_headline_metrics(self):
        report = aggregate_report(
            self.records(),
            k=3,
            majority_correct={"q1": True, "q2": True, "q3": False, "q4": False, "q5": False},
        )
        assert report.items == 5
        # pass@1: q1, q2 -> 2/5; pass@3: q1, q2, q3 -> 3/5
        assert report.pass_at_1 == pytest.approx(0.4)
        assert report.pass_at_k == pytest.approx(0.6)
        assert report.majority_at_k == pytest.approx(0.4)
        # micro: 1.0 + 0.5 + 1.0 over 5 items
        assert report.micro_accuracy == pytest.approx(0.5)

    def test_breakdown_and_totals(self):
        report = aggregate_report(self.records(), k=3)
        assert report.language_breakdown == {"only_python": 1, "only_sql": 1, "both": 1}
        assert report.tool_call_totals == {"SQLExecutor": 3}
        assert report.errored_items == 1

    def test_text_render_mentions_metrics(self):
        text = aggregate_report(self.records(), k=3).to_text()
        assert "Pass@1" in text and "Pass@3" in text and "Micro accuracy" in text

    def test_empty(self):
        report = aggregate_report([], k=4)
        assert report.items == 0 and report.micro_accuracy == 0.0
