"""Benchmark harness: any-of-N gold scoring, Pass@K / Majority@K, micro
accuracy, table-level schema-linking P/R/F1, and aggregate reporting.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .dblayer import ResultTable, results_equivalent
from .pipeline import Candidate, majority_vote
from .sandboxproto import infer_cell

logger = logging.getLogger(__name__)


@dataclass
class GoldAnswer:
    result_table: ResultTable
    gold_tables: set[str] = field(default_factory=set)
    order_sensitive: bool = False


@dataclass
class BenchmarkItem:
    id: str
    question: str
    db_location: str
    external_docs: list[str] = field(default_factory=list)
    golds: list[GoldAnswer] = field(default_factory=list)
    endpoint: str = ""  # optional per-item override, mainly for replay fixtures

    def __post_init__(self):
        if not self.golds:
            raise ValueError(f"benchmark item {self.id} has no gold answers")


@dataclass
class RunRecord:
    item_id: str
    sample_index: int  # 1..K
    final_sql: Optional[str] = None
    final_result: Optional[ResultTable] = None
    correct: bool = False
    matched_gold_index: Optional[int] = None
    micro_credit: float = 0.0
    language: str = ""
    repairs: int = 0
    backtracks: int = 0
    tool_counts: dict = field(default_factory=dict)
    errored: bool = False
    error: str = ""


def load_gold_csv(path: str | Path) -> ResultTable:
    """Gold result CSV with a required header row; cells typed int -> real -> text."""
    with open(path, newline="") as fh:
        reader = list(csv.reader(fh))
    if not reader:
        raise ValueError(f"gold CSV {path} is empty (header row required)")
    header = reader[0]
    rows = [tuple(infer_cell(c) for c in r) for r in reader[1:]]
    return ResultTable(column_names=header, rows=rows)


def load_manifest(path: str | Path) -> list[BenchmarkItem]:
    """JSON-lines manifest, one item per line, relative paths resolved."""
    base = Path(path).parent
    items = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        raw = json.loads(line)
        golds = []
        for g in raw["golds"]:
            golds.append(
                GoldAnswer(
                    result_table=load_gold_csv(base / g["result_csv"]),
                    gold_tables={t.lower() for t in g.get("gold_tables", [])},
                    order_sensitive=bool(g.get("order_sensitive", False)),
                )
            )
        items.append(
            BenchmarkItem(
                id=str(raw["id"]),
                question=raw["question"],
                db_location=str(base / raw["db"]),
                external_docs=[str(base / d) for d in raw.get("docs", [])],
                golds=golds,
                endpoint=_resolve_endpoint(raw.get("endpoint", ""), base),
            )
        )
    return items


def _resolve_endpoint(raw: str, base: Path) -> str:
    if raw.startswith("script:"):
        return "script:" + str(base / raw[len("script:"):])
    return raw


@dataclass
class ScoreOutcome:
    correct: bool
    matched_gold_index: Optional[int]
    micro_credit: float


def score_result(pred: Optional[ResultTable], golds: Sequence[GoldAnswer]) -> ScoreOutcome:
    """Correct iff the prediction matches any gold; micro credit is 1/N once."""
    if pred is None:
        return ScoreOutcome(False, None, 0.0)
    for i, gold in enumerate(golds):
        if results_equivalent(pred, gold.result_table, order_sensitive=gold.order_sensitive):
            return ScoreOutcome(True, i, 1.0 / len(golds))
    return ScoreOutcome(False, None, 0.0)


def pass_at_k(records: Sequence[RunRecord], k: int) -> float:
    """Fraction of items with >=1 correct among the first k samples."""
    by_item: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_item.setdefault(rec.item_id, []).append(rec)
    if not by_item:
        return 0.0
    hits = 0
    for recs in by_item.values():
        first_k = [r for r in recs if r.sample_index <= k]
        if any(r.correct for r in first_k):
            hits += 1
    return hits / len(by_item)


def majority_at_k(
    per_item: Sequence[tuple[Sequence[Candidate], Sequence[GoldAnswer]]], k: int
) -> float:
    """Fraction of items whose majority-voted answer (over first k) is correct."""
    if not per_item:
        return 0.0
    hits = 0
    for candidates, golds in per_item:
        subset = [c for c in candidates if c.candidate_id < k]
        vote = majority_vote(subset)
        if vote.status == "SUCCEEDED" and score_result(vote.final_result, golds).correct:
            hits += 1
    return hits / len(per_item)


# --- table extraction -------------------------------------------------------

_SQL_COMMENT_RE = re.compile(r"--[^\n]*|/\*.*?\*/", re.DOTALL)
_STRING_RE = re.compile(r"'(?:[^']|'')*'")
_IDENT = r'(?:"[^"]+"|[A-Za-z_][A-Za-z0-9_$]*)'
_QUALIFIED = rf"{_IDENT}(?:\s*\.\s*{_IDENT})*"
_FROM_JOIN_RE = re.compile(rf"\b(FROM|JOIN)\s+({_QUALIFIED})", re.IGNORECASE)
_NEXT_TABLE_RE = re.compile(rf",\s*({_QUALIFIED})")
_CTE_NAME_RE = re.compile(rf"(?:\bWITH|,)\s*({_IDENT})\s+AS\s*\(", re.IGNORECASE)
_KEYWORDS = {
    "select", "where", "group", "order", "limit", "on", "using", "unnest", "lateral",
    "values", "dual", "join", "inner", "left", "right", "full", "cross",
}


def _normalize_ident(raw: str) -> str:
    parts = [p.strip() for p in re.split(r"\.", raw)]
    cleaned = []
    for p in parts:
        p = p.strip()
        if p.startswith('"') and p.endswith('"'):
            p = p[1:-1]
        cleaned.append(p.lower())
    return ".".join(cleaned)


def extract_tables(sql: str) -> set[str]:
    """Table names referenced after FROM/JOIN, CTE names excluded.

    Token-scanner, not a grammar: best effort, robust to dialect noise.
    Unbalanced quotes log a warning and extraction continues.
    """
    if sql.count('"') % 2 == 1:
        logger.warning("unbalanced double quotes in SQL; extraction is best-effort")
    text = _SQL_COMMENT_RE.sub(" ", sql)
    text = _STRING_RE.sub("''", text)
    cte_names = {_normalize_ident(m.group(1)) for m in _CTE_NAME_RE.finditer(text)}
    tables: set[str] = set()
    for m in _FROM_JOIN_RE.finditer(text):
        name = _normalize_ident(m.group(2))
        if name.split(".")[-1] in _KEYWORDS:
            continue
        tables.add(name)
        # comma-separated FROM lists
        pos = m.end()
        while True:
            nxt = _NEXT_TABLE_RE.match(text, pos)
            if not nxt:
                break
            extra = _normalize_ident(nxt.group(1))
            if extra.split(".")[-1] not in _KEYWORDS:
                tables.add(extra)
            pos = nxt.end()
    return {t for t in tables if t not in cte_names}


def schema_linking_prf(pred_tables: set[str], gold_tables: set[str]) -> tuple[float, float, float]:
    pred = {t.lower() for t in pred_tables}
    gold = {t.lower() for t in gold_tables}
    if not pred:
        return (0.0, 0.0, 0.0)
    tp = len(pred & gold)
    precision = tp / len(pred)
    recall = tp / len(gold) if gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    return (precision, recall, f1)


# --- reporting --------------------------------------------------------------


@dataclass
class Report:
    items: int = 0
    pass_at_1: float = 0.0
    pass_at_k: float = 0.0
    majority_at_k: float = 0.0
    micro_accuracy: float = 0.0
    k: int = 0
    language_breakdown: dict = field(default_factory=lambda: {"only_python": 0, "only_sql": 0, "both": 0})
    tool_call_totals: dict = field(default_factory=dict)
    errored_items: int = 0

    def to_json(self) -> dict:
        return {
            "items": self.items,
            "k": self.k,
            "pass@1": self.pass_at_1,
            f"pass@{self.k}": self.pass_at_k,
            f"majority@{self.k}": self.majority_at_k,
            "micro_accuracy": self.micro_accuracy,
            "language_breakdown": self.language_breakdown,
            "tool_call_totals": self.tool_call_totals,
            "errored_items": self.errored_items,
        }

    def to_text(self) -> str:
        lines = [
            f"items: {self.items}  (errored: {self.errored_items})",
            f"Pass@1: {self.pass_at_1:.4f}",
            f"Pass@{self.k}: {self.pass_at_k:.4f}",
            f"Majority@{self.k}: {self.majority_at_k:.4f}",
            f"Micro accuracy: {self.micro_accuracy:.4f}",
            "Solved-question language breakdown: "
            + ", ".join(f"{k}={v}" for k, v in self.language_breakdown.items()),
            "Tool calls: " + (", ".join(f"{k}={v}" for k, v in sorted(self.tool_call_totals.items())) or "(none)"),
        ]
        return "\n".join(lines)


def aggregate_report(
    records: Sequence[RunRecord],
    k: int,
    majority_correct: Optional[dict[str, bool]] = None,
) -> Report:
    """Fold records into the headline metrics plus the per-tool call totals.

    ``majority_correct`` maps item_id to the voted answer's correctness; the
    language breakdown categorizes each solved item by which languages
    produced a correct sample.
    """
    report = Report(k=k)
    by_item: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_item.setdefault(rec.item_id, []).append(rec)
        for name, count in rec.tool_counts.items():
            report.tool_call_totals[name] = report.tool_call_totals.get(name, 0) + count
    report.items = len(by_item)
    if not by_item:
        return report
    report.pass_at_1 = pass_at_k(records, 1)
    report.pass_at_k = pass_at_k(records, k)
    micro_total = 0.0
    for item_id, recs in by_item.items():
        if all(r.errored for r in recs):
            report.errored_items += 1
        correct = [r for r in recs if r.correct]
        micro_total += max((r.micro_credit for r in correct), default=0.0)
        if correct:
            langs = {r.language for r in correct if r.language}
            if langs == {"PYTHON"}:
                report.language_breakdown["only_python"] += 1
            elif langs == {"SQL"}:
                report.language_breakdown["only_sql"] += 1
            elif langs:
                report.language_breakdown["both"] += 1
    report.micro_accuracy = micro_total / len(by_item)
    if majority_correct:
        report.majority_at_k = sum(1 for v in majority_correct.values() if v) / len(by_item)
    return report


# --- benchmark driver -------------------------------------------------------


@dataclass
class BenchOutcome:
    records: list[RunRecord]
    majority_correct: dict[str, bool]
    report: Report


def run_item(item: BenchmarkItem, config) -> tuple[list[RunRecord], bool]:
    """One pipeline run for one item; each candidate becomes one sample."""
    from dataclasses import replace

    from .pipeline import answer_question

    cfg = replace(
        config,
        db_location=item.db_location,
        question=item.question,
        endpoint=item.endpoint or config.endpoint,
        trace_path="",
        report_path="",
    )
    answer = answer_question(item.question, item.db_location, item.external_docs, cfg)
    records = []
    for cand in answer.candidates:
        pred = cand.result if cand.status == "SUCCEEDED" and isinstance(cand.result, ResultTable) else None
        score = score_result(pred, item.golds)
        records.append(
            RunRecord(
                item_id=item.id,
                sample_index=cand.candidate_id + 1,
                final_sql=cand.program.source if cand.program and cand.program.language == "SQL" else None,
                final_result=pred,
                correct=score.correct,
                matched_gold_index=score.matched_gold_index,
                micro_credit=score.micro_credit,
                language=cand.program.language if cand.program else "",
                repairs=cand.repair_count,
                backtracks=cand.backtrack_count,
                tool_counts=dict(cand.tool_counts),
            )
        )
    voted_correct = (
        answer.status == "SUCCEEDED" and score_result(answer.final_result, item.golds).correct
    )
    return records, voted_correct


def run_benchmark(items: Sequence[BenchmarkItem], config) -> BenchOutcome:
    """Score every item; per-item failures are recorded and never abort the run."""
    from concurrent.futures import ThreadPoolExecutor

    def work(item: BenchmarkItem):
        try:
            recs, voted = run_item(item, config)
            return item.id, recs, voted
        except Exception as exc:
            logger.warning("item %s errored: %s", item.id, exc)
            rec = RunRecord(item_id=item.id, sample_index=1, errored=True, error=str(exc))
            return item.id, [rec], False

    records: list[RunRecord] = []
    majority: dict[str, bool] = {}
    with ThreadPoolExecutor(max_workers=max(1, config.parallelism)) as pool:
        for item_id, recs, voted in pool.map(work, items):
            records.extend(recs)
            majority[item_id] = voted
    report = aggregate_report(records, k=config.k, majority_correct=majority)
    return BenchOutcome(records=records, majority_correct=majority, report=report)
