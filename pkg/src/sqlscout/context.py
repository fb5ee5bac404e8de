"""Pre-planning preprocessing and schema routing.

Produces the immutable ``PlanningContext`` every candidate grounds itself
in: the pruned/grouped schema view, a knowledge summary extracted from any
external documents, and the routed subset of relevant schemas.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .agent import Backend, LlmConfig, Message, Transcript, chat, run_tool_loop
from .dblayer import DbHandle, SchemaEntry, SchemaSnapshot, TableEntry
from .tools import ToolSession, tool_specs_openai

logger = logging.getLogger(__name__)

SUMMARY_CHAR_CAP = 4000
ROUTING_RETRIES = 2

# NAME_YYYYMMDD, NAME_YYYY_MM, NAME_YYYYMM
DATE_SUFFIX_PATTERNS = [
    re.compile(r"^(?P<prefix>.+)_(?P<suffix>\d{8})$"),
    re.compile(r"^(?P<prefix>.+)_(?P<suffix>\d{4}_\d{2})$"),
    re.compile(r"^(?P<prefix>.+)_(?P<suffix>\d{6})$"),
]


@dataclass
class TableGroup:
    group_name: str  # shared prefix
    member_tables: list[str]
    suffix_pattern: str
    representative: str
    suffix_values: list[str] = field(default_factory=list)


@dataclass
class PlanningContext:
    question: str
    knowledge_summary: str
    snapshot: SchemaSnapshot
    relevant_schemas: list[str]
    groups: list[TableGroup] = field(default_factory=list)
    k: int = 8
    m: int = 4


def prune_null_columns(snapshot: SchemaSnapshot) -> SchemaSnapshot:
    """Drop all-null columns from the planning view; the database is untouched.

    Zero-row tables keep every column: absence of data is not evidence of
    nullity.
    """
    tables = [
        TableEntry(
            qualified_name=t.qualified_name,
            columns=[c for c in t.columns if not c.all_null],
            group_tag=t.group_tag,
        )
        for t in snapshot.tables
    ]
    return SchemaSnapshot(database_name=snapshot.database_name, schemas=snapshot.schemas, tables=tables)


def _column_signature(t: TableEntry) -> tuple:
    return tuple((c.name.lower(), (c.declared_type or "").lower()) for c in t.columns)


def group_time_suffix_tables(snapshot: SchemaSnapshot) -> tuple[SchemaSnapshot, list[TableGroup]]:
    """Collapse NAME_<date-suffix> tables with identical column signatures.

    Groups need at least two members; the lexicographically smallest member
    is the representative whose samples stand for the group.
    """
    by_table = {t.qualified_name: t for t in snapshot.tables}
    buckets: dict[tuple, list[tuple[str, str]]] = {}
    for name in sorted(by_table):
        for pat in DATE_SUFFIX_PATTERNS:
            m = pat.match(name)
            if m:
                key = (m.group("prefix"), pat.pattern, _column_signature(by_table[name]))
                buckets.setdefault(key, []).append((name, m.group("suffix")))
                break
    groups: list[TableGroup] = []
    grouped: set[str] = set()
    for (prefix, pattern, _sig), members in sorted(buckets.items()):
        if len(members) < 2:
            continue
        names = [n for n, _ in members]
        groups.append(
            TableGroup(
                group_name=prefix,
                member_tables=names,
                suffix_pattern=pattern,
                representative=min(names),
                suffix_values=[s for _, s in members],
            )
        )
        grouped.update(names)
    tables = []
    for t in snapshot.tables:
        tag = None
        for g in groups:
            if t.qualified_name in g.member_tables:
                tag = g.group_name
        tables.append(replace(t, group_tag=tag))
    snap = SchemaSnapshot(database_name=snapshot.database_name, schemas=snapshot.schemas, tables=tables)
    return snap, groups


SUMMARIZE_SYSTEM = (
    "You distill external documentation into the domain knowledge needed to answer "
    "a database question. Reply with a concise summary only."
)


def summarize_documents(docs: Sequence[str], question: str, backend: Backend, config: LlmConfig) -> str:
    """One summarization call over all docs; empty docs cost zero calls."""
    if not docs:
        return ""
    body = "\n\n---\n\n".join(docs)
    user = f"## Task: summarize domain documents\n\nQuestion: {question}\n\nDocuments:\n{body}"
    reply = chat(backend, [Message("system", SUMMARIZE_SYSTEM), Message("user", user)], [], config)
    summary = reply.content.strip()
    if len(summary) > SUMMARY_CHAR_CAP:
        summary = summary[: SUMMARY_CHAR_CAP - 25] + "\n... [summary clipped]"
    return summary


ROUTING_SYSTEM = (
    "You narrow a database down to the schemas relevant to a question. Use GetSchema "
    "and GetTableCol to inspect candidates, then finish with one line of the form "
    "SCHEMAS: name1, name2"
)


def route_schemas(
    question: str,
    snapshot: SchemaSnapshot,
    session: ToolSession,
    backend: Backend,
    config: LlmConfig,
) -> list[str]:
    """Pick a non-empty relevant schema subset; single-schema DBs short-circuit."""
    names = snapshot.schema_names()
    if len(names) <= 1:
        return list(names)
    valid = {n.lower(): n for n in names}
    specs = tool_specs_openai(["GetSchema", "GetTableCol"])
    dispatcher = session.dispatcher(allowed=["GetSchema", "GetTableCol"])
    user = (
        "## Task: route schemas\n\n"
        f"Question: {question}\n\nSchemas in this database: {', '.join(names)}\n\n"
        "Identify which schemas are needed."
    )
    for attempt in range(ROUTING_RETRIES):
        result = run_tool_loop(backend, ROUTING_SYSTEM, user, specs, dispatcher, config)
        picked = _parse_schema_line(result.final_text, valid)
        if picked:
            return picked
        logger.warning("schema routing attempt %d named no valid schema", attempt + 1)
    return list(names)


def _parse_schema_line(text: str, valid: dict[str, str]) -> list[str]:
    m = re.search(r"SCHEMAS:\s*(.+)", text)
    if not m:
        return []
    picked = []
    for raw in m.group(1).split(","):
        name = raw.strip().strip("\"'")
        if name.lower() in valid and valid[name.lower()] not in picked:
            picked.append(valid[name.lower()])
    return picked


def build_planning_context(
    question: str,
    db: DbHandle,
    snapshot: SchemaSnapshot,
    docs: Sequence[str],
    backend: Backend,
    config: LlmConfig,
    k: int = 8,
    m: int = 4,
) -> PlanningContext:
    """Preprocess + summarize + route, in that order."""
    pruned = prune_null_columns(snapshot)
    grouped, groups = group_time_suffix_tables(pruned)
    summary = summarize_documents(docs, question, backend, config)
    session = ToolSession(db, grouped, groups=groups, candidate_id="routing")
    relevant = route_schemas(question, grouped, session, backend, config)
    return PlanningContext(
        question=question,
        knowledge_summary=summary,
        snapshot=grouped,
        relevant_schemas=relevant,
        groups=groups,
        k=k,
        m=m,
    )
