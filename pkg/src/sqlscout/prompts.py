"""Prompt assets for every pipeline stage.

Each user prompt opens with a stable ``## Task:`` header so scripted
fixtures can match requests by stage. Prompt wording is a versioned asset:
tests pin scripted-backend behavior, not live-model wording.
"""

from __future__ import annotations

from .context import PlanningContext
from .dblayer import Dialect, SchemaSnapshot

PLANNER_SYSTEM = (
    "You are a database analyst planning how to answer a question over a relational "
    "database. Explore with the provided tools as needed. Finish with a JSON array of "
    'plan objects: [{"plan": "...", "language_hint": "SQL"|"PYTHON"|null}, ...]. '
    "Each plan is a natural-language query strategy naming the tables to use, how to "
    "join them, and what filters to apply."
)

SYNTH_SYSTEM = (
    "You implement a query plan as a single final program. You may use the tools to "
    "test subqueries and partial implementations first. Your final message must contain "
    "exactly one fenced code block tagged sql or python holding the complete program.\n"
    "Python programs must expose their result either by assigning a variable named "
    "`answer` (a list of rows or a dataframe) or by printing CSV (with header) between "
    "lines <<ANSWER and ANSWER>>."
)

REVIEW_SYSTEM = (
    "You review whether a program's execution output plausibly answers the question "
    "under the given plan. Reply with a first line of exactly one of:\n"
    "OK\nCODE_ERROR: <what is wrong with the code>\nPLAN_ERROR: <what is wrong with the plan>\n"
    "Use PLAN_ERROR for wrong tables, missing joins, or a wrong interpretation of the "
    "question; use CODE_ERROR for implementation mistakes fixable by regenerating code."
)

REPAIR_SYSTEM = (
    "You fix a broken program. Keep the plan unchanged. Your final message must contain "
    "exactly one fenced code block tagged sql or python with the corrected program."
)

BACKTRACK_SYSTEM = (
    "A plan-level problem was found: the strategy itself is wrong. Re-explore the "
    "database with the tools if needed and produce a revised plan. Finish with a JSON "
    'object {"plan": "...", "language_hint": "SQL"|"PYTHON"|null}.'
)

PLAN_REVIEW_SYSTEM = (
    "You check a query plan against the schema information and data observations "
    "gathered so far. Reply with a first line of exactly OK, or ISSUE: <problem> if a "
    "referenced table does not exist or a filter contradicts observed values."
)

REFINE_SYSTEM = (
    "A query plan has a problem. Re-explore the database with the tools and regenerate "
    'the plan. Finish with a JSON object {"plan": "...", "language_hint": "SQL"|"PYTHON"|null}.'
)

TRANSPILE_SYSTEM = (
    "You translate a Python data program into a single SQL query for the target "
    "dialect. The SQL must produce exactly the same result table as the Python program. "
    "Your final message must contain exactly one fenced code block tagged sql."
)


def render_snapshot(snapshot: SchemaSnapshot, relevant_schemas: list[str]) -> str:
    lines = [f"Database: {snapshot.database_name}"]
    relevant = set(relevant_schemas)
    for schema in snapshot.schemas:
        if relevant and schema.name not in relevant:
            continue
        lines.append(f"Schema {schema.name}:")
        listed_groups: set[str] = set()
        for tname in schema.tables:
            entry = snapshot.find_table(tname)
            if entry is not None and entry.group_tag:
                if entry.group_tag in listed_groups:
                    continue
                listed_groups.add(entry.group_tag)
                lines.append(f"  {entry.group_tag}_* (grouped time-suffix tables)")
                continue
            lines.append(f"  {tname}")
    return "\n".join(lines)


def context_block(ctx: PlanningContext) -> str:
    parts = [f"Question: {ctx.question}"]
    if ctx.knowledge_summary:
        parts.append(f"Domain knowledge:\n{ctx.knowledge_summary}")
    parts.append(render_snapshot(ctx.snapshot, ctx.relevant_schemas))
    return "\n\n".join(parts)


def planner_user(ctx: PlanningContext, batch_size: int, prior_plans: list[str], diversity: bool) -> str:
    parts = [
        "## Task: propose query plans",
        context_block(ctx),
        f"Propose exactly {batch_size} plan(s).",
    ]
    if diversity:
        prior = "\n".join(f"- {p}" for p in prior_plans) if prior_plans else "(none yet)"
        parts.append(
            "Plans generated so far:\n"
            f"{prior}\n"
            "Your new plans must differ from those already generated: cover different "
            "table choices, join paths, or readings of the question."
        )
    return "\n\n".join(parts)


def plan_review_user(ctx: PlanningContext, plan_narrative: str) -> str:
    return "\n\n".join(["## Task: review the plan", context_block(ctx), f"Plan:\n{plan_narrative}"])


def refine_user(ctx: PlanningContext, plan_narrative: str, issue: str) -> str:
    return "\n\n".join(
        ["## Task: refine the plan", context_block(ctx), f"Plan:\n{plan_narrative}", f"Issue found:\n{issue}"]
    )


def synth_user(ctx: PlanningContext, plan_narrative: str, sql_only: bool) -> str:
    parts = ["## Task: implement the plan", context_block(ctx), f"Plan:\n{plan_narrative}"]
    if sql_only:
        parts.append("Constraint: the final program must be SQL. Python finals are not accepted.")
    return "\n\n".join(parts)


def review_user(question: str, plan_narrative: str, program_source: str, language: str, output_text: str) -> str:
    return "\n\n".join(
        [
            "## Task: review the result",
            f"Question: {question}",
            f"Plan:\n{plan_narrative}",
            f"Program ({language}):\n{program_source}",
            f"Execution output:\n{output_text}",
        ]
    )


def repair_user(plan_narrative: str, program_source: str, language: str, error_message: str) -> str:
    return "\n\n".join(
        [
            "## Task: fix the program",
            f"Plan:\n{plan_narrative}",
            f"Previous program ({language}):\n{program_source}",
            f"Error feedback:\n{error_message}",
        ]
    )


def backtrack_user(ctx: PlanningContext, plan_narrative: str, error_message: str) -> str:
    return "\n\n".join(
        [
            "## Task: revise the plan",
            context_block(ctx),
            f"Previous plan:\n{plan_narrative}",
            f"Plan-level problem:\n{error_message}",
        ]
    )


# Heuristic Python-to-SQL translation guidance. The VARIANT rules only make
# sense for warehouse dialects with semi-structured column types, so they are
# emitted for SNOWFLAKE_LIKE targets only.

_RULE_TYPE_PRESERVATION = (
    "1. Runtime Type Preservation. If the Python program's behavior depends on runtime "
    "types (isinstance checks, dict/list/tuple handling), the SQL translation must "
    "preserve that behavior; do not use string operations unless the runtime value is "
    "a string."
)

_RULE_VARIANT_UNNEST = (
    "2. VARIANT Column Unnesting. When Python defines a helper that takes a single "
    "column value, returns an empty list for null/missing input, parses JSON via "
    "json.loads, converts a JSON array or dict into a list, and is applied row-wise "
    "(Series.apply/map), it is unnesting a semi-structured VARIANT column: translate "
    "it to (LATERAL) FLATTEN(input => COLUMN | PARSE_JSON(COLUMN))."
)

_RULE_IDENTIFIER_STRING = (
    "3. Identifier vs. String Distinction. Clearly distinguish quoted identifiers from "
    "string literals and regular expressions."
)

_RULE_REGEX = (
    "4. Regex Semantics Alignment. When translating str.contains(REGEX, case=bool), use "
    "REGEXP_LIKE(str, '.*' || REGEX || '.*', flags). You must prepend and append '.*' "
    "to REGEX to keep containment semantics. If case=False, use the flag 'is' (not 'i' "
    "alone)."
)

_RULE_VARIANT_PATHS = (
    "5. VARIANT Data Access Paths. When accessing VARIANT columns holding JSON objects, "
    "spell out the full access path: single quotes for case-sensitive keys "
    "(\"col\":'KeyName'), chained keys for nesting (\"col\":'Outer':'Inner'), zero-based "
    "array indexing (\"col\"[0]), and GET_PATH(\"col\", \"dynamic_key_string\") for "
    "dynamic keys. Always include the full path to the target value."
)

_RULE_JSON_STRINGS = (
    "6. JSON String Columns. For columns holding JSON-formatted strings, apply "
    "PARSE_JSON() first, then use the access-path rules above."
)


def transpile_rules(dialect: Dialect) -> str:
    rules = [_RULE_TYPE_PRESERVATION]
    if dialect is Dialect.SNOWFLAKE_LIKE:
        rules.append(_RULE_VARIANT_UNNEST)
    rules.append(_RULE_IDENTIFIER_STRING)
    rules.append(_RULE_REGEX)
    if dialect is Dialect.SNOWFLAKE_LIKE:
        rules.append(_RULE_VARIANT_PATHS)
        rules.append(_RULE_JSON_STRINGS)
    return "\n\n".join(rules)


def transpile_user(
    python_source: str,
    plan_narrative: str,
    schema_text: str,
    dialect: Dialect,
    feedback: str = "",
) -> str:
    parts = [
        "## Task: translate to SQL",
        f"Target dialect: {dialect.value}",
        f"Plan:\n{plan_narrative}",
        f"Schema:\n{schema_text}",
        f"Python program:\n```python\n{python_source}\n```",
        "Translation rules:\n" + transpile_rules(dialect),
    ]
    if feedback:
        parts.append(f"Previous attempt failed verification:\n{feedback}")
    return "\n\n".join(parts)
