"""The six database tools exposed to the model, with bounded rendering.

Tool errors are data, not exceptions: the repair loop consumes the message
text, so nothing here raises past :func:`dispatch`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .agent import ToolCallRequest
from .dblayer import (
    DbHandle,
    ExecError,
    ExecLimits,
    ResultTable,
    SchemaSnapshot,
    canonicalize,
)

DISTINCT_VALUES_CAP = 50
FIND_ROWS_CAP = 20
EXPLORE_MAX_ROWS = 100
EXPLORE_TIMEOUT_S = 30.0
RENDER_BUDGET = 4000


@dataclass
class ToolSpec:
    name: str
    description: str
    parameters: list[tuple[str, str, bool]]  # (name, json type, required)

    def to_openai(self) -> dict:
        props = {p: {"type": t} for p, t, _ in self.parameters}
        required = [p for p, _, req in self.parameters if req]
        return {
            "type": "function",
            "function": {
                "name": self.name,
                "description": self.description,
                "parameters": {"type": "object", "properties": props, "required": required},
            },
        }


@dataclass
class ToolResult:
    rendered: str
    payload: object = None
    is_error: bool = False


@dataclass
class ToolCallRecord:
    candidate_id: str
    sequence_no: int
    tool_name: str
    arguments: dict
    result_digest: str = ""
    duration_ms: float = 0.0
    truncated: bool = False


TOOL_SPECS: dict[str, ToolSpec] = {
    spec.name: spec
    for spec in [
        ToolSpec(
            "GetSchema",
            "List all table names within a schema of the database.",
            [("schema_name", "string", True)],
        ),
        ToolSpec(
            "GetTableCol",
            "Show a table's column names, declared types, and a few sample values.",
            [("table_name", "string", True)],
        ),
        ToolSpec(
            "GetColValues",
            "List the distinct values stored in a column of a table.",
            [("column_name", "string", True), ("table_name", "string", True)],
        ),
        ToolSpec(
            "FindRows",
            "Keyword-search a column and return matching rows, optionally with extra columns.",
            [
                ("term", "string", True),
                ("column_name", "string", True),
                ("table_name", "string", True),
                ("additional_columns", "array", False),
            ],
        ),
        ToolSpec(
            "SQLExecutor",
            "Execute a SQL query against the database and return the result set or error.",
            [("sql_query", "string", True)],
        ),
        ToolSpec(
            "PythonExecutor",
            "Execute Python code in a stateful sandbox with read-only database access.",
            [("program", "string", True)],
        ),
    ]
}


def tool_specs_openai(names: Optional[list[str]] = None) -> list[dict]:
    names = names or list(TOOL_SPECS)
    return [TOOL_SPECS[n].to_openai() for n in names]


def _clip(text: str, budget: int = RENDER_BUDGET) -> str:
    if len(text) <= budget:
        return text
    marker = "\n... [output clipped]"
    return text[: budget - len(marker)] + marker


def render_table(t: ResultTable, budget: int = RENDER_BUDGET) -> str:
    """Plain aligned text table, clipped to the character budget."""
    if not t.column_names:
        return "(no result set)"
    cells = [[_cell_text(v) for v in row] for row in t.rows]
    widths = [len(c) for c in t.column_names]
    for row in cells:
        for i, s in enumerate(row):
            widths[i] = max(widths[i], len(s))
    widths = [min(w, 40) for w in widths]
    lines = [
        " | ".join(c.ljust(w)[: max(w, len(c))] for c, w in zip(t.column_names, widths)),
        "-+-".join("-" * w for w in widths),
    ]
    for row in cells:
        lines.append(" | ".join(s.ljust(w) for s, w in zip(row, widths)))
    if t.truncated:
        lines.append(f"({len(t.rows)} of {t.row_count_before_truncation} rows shown)")
    else:
        lines.append(f"({len(t.rows)} rows)")
    return _clip("\n".join(lines), budget)


def _cell_text(v) -> str:
    if v is None:
        return "NULL"
    if isinstance(v, bytes):
        return "0x" + v.hex()
    if isinstance(v, float):
        return repr(v)
    return str(v)


class ToolSession:
    """Per-candidate tool state: db handle, planning snapshot, sandbox, transcript.

    ``snapshot`` is the preprocessed planning view (all-null columns pruned,
    time-suffix tables grouped); ``groups`` maps group names to the grouped
    rendering used by GetSchema.
    """

    def __init__(
        self,
        db: DbHandle,
        snapshot: SchemaSnapshot,
        groups=None,
        sandbox=None,
        candidate_id: str = "0",
        render_budget: int = RENDER_BUDGET,
    ):
        self.db = db
        self.snapshot = snapshot
        self.groups = list(groups or [])
        self.sandbox = sandbox
        self.candidate_id = candidate_id
        self.render_budget = render_budget
        self.records: list[ToolCallRecord] = []
        self._seq = 0

    # --- individual tools ---------------------------------------------------

    def get_schema(self, schema_name: str) -> ToolResult:
        entry = next((s for s in self.snapshot.schemas if s.name.lower() == schema_name.lower()), None)
        if entry is None:
            available = ", ".join(self.snapshot.schema_names())
            return ToolResult(
                rendered=f"Unknown schema {schema_name!r}. Available schemas: {available}",
                is_error=True,
            )
        group_members: dict[str, list[str]] = {}
        group_line: dict[str, str] = {}
        for g in self.groups:
            for member in g.member_tables:
                group_members[member] = g.member_tables
            dates = sorted(g.suffix_values)
            group_line[g.member_tables[0]] = (
                f"{g.group_name}_* ({len(g.member_tables)} tables: {dates[0]}…{dates[-1]})"
            )
        lines = []
        listed_groups: set[str] = set()
        payload: list[str] = []
        for name in entry.tables:
            if name in group_members:
                first = group_members[name][0]
                if first in listed_groups:
                    continue
                listed_groups.add(first)
                lines.append(group_line[first])
                payload.append(group_line[first])
            else:
                lines.append(name)
                payload.append(name)
        body = "\n".join(lines) if lines else "(no tables)"
        return ToolResult(rendered=_clip(f"Tables in schema {entry.name}:\n{body}", self.render_budget), payload=payload)

    def get_table_col(self, table_name: str) -> ToolResult:
        table = self.snapshot.find_table(table_name)
        if table is None:
            return ToolResult(rendered=f"Unknown table {table_name!r}.", is_error=True)
        lines = [f"Columns of {table.qualified_name}:"]
        payload = []
        for col in table.columns:
            samples = ", ".join(_cell_text(v) for v in col.sample_values)
            lines.append(f"  {col.name} ({col.declared_type or 'ANY'}): e.g. {samples}")
            payload.append((col.name, col.declared_type, list(col.sample_values)))
        return ToolResult(rendered=_clip("\n".join(lines), self.render_budget), payload=payload)

    def _resolve(self, table_name: str, column_name: Optional[str] = None):
        table = self.snapshot.find_table(table_name)
        if table is None:
            return None, None, ToolResult(rendered=f"Unknown table {table_name!r}.", is_error=True)
        if column_name is None:
            return table, None, None
        col = next((c for c in table.columns if c.name.lower() == column_name.lower()), None)
        if col is None:
            return table, None, ToolResult(
                rendered=f"Unknown column {column_name!r} in table {table.qualified_name}.", is_error=True
            )
        return table, col, None

    def get_col_values(self, column_name: str, table_name: str) -> ToolResult:
        table, col, err = self._resolve(table_name, column_name)
        if err:
            return err
        res = self.db.connection.execute(
            f'SELECT DISTINCT "{col.name}" FROM "{table.qualified_name}" '
            f'WHERE "{col.name}" IS NOT NULL LIMIT {DISTINCT_VALUES_CAP + 1}'
        ).fetchall()
        values = [r[0] for r in res[:DISTINCT_VALUES_CAP]]
        truncated = len(res) > DISTINCT_VALUES_CAP
        lines = [f"Distinct values of {table.qualified_name}.{col.name}:"]
        lines += [f"  {_cell_text(v)}" for v in values]
        if truncated:
            lines.append(f"  ... (more than {DISTINCT_VALUES_CAP} distinct values, list truncated)")
        if not values:
            lines.append("  (none)")
        return ToolResult(rendered=_clip("\n".join(lines), self.render_budget), payload=values)

    def find_rows(
        self, term: str, column_name: str, table_name: str, additional_columns=None
    ) -> ToolResult:
        table, col, err = self._resolve(table_name, column_name)
        if err:
            return err
        extra = list(additional_columns or [])
        col_names = {c.name.lower() for c in table.columns}
        for e in extra:
            if e.lower() not in col_names:
                return ToolResult(
                    rendered=f"Unknown column {e!r} in table {table.qualified_name}.", is_error=True
                )
        projected = [col.name] + extra
        rows = []
        needle = term.lower()
        cur = self.db.connection.execute(
            "SELECT " + ", ".join(f'"{c}"' for c in projected) + f' FROM "{table.qualified_name}"'
        )
        for row in cur:
            if row[0] is not None and needle in _cell_text(row[0]).lower():
                rows.append(tuple(row))
                if len(rows) >= FIND_ROWS_CAP:
                    break
        table_out = ResultTable(column_names=projected, rows=rows)
        header = f"Rows of {table.qualified_name} where {col.name} contains {term!r}:"
        return ToolResult(
            rendered=_clip(header + "\n" + render_table(table_out, self.render_budget), self.render_budget),
            payload=table_out,
        )

    def sql_executor(self, sql_query: str) -> ToolResult:
        from .dblayer import execute_sql

        res = execute_sql(
            self.db, sql_query, ExecLimits(max_rows=EXPLORE_MAX_ROWS, timeout_s=EXPLORE_TIMEOUT_S)
        )
        if isinstance(res, ExecError):
            return ToolResult(rendered=_clip(f"SQL error: {res.message}", self.render_budget), is_error=True)
        return ToolResult(rendered=render_table(res, self.render_budget), payload=res)

    def python_executor(self, program: str) -> ToolResult:
        if self.sandbox is None:
            return ToolResult(rendered="Python sandbox is not available in this session.", is_error=True)
        try:
            resp = self.sandbox.exec(program)
        except Exception as exc:  # SandboxDead and friends become tool feedback
            return ToolResult(
                rendered=f"Sandbox failure: {exc}. The session was restarted; re-run your code.",
                is_error=True,
            )
        if resp.get("status") == "TIMEOUT":
            return ToolResult(
                rendered="Execution timed out; the sandbox was restarted and state was lost.",
                is_error=True,
            )
        parts = []
        if resp.get("stdout"):
            parts.append(resp["stdout"])
        if resp.get("value_repr"):
            parts.append(resp["value_repr"])
        if resp.get("status") == "ERROR":
            parts.append(resp.get("error", ""))
            return ToolResult(rendered=_clip("\n".join(parts), self.render_budget), is_error=True)
        return ToolResult(
            rendered=_clip("\n".join(parts) or "(no output)", self.render_budget), payload=resp
        )

    # --- dispatch -----------------------------------------------------------

    _HANDLERS = {
        "GetSchema": "get_schema",
        "GetTableCol": "get_table_col",
        "GetColValues": "get_col_values",
        "FindRows": "find_rows",
        "SQLExecutor": "sql_executor",
        "PythonExecutor": "python_executor",
    }

    def dispatch(self, call: ToolCallRequest, allowed: Optional[list[str]] = None) -> ToolResult:
        """Validate, route, and record one tool call."""
        import time as _time

        start = _time.monotonic()
        result = self._dispatch_inner(call, allowed)
        digest = ""
        payload = result.payload
        if isinstance(payload, ResultTable):
            digest = canonicalize(payload).digest[:16]
        self._seq += 1
        self.records.append(
            ToolCallRecord(
                candidate_id=self.candidate_id,
                sequence_no=self._seq,
                tool_name=call.name,
                arguments=dict(call.arguments),
                result_digest=digest,
                duration_ms=(_time.monotonic() - start) * 1000.0,
                truncated="clipped" in result.rendered or "truncated" in result.rendered,
            )
        )
        return result

    def _dispatch_inner(self, call: ToolCallRequest, allowed: Optional[list[str]]) -> ToolResult:
        if call.name not in TOOL_SPECS or (allowed is not None and call.name not in allowed):
            names = ", ".join(allowed if allowed is not None else list(TOOL_SPECS))
            return ToolResult(rendered=f"Unknown tool {call.name!r}. Available tools: {names}", is_error=True)
        spec = TOOL_SPECS[call.name]
        missing = [p for p, _, req in spec.parameters if req and p not in call.arguments]
        if missing:
            return ToolResult(
                rendered=(
                    f"Bad arguments for {call.name}: missing {', '.join(missing)}. "
                    f"Expected parameters: {[p for p, _, _ in spec.parameters]}"
                ),
                is_error=True,
            )
        known = {p for p, _, _ in spec.parameters}
        kwargs = {k: v for k, v in call.arguments.items() if k in known}
        try:
            return getattr(self, self._HANDLERS[call.name])(**kwargs)
        except Exception as exc:  # never raise past the dispatch boundary
            return ToolResult(rendered=f"Tool {call.name} failed: {exc}", is_error=True)

    def dispatcher(self, allowed: Optional[list[str]] = None):
        return lambda call: self.dispatch(call, allowed)

    def tool_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for rec in self.records:
            counts[rec.tool_name] = counts.get(rec.tool_name, 0) + 1
        return counts
