"""Database access, the execution-result model, and output equivalence.

Everything downstream (tool rendering, majority voting, transpilation
verification, gold scoring) funnels result comparison through
:func:`canonicalize` / :func:`results_equivalent`, so the normalization
rules here are the single source of truth for "same answer".
"""

from __future__ import annotations

import hashlib
import json
import re
import sqlite3
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Optional, Sequence

from .errors import CorruptDatabaseError, NotFoundError, QueryFailedError, UnsupportedDialectError

DEFAULT_REL_TOL = 1e-6
DEFAULT_ABS_FLOOR = 1e-9

Cell = Any  # None | int | float | str | bytes
Row = tuple


class Dialect(str, Enum):
    SQLITE = "SQLITE"
    SNOWFLAKE_LIKE = "SNOWFLAKE_LIKE"


@dataclass
class DbHandle:
    location: str
    dialect: Dialect
    read_only: bool
    connection: sqlite3.Connection

    def close(self) -> None:
        self.connection.close()


@dataclass
class ColumnEntry:
    name: str
    declared_type: str
    sample_values: list
    all_null: bool


@dataclass
class TableEntry:
    qualified_name: str
    columns: list[ColumnEntry]
    group_tag: Optional[str] = None


@dataclass
class SchemaEntry:
    name: str
    tables: list[str]  # qualified table names


@dataclass
class SchemaSnapshot:
    database_name: str
    schemas: list[SchemaEntry]
    tables: list[TableEntry]

    def schema_names(self) -> list[str]:
        return [s.name for s in self.schemas]

    def find_table(self, name: str) -> Optional[TableEntry]:
        """Case-insensitive lookup, accepting qualified or bare names."""
        want = name.lower()
        for t in self.tables:
            qn = t.qualified_name.lower()
            if qn == want or qn.split(".")[-1] == want:
                return t
        return None


@dataclass
class ResultTable:
    column_names: list[str]
    rows: list[Row]
    truncated: bool = False
    row_count_before_truncation: int = 0

    def __post_init__(self):
        if self.row_count_before_truncation < len(self.rows):
            self.row_count_before_truncation = len(self.rows)


@dataclass
class ExecError:
    kind: str  # syntax | runtime | timeout
    message: str


@dataclass
class CanonicalResult:
    digest: str
    column_names: list[str]
    normalized_rows: list[Row]
    order_sensitive: bool


def open_database(location: str, dialect: Dialect = Dialect.SQLITE, read_only: bool = True) -> DbHandle:
    if dialect is Dialect.SNOWFLAKE_LIKE:
        raise UnsupportedDialectError(
            "dialect SNOWFLAKE_LIKE has no execution backend in this build; "
            "only the embedded SQLITE backend is supported"
        )
    path = Path(location)
    if not path.exists():
        raise NotFoundError(f"database not found: {location}")
    mode = "ro" if read_only else "rw"
    conn = sqlite3.connect(f"file:{path}?mode={mode}", uri=True, check_same_thread=False)
    try:
        conn.execute("PRAGMA schema_version").fetchone()
    except sqlite3.DatabaseError as exc:
        conn.close()
        raise CorruptDatabaseError(f"not a usable database: {location} ({exc})") from exc
    return DbHandle(location=str(location), dialect=dialect, read_only=read_only, connection=conn)


def snapshot_hierarchy(db: DbHandle) -> SchemaSnapshot:
    """Database -> schema -> table -> column tree with per-column samples.

    Flat databases get exactly one synthetic schema named ``main``.
    """
    conn = db.connection
    try:
        names = [
            r[0]
            for r in conn.execute(
                "SELECT name FROM sqlite_master WHERE type='table' "
                "AND name NOT LIKE 'sqlite_%' ORDER BY name"
            )
        ]
        tables: list[TableEntry] = []
        for name in names:
            total = conn.execute(f'SELECT COUNT(*) FROM "{name}"').fetchone()[0]
            cols: list[ColumnEntry] = []
            for _, cname, ctype, *_ in conn.execute(f'PRAGMA table_info("{name}")'):
                samples = [
                    r[0]
                    for r in conn.execute(
                        f'SELECT "{cname}" FROM "{name}" WHERE "{cname}" IS NOT NULL LIMIT 3'
                    )
                ]
                cols.append(
                    ColumnEntry(
                        name=cname,
                        declared_type=ctype or "",
                        sample_values=samples,
                        all_null=(total > 0 and not samples),
                    )
                )
            tables.append(TableEntry(qualified_name=name, columns=cols))
    except sqlite3.Error as exc:
        raise QueryFailedError(f"introspection failed: {exc}") from exc
    db_name = Path(db.location).stem
    return SchemaSnapshot(
        database_name=db_name,
        schemas=[SchemaEntry(name="main", tables=[t.qualified_name for t in tables])],
        tables=tables,
    )


@dataclass
class ExecLimits:
    max_rows: int = 10000
    timeout_s: float = 30.0


def execute_sql(db: DbHandle, sql: str, limits: ExecLimits | None = None) -> ResultTable | ExecError:
    """Run arbitrary SQL, returning a clipped table or the engine error.

    The error message is preserved verbatim; it is repair feedback.
    """
    limits = limits or ExecLimits()
    conn = db.connection
    deadline = time.monotonic() + limits.timeout_s

    def _check_deadline():
        return 1 if time.monotonic() > deadline else 0

    conn.set_progress_handler(_check_deadline, 10000)
    try:
        cur = conn.execute(sql)
        if cur.description is None:
            return ResultTable(column_names=[], rows=[])
        col_names = [d[0] for d in cur.description]
        fetched = cur.fetchmany(limits.max_rows + 1)
        truncated = len(fetched) > limits.max_rows
        rows = [tuple(r) for r in fetched[: limits.max_rows]]
        count = len(rows)
        if truncated:
            # Keep draining (still under the deadline) to report the true size.
            count = len(fetched)
            while True:
                chunk = cur.fetchmany(10000)
                if not chunk:
                    break
                count += len(chunk)
        return ResultTable(
            column_names=col_names,
            rows=rows,
            truncated=truncated,
            row_count_before_truncation=count,
        )
    except sqlite3.OperationalError as exc:
        msg = str(exc)
        if "interrupted" in msg:
            return ExecError(kind="timeout", message=f"query timed out after {limits.timeout_s}s")
        kind = "syntax" if "syntax error" in msg else "runtime"
        return ExecError(kind=kind, message=msg)
    except sqlite3.Error as exc:
        return ExecError(kind="runtime", message=str(exc))
    finally:
        conn.set_progress_handler(None, 0)


# --- canonicalization -------------------------------------------------------

_ORDER_BY_RE = re.compile(r"\bORDER\s+BY\b", re.IGNORECASE)


def detect_order_sensitive(sql: str) -> bool:
    """True iff the final SELECT has a top-level ORDER BY (token scan)."""
    depth = 0
    sql_no_strings = re.sub(r"'(?:[^']|'')*'", "''", sql)
    for m in re.finditer(r"[()]|\bORDER\s+BY\b", sql_no_strings, re.IGNORECASE):
        tok = m.group(0)
        if tok == "(":
            depth += 1
        elif tok == ")":
            depth = max(0, depth - 1)
        elif depth == 0:
            return True
    return False


def _norm_cell(v: Cell, rel_tol: float, abs_floor: float) -> Cell:
    if v is None or isinstance(v, bytes):
        return v
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, (int, float)):
        x = float(v)
        if x != x or x in (float("inf"), float("-inf")):
            return x
        if abs(x) < abs_floor:
            x = 0.0
        else:
            # Round to the relative-tolerance grid (significant digits).
            digits = max(0, round(-1 * _log10(rel_tol)))
            x = float(f"%.{digits}g" % x)
        if x == int(x) and abs(x) < 2**53:
            return int(x)
        return x
    if isinstance(v, str):
        return v.rstrip()
    return str(v)


def _log10(x: float) -> float:
    import math

    return math.log10(x)


def _cell_sort_key(v: Cell):
    # NULLs first, then numbers, text, blobs.
    if v is None:
        return (0, 0.0, "")
    if isinstance(v, (int, float)):
        return (1, float(v), repr(v))
    if isinstance(v, str):
        return (2, 0.0, v)
    return (3, 0.0, v.hex())


def _cell_json(v: Cell):
    if v is None:
        return None
    if isinstance(v, int):
        return ["n", v]
    if isinstance(v, float):
        return ["n", repr(v)]
    if isinstance(v, str):
        return ["t", v]
    return ["b", v.hex()]


def canonicalize(
    t: ResultTable,
    order_sensitive: bool = False,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_floor: float = DEFAULT_ABS_FLOOR,
) -> CanonicalResult:
    """Normalize a result table for comparison and digest it.

    Column names are lowercased (order preserved), TEXT cells lose trailing
    whitespace, REAL cells snap to the tolerance grid (integral reals become
    integers so SQL and Python outputs agree on counts), and rows are sorted
    lexicographically with NULLs first unless the result is order-sensitive.
    """
    cols = [c.lower() for c in t.column_names]
    rows = [tuple(_norm_cell(v, rel_tol, abs_floor) for v in row) for row in t.rows]
    if not order_sensitive:
        rows.sort(key=lambda r: tuple(_cell_sort_key(v) for v in r))
    payload = json.dumps(
        {
            "columns": cols,
            "rows": [[_cell_json(v) for v in row] for row in rows],
            "ordered": order_sensitive,
        },
        separators=(",", ":"),
        ensure_ascii=False,
    )
    digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
    return CanonicalResult(
        digest=digest, column_names=cols, normalized_rows=rows, order_sensitive=order_sensitive
    )


def results_equivalent(
    a: ResultTable,
    b: ResultTable,
    order_sensitive: bool = False,
    rel_tol: float = DEFAULT_REL_TOL,
    abs_floor: float = DEFAULT_ABS_FLOOR,
) -> bool:
    ca = canonicalize(a, order_sensitive, rel_tol, abs_floor)
    cb = canonicalize(b, order_sensitive, rel_tol, abs_floor)
    return ca.digest == cb.digest


def table_checksum(db: DbHandle) -> str:
    """Full-content checksum of every user table; used to prove read-only-ness."""
    h = hashlib.sha256()
    names = [
        r[0]
        for r in db.connection.execute(
            "SELECT name FROM sqlite_master WHERE type='table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
        )
    ]
    for name in names:
        h.update(name.encode())
        for row in db.connection.execute(f'SELECT * FROM "{name}"'):
            h.update(repr(row).encode())
    return h.hexdigest()
