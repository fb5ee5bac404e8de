"""Stateful interpreter worker.

Protocol: one JSON object per line on stdin, one per line on stdout.

    request:  {"op": "EXEC"|"RESET"|"PING"|"SHUTDOWN", "code": str, "request_id": int}
    response: {"request_id", "status", "stdout", "value_repr", "answer_table", "error"}

status is OK, ERROR, or TIMEOUT (TIMEOUT is produced host-side when the
worker is killed). Every request gets exactly one response, in order.

User code runs in a single persistent namespace with a read-only sqlite
connection bound to ``conn``. A result table is produced either by
assigning a tabular value to ``answer`` or by printing CSV between
``<<ANSWER`` and ``ANSWER>>`` lines; the variable wins if both are present.
"""

from __future__ import annotations

import argparse
import ast
import contextlib
import csv
import io
import json
import sqlite3
import sys
import traceback
from typing import Optional

ANSWER_OPEN = "<<ANSWER"
ANSWER_CLOSE = "ANSWER>>"


def infer_cell(text: str):
    if text == "":
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def answer_table_from_value(value) -> Optional[dict]:
    if value is None:
        return None
    if hasattr(value, "columns") and hasattr(value, "itertuples"):  # dataframe-like
        return {
            "columns": [str(c) for c in value.columns],
            "rows": [list(t) for t in value.itertuples(index=False, name=None)],
        }
    if isinstance(value, (list, tuple)):
        items = list(value)
        if not items:
            return {"columns": ["answer"], "rows": []}
        first = items[0]
        if isinstance(first, dict):
            cols = list(first.keys())
            return {"columns": cols, "rows": [[row.get(c) for c in cols] for row in items]}
        if isinstance(first, (list, tuple)):
            return {"columns": [f"c{i}" for i in range(len(first))], "rows": [list(r) for r in items]}
        return {"columns": ["answer"], "rows": [[v] for v in items]}
    return {"columns": ["answer"], "rows": [[value]]}


def answer_table_from_stdout(stdout: str) -> Optional[dict]:
    if ANSWER_OPEN not in stdout or ANSWER_CLOSE not in stdout:
        return None
    body = stdout.split(ANSWER_OPEN, 1)[1].split(ANSWER_CLOSE, 1)[0].strip("\n")
    reader = list(csv.reader(io.StringIO(body)))
    if not reader:
        return None
    return {"columns": reader[0], "rows": [[infer_cell(c) for c in r] for r in reader[1:]]}


class Worker:
    def __init__(self, db_location: Optional[str], out_kb: int):
        self.db_location = db_location
        self.out_cap = out_kb * 1024
        self.conn: Optional[sqlite3.Connection] = None
        self.startup_error = ""
        if db_location:
            try:
                self.conn = sqlite3.connect(f"file:{db_location}?mode=ro", uri=True)
                self.conn.execute("PRAGMA query_only = ON")
            except sqlite3.Error as exc:
                self.startup_error = f"could not open database {db_location}: {exc}"
        self.namespace: dict = {}
        self._seed()

    def _seed(self):
        self.namespace = {"__builtins__": __builtins__}
        if self.conn is not None:
            self.namespace["conn"] = self.conn

    def response(self, request_id, status, stdout="", value_repr="", answer_table=None, error=""):
        if len(stdout) > self.out_cap:
            stdout = stdout[: self.out_cap] + "\n[stdout truncated]"
        return {
            "request_id": request_id,
            "status": status,
            "stdout": stdout,
            "value_repr": value_repr,
            "answer_table": answer_table,
            "error": error,
        }

    def handle(self, request: dict) -> dict:
        request_id = request.get("request_id", 0)
        op = request.get("op", "")
        if op == "PING":
            if self.startup_error:
                return self.response(request_id, "ERROR", error=self.startup_error)
            return self.response(request_id, "OK")
        if op == "RESET":
            self._seed()
            return self.response(request_id, "OK")
        if op == "EXEC":
            return self.exec_code(request_id, request.get("code", ""))
        return self.response(request_id, "ERROR", error=f"unknown op: {op!r}")

    def exec_code(self, request_id: int, code: str) -> dict:
        buf = io.StringIO()
        value_repr = ""
        try:
            tree = ast.parse(code)
            trailing = None
            if tree.body and isinstance(tree.body[-1], ast.Expr):
                trailing = ast.Expression(tree.body.pop().value)
            with contextlib.redirect_stdout(buf):
                if tree.body:
                    exec(compile(tree, "<sandbox>", "exec"), self.namespace)
                if trailing is not None:
                    value = eval(compile(trailing, "<sandbox>", "eval"), self.namespace)
                    if value is not None:
                        value_repr = repr(value)
        except BaseException:
            return self.response(request_id, "ERROR", stdout=buf.getvalue(), error=traceback.format_exc())
        stdout = buf.getvalue()
        answer = answer_table_from_value(self.namespace.get("answer"))
        if answer is None:
            answer = answer_table_from_stdout(stdout)
        return self.response(request_id, "OK", stdout=stdout, value_repr=value_repr, answer_table=answer)


def apply_memory_limit(mem_mb: int) -> None:
    if mem_mb <= 0:
        return
    try:
        import resource

        limit = mem_mb * 1024 * 1024
        resource.setrlimit(resource.RLIMIT_AS, (limit, limit))
    except (ImportError, ValueError, OSError):
        pass  # not supported on this platform; the wall clock still applies


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="interpreter worker (NDJSON over stdio)")
    parser.add_argument("--db", default=None, help="sqlite database opened read-only as `conn`")
    parser.add_argument("--out-kb", type=int, default=64, help="stdout cap per request, in KiB")
    parser.add_argument("--mem-mb", type=int, default=512, help="address-space limit, in MiB")
    args = parser.parse_args(argv)

    apply_memory_limit(args.mem_mb)
    worker = Worker(args.db, args.out_kb)
    stdout = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            request = json.loads(line)
        except json.JSONDecodeError as exc:
            stdout.write(json.dumps(worker.response(0, "ERROR", error=f"bad request: {exc}")) + "\n")
            stdout.flush()
            continue
        if request.get("op") == "SHUTDOWN":
            stdout.write(json.dumps(worker.response(request.get("request_id", 0), "OK")) + "\n")
            stdout.flush()
            break
        reply = worker.handle(request)
        try:
            payload = json.dumps(reply)
        except (TypeError, ValueError):
            reply = worker.response(request.get("request_id", 0), "ERROR",
                                    error="response is not JSON-serializable")
            payload = json.dumps(reply)
        stdout.write(payload + "\n")
        stdout.flush()
    if worker.conn is not None:
        worker.conn.close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
