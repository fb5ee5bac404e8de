"""Client side of the sandbox wire protocol, plus an in-process stub.

The real interpreter host is a separate worker package speaking
newline-delimited JSON over its standard streams with bit-exact field
names: requests ``{"op","code","request_id"}`` and responses
``{"request_id","status","stdout","value_repr","answer_table","error"}``.
The stub implements the same response shape in-process so the pipeline and
its tests never need a subprocess.
"""

from __future__ import annotations

import contextlib
import csv
import io
import json
import sqlite3
import subprocess
import sys
import time
from typing import Optional

from .errors import SandboxDead, SpawnFailed

ANSWER_OPEN = "<<ANSWER"
ANSWER_CLOSE = "ANSWER>>"


def infer_cell(text: str):
    """CSV cell typing: integer, then real, then text; empty is NULL."""
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
    """Normalize the designated ``answer`` value into {columns, rows}."""
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
            width = len(first)
            return {"columns": [f"c{i}" for i in range(width)], "rows": [list(r) for r in items]}
        return {"columns": ["answer"], "rows": [[v] for v in items]}
    return {"columns": ["answer"], "rows": [[value]]}


def answer_table_from_stdout(stdout: str) -> Optional[dict]:
    """Parse CSV printed between the answer sentinels, header row required."""
    if ANSWER_OPEN not in stdout or ANSWER_CLOSE not in stdout:
        return None
    body = stdout.split(ANSWER_OPEN, 1)[1].split(ANSWER_CLOSE, 1)[0].strip("\n")
    reader = list(csv.reader(io.StringIO(body)))
    if not reader:
        return None
    header = reader[0]
    rows = [[infer_cell(c) for c in r] for r in reader[1:]]
    return {"columns": header, "rows": rows}


class StubSandboxSession:
    """In-process stand-in implementing the protocol response shape.

    Runs code in a persistent namespace with a read-only ``conn`` to the
    database. Suitable for tests and for single-process pipelines that do
    not need hard resource isolation.
    """

    def __init__(self, db_location: Optional[str] = None, out_kb: int = 64):
        self._conn = None
        if db_location:
            self._conn = sqlite3.connect(f"file:{db_location}?mode=ro", uri=True, check_same_thread=False)
        self.out_cap = out_kb * 1024
        self._request_id = 0
        self.namespace: dict = {}
        self._seed_namespace()

    def _seed_namespace(self):
        self.namespace = {"__name__": "__sandbox__"}
        if self._conn is not None:
            self.namespace["conn"] = self._conn

    def _respond(self, status, stdout="", value_repr="", answer_table=None, error=""):
        if len(stdout) > self.out_cap:
            stdout = stdout[: self.out_cap] + "\n[stdout truncated]"
        return {
            "request_id": self._request_id,
            "status": status,
            "stdout": stdout,
            "value_repr": value_repr,
            "answer_table": answer_table,
            "error": error,
        }

    def ping(self) -> dict:
        self._request_id += 1
        return self._respond("OK")

    def exec(self, code: str) -> dict:
        self._request_id += 1
        import ast
        import traceback

        buf = io.StringIO()
        value_repr = ""
        try:
            tree = ast.parse(code)
            trailing_expr = None
            if tree.body and isinstance(tree.body[-1], ast.Expr):
                trailing_expr = ast.Expression(tree.body.pop().value)
            with contextlib.redirect_stdout(buf):
                if tree.body:
                    exec(compile(tree, "<sandbox>", "exec"), self.namespace)
                if trailing_expr is not None:
                    value = eval(compile(trailing_expr, "<sandbox>", "eval"), self.namespace)
                    if value is not None:
                        value_repr = repr(value)
        except Exception:
            return self._respond("ERROR", stdout=buf.getvalue(), error=traceback.format_exc())
        stdout = buf.getvalue()
        answer = answer_table_from_value(self.namespace.get("answer"))
        if answer is None:
            answer = answer_table_from_stdout(stdout)
        return self._respond("OK", stdout=stdout, value_repr=value_repr, answer_table=answer)

    def reset(self) -> dict:
        self._request_id += 1
        self._seed_namespace()
        return self._respond("OK")

    def close(self) -> None:
        if self._conn is not None:
            self._conn.close()


class SubprocessSandboxSession:
    """Speaks the NDJSON protocol to an external worker process.

    Timeouts kill and respawn the worker; the caller sees a TIMEOUT
    response and a fresh namespace.
    """

    def __init__(
        self,
        db_location: Optional[str] = None,
        wall_s: float = 60.0,
        mem_mb: int = 512,
        out_kb: int = 64,
        command: Optional[list[str]] = None,
    ):
        self.db_location = db_location
        self.wall_s = wall_s
        self.mem_mb = mem_mb
        self.out_kb = out_kb
        self.command = command or [sys.executable, "-m", "sqlscout_sandbox.worker"]
        self._request_id = 0
        self._proc: Optional[subprocess.Popen] = None
        self._spawn()

    def _spawn(self):
        cmd = list(self.command)
        if self.db_location:
            cmd += ["--db", str(self.db_location)]
        cmd += ["--out-kb", str(self.out_kb), "--mem-mb", str(self.mem_mb)]
        try:
            self._proc = subprocess.Popen(
                cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise SpawnFailed(f"could not start sandbox worker: {exc}") from exc
        resp = self._roundtrip({"op": "PING"}, timeout=10.0)
        if resp.get("status") != "OK":
            self.close()
            raise SpawnFailed(f"sandbox worker failed startup ping: {resp.get('error', resp)}")

    def _roundtrip(self, body: dict, timeout: float) -> dict:
        if self._proc is None or self._proc.poll() is not None:
            raise SandboxDead("sandbox worker process is gone")
        self._request_id += 1
        body = dict(body, request_id=self._request_id)
        try:
            self._proc.stdin.write(json.dumps(body) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SandboxDead(f"sandbox worker pipe broken: {exc}") from exc
        line = self._read_line(timeout)
        if line is None:
            # Wall-clock limit hit: kill, respawn, report TIMEOUT.
            self._kill()
            self._spawn()
            return {
                "request_id": body["request_id"],
                "status": "TIMEOUT",
                "stdout": "",
                "value_repr": "",
                "answer_table": None,
                "error": f"execution exceeded {timeout}s; sandbox restarted",
            }
        return json.loads(line)

    def _read_line(self, timeout: float) -> Optional[str]:
        import select

        deadline = time.monotonic() + timeout
        fd = self._proc.stdout
        while time.monotonic() < deadline:
            ready, _, _ = select.select([fd], [], [], min(0.1, max(0.0, deadline - time.monotonic())))
            if ready:
                line = fd.readline()
                if not line:
                    return None
                return line
        return None

    def _kill(self):
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def ping(self) -> dict:
        return self._roundtrip({"op": "PING"}, timeout=10.0)

    def exec(self, code: str) -> dict:
        return self._roundtrip({"op": "EXEC", "code": code}, timeout=self.wall_s + 2.0)

    def reset(self) -> dict:
        return self._roundtrip({"op": "RESET"}, timeout=10.0)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            try:
                self._proc.stdin.write(json.dumps({"op": "SHUTDOWN", "request_id": self._request_id + 1}) + "\n")
                self._proc.stdin.flush()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._kill()
        elif self._proc is not None:
            self._kill()
