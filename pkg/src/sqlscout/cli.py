"""Command-line surface: run, bench, transpile, inspect-trace, serve.

Every data-plane command goes through the HTTP service models. Without
--server the app is mounted in-process, so no network or daemon is needed;
with --server the same requests go to a remote instance.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Optional

import click
import httpx


def _client(server: Optional[str]) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app(), raise_server_exceptions=False)


def _post(server: Optional[str], path: str, payload: dict) -> dict:
    with _client(server) as client:
        resp = client.post(path, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except Exception:
            detail = resp.text
        click.echo(f"error: {detail}", err=True)
        sys.exit(1)
    return resp.json()


def _overrides(**kwargs) -> dict:
    rename = {
        "no_diverse": "no_diversity",
        "model": "model_id",
        "tier2_model": "tier2_model_id",
        "trace": "trace_path",
        "report": "report_path",
    }
    out = {}
    for key, value in kwargs.items():
        if value is None or value is False:
            continue
        out[rename.get(key, key)] = value
    return out


_shared = [
    click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False), default=None,
                 help="Config file with key = value lines; flags override it."),
    click.option("--server", default=None, help="Remote service URL; defaults to in-process."),
    click.option("--k", type=int, default=None, help="Total candidate plans."),
    click.option("--m", type=int, default=None, help="Plans sampled per batch."),
    click.option("--repairs", type=int, default=None, help="Code-repair budget per program."),
    click.option("--backtracks", type=int, default=None, help="Plan-backtrack budget per candidate."),
    click.option("--sql-only", is_flag=True, default=False, help="Disable Python synthesis."),
    click.option("--no-diverse", is_flag=True, default=False, help="Disable diversity prompting."),
    click.option("--no-repair", is_flag=True, default=False, help="Disable repair and backtracking."),
    click.option("--endpoint", default=None, help="LLM endpoint URL, or script:<fixture>."),
    click.option("--model", default=None, help="Model identifier."),
    click.option("--tier2-model", default=None, help="Escalation model for transpilation."),
    click.option("--temperature", type=float, default=None),
    click.option("--trace", default=None, help="Write the trace JSONL here."),
    click.option("--report", default=None, help="Write the report JSON here."),
    click.option("--dialect", default=None, type=click.Choice(["sqlite", "snowflake_like"])),
]


def shared_options(fn):
    for option in reversed(_shared):
        fn = option(fn)
    return fn


@click.group()
def main():
    """Agentic text-to-SQL over live databases."""


@main.command()
@click.option("--db", required=True, help="Path to the database file.")
@click.option("--question", required=True, help="Natural-language question.")
@click.option("--doc", "docs", multiple=True, help="External document; repeatable.")
@shared_options
def run(db, question, docs, config_file, server, **flags):
    """Answer one question and print the final SQL and result."""
    if not Path(db).exists():
        click.echo(f"error: database not found: {db}", err=True)
        sys.exit(1)
    payload = {
        "db": db,
        "question": question,
        "docs": list(docs),
        "config_file": config_file,
        "overrides": _overrides(**flags),
    }
    body = _post(server, "/run", payload)
    click.echo(f"status: {body['status']}")
    if body["final_sql"]:
        click.echo("final SQL:")
        click.echo(body["final_sql"])
    if body["columns"] is not None:
        click.echo("result:")
        click.echo("  " + " | ".join(body["columns"]))
        for row in body["rows"][:20]:
            click.echo("  " + " | ".join(str(c) for c in row))
        if len(body["rows"]) > 20:
            click.echo(f"  ... {len(body['rows']) - 20} more rows")
    if body["status"] != "SUCCEEDED":
        if body.get("failure"):
            click.echo(f"failure: {body['failure']}", err=True)
        sys.exit(2)


@main.command()
@click.option("--manifest", required=True, help="Benchmark manifest (JSON lines).")
@shared_options
def bench(manifest, config_file, server, **flags):
    """Run a benchmark manifest and print the score report."""
    if not Path(manifest).exists():
        click.echo(f"error: manifest not found: {manifest}", err=True)
        sys.exit(1)
    payload = {
        "manifest": manifest,
        "config_file": config_file,
        "overrides": _overrides(**flags),
    }
    body = _post(server, "/bench", payload)
    click.echo(body["report_text"])


@main.command()
@click.option("--db", required=True, help="Path to the database file.")
@click.option("--program", "program_path", required=True,
              type=click.Path(exists=True, dir_okay=False), help="Python program to translate.")
@click.option("--plan", default="", help="Plan narrative giving the program's intent.")
@shared_options
def transpile(db, program_path, plan, config_file, server, **flags):
    """Translate a Python program into verified SQL."""
    if not Path(db).exists():
        click.echo(f"error: database not found: {db}", err=True)
        sys.exit(1)
    payload = {
        "db": db,
        "python_source": Path(program_path).read_text(),
        "plan": plan,
        "config_file": config_file,
        "overrides": _overrides(**flags),
    }
    body = _post(server, "/transpile", payload)
    if body["verified"]:
        click.echo(f"verified on tier {body['tier_used']} after {body['attempts']} attempt(s):")
        click.echo(body["sql"])
    else:
        click.echo(f"transpilation failed: {body['failure']}", err=True)
        sys.exit(2)


@main.command("inspect-trace")
@click.argument("trace_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--phase", default=None, help="Only show events from this phase.")
@click.option("--candidate", default=None, help="Only show events for this candidate id.")
def inspect_trace(trace_path, phase, candidate):
    """Pretty-print a trace JSONL file."""
    for line in Path(trace_path).read_text().splitlines():
        if not line.strip():
            continue
        event = json.loads(line)
        if phase and event.get("phase") != phase:
            continue
        if candidate is not None and str(event.get("candidate_id", "")) != candidate:
            continue
        who = event.get("candidate_id") or "-"
        rest = {
            k: v for k, v in event.items() if k not in ("timestamp", "candidate_id", "phase")
        }
        detail = " ".join(f"{k}={json.dumps(v, default=str)}" for k, v in rest.items())
        click.echo(f"[{who:>8}] {event.get('phase', '?'):<18} {detail}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
