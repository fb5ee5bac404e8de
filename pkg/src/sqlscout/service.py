"""HTTP service exposing the question-answering pipeline.

The CLI talks to this app in-process by default (ASGI transport), so the
same request and response models back both surfaces.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__
from .config import RunConfig, load_config, make_backend
from .dblayer import ResultTable, open_database, snapshot_hierarchy
from .errors import SqlScoutError
from .evalharness import load_manifest, run_benchmark
from .pipeline import answer_question, transpile_to_sql
from .sandboxproto import StubSandboxSession
from . import prompts


class ConfigOverrides(BaseModel):
    k: Optional[int] = None
    m: Optional[int] = None
    repairs: Optional[int] = None
    backtracks: Optional[int] = None
    sql_only: Optional[bool] = None
    no_diversity: Optional[bool] = None
    no_repair: Optional[bool] = None
    endpoint: Optional[str] = None
    model_id: Optional[str] = None
    tier2_model_id: Optional[str] = None
    tier2_endpoint: Optional[str] = None
    temperature: Optional[float] = None
    dialect: Optional[str] = None
    trace_path: Optional[str] = None
    report_path: Optional[str] = None
    parallelism: Optional[int] = None
    max_loop_steps: Optional[int] = None
    answer_max_rows: Optional[int] = None

    def apply(self, config_file: Optional[str], **extra) -> RunConfig:
        overrides = {k: v for k, v in self.model_dump().items() if v is not None}
        overrides.update({k: v for k, v in extra.items() if v is not None})
        return load_config(config_file, overrides)


class RunRequest(BaseModel):
    db: str
    question: str
    docs: list[str] = Field(default_factory=list)
    config_file: Optional[str] = None
    overrides: ConfigOverrides = Field(default_factory=ConfigOverrides)


class VoteClassModel(BaseModel):
    digest: str
    members: list[int]
    size: int
    has_sql: bool


class RunResponse(BaseModel):
    status: str
    final_sql: Optional[str] = None
    columns: Optional[list[str]] = None
    rows: Optional[list[list[Any]]] = None
    classes: list[VoteClassModel] = Field(default_factory=list)
    winner_digest: str = ""
    transpiled: bool = False
    failure: str = ""
    stats: dict = Field(default_factory=dict)


class BenchRequest(BaseModel):
    manifest: str
    config_file: Optional[str] = None
    overrides: ConfigOverrides = Field(default_factory=ConfigOverrides)


class RecordModel(BaseModel):
    item_id: str
    sample_index: int
    correct: bool
    micro_credit: float
    language: str = ""
    errored: bool = False
    error: str = ""


class BenchResponse(BaseModel):
    report: dict
    report_text: str
    records: list[RecordModel]


class TranspileRequest(BaseModel):
    db: str
    python_source: str
    plan: str = ""
    config_file: Optional[str] = None
    overrides: ConfigOverrides = Field(default_factory=ConfigOverrides)


class TranspileResponse(BaseModel):
    sql: Optional[str] = None
    verified: bool = False
    tier_used: int = 0
    attempts: int = 0
    failure: str = ""
    columns: Optional[list[str]] = None
    rows: Optional[list[list[Any]]] = None


def create_app() -> FastAPI:
    app = FastAPI(title="sqlscout", version=__version__)

    @app.exception_handler(SqlScoutError)
    async def domain_error(_request: Request, exc: SqlScoutError):
        return JSONResponse(status_code=400, content={"detail": f"{type(exc).__name__}: {exc}"})

    @app.exception_handler(ValueError)
    async def value_error(_request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "version": __version__}

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest) -> RunResponse:
        config = req.overrides.apply(req.config_file, db_location=req.db, question=req.question)
        answer = answer_question(req.question, req.db, req.docs, config)
        payload = answer.to_json()
        return RunResponse(
            status=payload["status"],
            final_sql=payload["final_sql"],
            columns=payload["columns"],
            rows=payload["rows"],
            classes=[VoteClassModel(**c) for c in payload["classes"]],
            winner_digest=payload["winner_digest"],
            transpiled=payload["transpiled"],
            failure=answer.vote.failure,
            stats=payload["stats"],
        )

    @app.post("/bench", response_model=BenchResponse)
    def bench(req: BenchRequest) -> BenchResponse:
        config = req.overrides.apply(req.config_file, manifest=req.manifest)
        items = load_manifest(req.manifest)
        outcome = run_benchmark(items, config)
        if config.report_path:
            import json as _json

            with open(config.report_path, "w") as fh:
                _json.dump(outcome.report.to_json(), fh, indent=2)
        return BenchResponse(
            report=outcome.report.to_json(),
            report_text=outcome.report.to_text(),
            records=[
                RecordModel(
                    item_id=r.item_id,
                    sample_index=r.sample_index,
                    correct=r.correct,
                    micro_credit=r.micro_credit,
                    language=r.language,
                    errored=r.errored,
                    error=r.error,
                )
                for r in outcome.records
            ],
        )

    @app.post("/transpile", response_model=TranspileResponse)
    def transpile(req: TranspileRequest) -> TranspileResponse:
        config = req.overrides.apply(req.config_file, db_location=req.db)
        db = open_database(req.db, config.dialect, read_only=True)
        try:
            sandbox = StubSandboxSession(req.db)
            try:
                reply = sandbox.exec(req.python_source)
            finally:
                sandbox.close()
            if reply["status"] != "OK" or not reply["answer_table"]:
                detail = reply.get("error") or "the program produced no answer table"
                return TranspileResponse(failure=f"python execution failed: {detail.strip()}")
            consensus = ResultTable(
                column_names=list(reply["answer_table"]["columns"]),
                rows=[tuple(r) for r in reply["answer_table"]["rows"]],
            )
            snapshot = snapshot_hierarchy(db)
            schema_text = prompts.render_snapshot(snapshot, [])
            tiers = [
                (make_backend(config.endpoint), config.llm_config()),
                (make_backend(config.tier2_endpoint or config.endpoint), config.tier2_llm_config()),
            ]
            report = transpile_to_sql(
                req.python_source,
                req.plan,
                consensus,
                db,
                schema_text,
                tiers,
                answer_max_rows=config.answer_max_rows,
            )
            return TranspileResponse(
                sql=report.sql,
                verified=report.sql is not None,
                tier_used=report.tier_used,
                attempts=report.attempts,
                failure=report.failure,
                columns=consensus.column_names,
                rows=[list(r) for r in consensus.rows],
            )
        finally:
            db.close()

    return app


app = create_app()
