"""Core question-answering pipeline: diverse plans, bilingual programs,
two-tier repair with plan backtracking, majority voting, and verified
transpilation of a Python consensus into the final SQL.
"""

from __future__ import annotations

import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import prompts
from .agent import Backend, LlmConfig, Message, chat, run_tool_loop
from .config import RunConfig, make_backend
from .context import PlanningContext, build_planning_context
from .dblayer import (
    CanonicalResult,
    DbHandle,
    Dialect,
    ExecError,
    ExecLimits,
    ResultTable,
    canonicalize,
    detect_order_sensitive,
    execute_sql,
    open_database,
    results_equivalent,
    snapshot_hierarchy,
)
from .errors import TranspilationFailed
from .sandboxproto import StubSandboxSession
from .tools import ToolSession, render_table, tool_specs_openai

logger = logging.getLogger(__name__)

TRANSPILE_ATTEMPTS_PER_TIER = 2


# --- domain types -----------------------------------------------------------


@dataclass
class Plan:
    plan_id: str
    narrative: str
    language_hint: Optional[str] = None  # SQL | PYTHON
    revision: int = 0
    provenance: str = "SAMPLED"  # SAMPLED | REFINED | BACKTRACKED
    warning: str = ""

    def __post_init__(self):
        if not self.narrative:
            raise ValueError("plan narrative must be non-empty")


@dataclass
class Program:
    plan_id: str
    language: str  # SQL | PYTHON | NONE
    source: str
    attempt: int = 0


@dataclass
class ReviewVerdict:
    kind: str  # OK | CODE_ERROR | PLAN_ERROR
    message: str = ""

    def __post_init__(self):
        if self.kind != "OK" and not self.message:
            raise ValueError("non-OK verdicts need a message")


@dataclass
class Candidate:
    candidate_id: int
    plan: Plan
    program: Optional[Program] = None
    result: ResultTable | ExecError | None = None
    status: str = "FAILED"  # SUCCEEDED | FAILED
    repair_count: int = 0
    backtrack_count: int = 0
    program_generations: int = 0
    repairs_per_incarnation: list[int] = field(default_factory=list)
    order_sensitive: bool = False
    last_verdict: Optional[ReviewVerdict] = None
    tool_counts: dict = field(default_factory=dict)


@dataclass
class VoteClass:
    digest: str
    members: list[int]
    size: int
    has_sql: bool


@dataclass
class VoteOutcome:
    classes: list[VoteClass]
    winner_digest: str = ""
    winner_candidate: Optional[int] = None
    final_sql: Optional[str] = None
    final_result: Optional[ResultTable] = None
    transpiled: bool = False
    status: str = "FAILED"  # SUCCEEDED | FAILED
    failure: str = ""


@dataclass
class FinalAnswer:
    final_sql: Optional[str]
    final_result: Optional[ResultTable]
    vote: VoteOutcome
    status: str
    stats: dict
    plans: list[Plan] = field(default_factory=list)
    candidates: list[Candidate] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        rows = [list(r) for r in self.final_result.rows] if self.final_result else None
        return {
            "status": self.status,
            "final_sql": self.final_sql,
            "columns": self.final_result.column_names if self.final_result else None,
            "rows": rows,
            "classes": [
                {"digest": c.digest, "members": c.members, "size": c.size, "has_sql": c.has_sql}
                for c in self.vote.classes
            ],
            "winner_digest": self.vote.winner_digest,
            "transpiled": self.vote.transpiled,
            "stats": self.stats,
        }


class TraceLog:
    """JSON-lines event stream shared by one answer_question run."""

    def __init__(self):
        self.events: list[dict] = []

    def emit(self, phase: str, candidate_id: str = "", **fields) -> None:
        event = {"timestamp": time.time(), "candidate_id": candidate_id, "phase": phase}
        event.update(fields)
        self.events.append(event)

    def write(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for event in self.events:
                fh.write(json.dumps(event, default=str) + "\n")


# --- parsing helpers --------------------------------------------------------

_FENCE_RE = re.compile(r"```(sql|python)\s*\n(.*?)```", re.IGNORECASE | re.DOTALL)
_JSON_FENCE_RE = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def _find_json(text: str, opener: str, closer: str):
    for m in _JSON_FENCE_RE.finditer(text):
        try:
            return json.loads(m.group(1))
        except ValueError:
            pass
    start = text.find(opener)
    while start != -1:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == opener:
                depth += 1
            elif text[i] == closer:
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(text[start : i + 1])
                    except ValueError:
                        break
        start = text.find(opener, start + 1)
    return None


def parse_plan_list(text: str) -> list[dict]:
    data = _find_json(text, "[", "]")
    if not isinstance(data, list):
        return []
    plans = []
    for item in data:
        if isinstance(item, dict) and item.get("plan"):
            hint = item.get("language_hint")
            plans.append({"plan": str(item["plan"]), "language_hint": hint if hint in ("SQL", "PYTHON") else None})
    return plans


def parse_plan_object(text: str) -> Optional[dict]:
    data = _find_json(text, "{", "}")
    if isinstance(data, dict) and data.get("plan"):
        hint = data.get("language_hint")
        return {"plan": str(data["plan"]), "language_hint": hint if hint in ("SQL", "PYTHON") else None}
    return None


def extract_program(text: str) -> Optional[tuple[str, str]]:
    """Last fenced sql/python block in the message, as (language, source)."""
    matches = _FENCE_RE.findall(text)
    if not matches:
        return None
    lang, source = matches[-1]
    return ("SQL" if lang.lower() == "sql" else "PYTHON", source.strip())


def parse_verdict(text: str) -> ReviewVerdict:
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        upper = line.upper()
        if upper == "OK" or upper.startswith("OK"):
            return ReviewVerdict("OK")
        for kind in ("CODE_ERROR", "PLAN_ERROR"):
            if upper.startswith(kind):
                msg = line[len(kind):].lstrip(" :").strip() or text.strip()
                return ReviewVerdict(kind, msg)
        break
    logger.warning("unparseable review verdict; failing open: %r", text[:100])
    return ReviewVerdict("OK")


# --- plan generation --------------------------------------------------------


def generate_plans(
    ctx: PlanningContext,
    k: int,
    m: int,
    backend: Backend,
    session: ToolSession,
    config: LlmConfig,
    diversity: bool = True,
    sql_only: bool = False,
    trace: Optional[TraceLog] = None,
) -> list[Plan]:
    """K plans in batches of M; diversity feeds prior plans back into prompts."""
    tool_names = [n for n in ["GetSchema", "GetTableCol", "GetColValues", "FindRows", "SQLExecutor", "PythonExecutor"] if not (sql_only and n == "PythonExecutor")]
    specs = tool_specs_openai(tool_names)
    dispatcher = session.dispatcher(allowed=tool_names)
    plans: list[Plan] = []

    def one_batch(size: int) -> list[dict]:
        prior = [p.narrative for p in plans] if diversity else []
        user = prompts.planner_user(ctx, size, prior, diversity)
        if trace:
            trace.emit("plan_batch", batch_size=size, diversity=diversity, prompt=user)
        result = run_tool_loop(backend, prompts.PLANNER_SYSTEM, user, specs, dispatcher, config)
        return parse_plan_list(result.final_text)

    while len(plans) < k:
        size = min(m, k - len(plans))
        parsed = one_batch(size)
        if len(parsed) < size:  # retry the short batch once
            parsed += one_batch(size - len(parsed))
        for item in parsed[:size]:
            plans.append(
                Plan(plan_id=f"p{len(plans) + 1}", narrative=item["plan"], language_hint=item["language_hint"])
            )
        if not parsed:
            # Resampling produced nothing; pad from existing plans to honor K.
            if not plans:
                raise RuntimeError("planner produced no parseable plans")
            while len(plans) < k:
                base = plans[len(plans) % max(1, len(plans))]
                plans.append(
                    Plan(
                        plan_id=f"p{len(plans) + 1}",
                        narrative=base.narrative,
                        language_hint=base.language_hint,
                        warning="padded: planner under-produced",
                    )
                )
    return plans[:k]


def review_and_refine_plan(
    plan: Plan,
    ctx: PlanningContext,
    backend: Backend,
    session: ToolSession,
    config: LlmConfig,
    trace: Optional[TraceLog] = None,
) -> Plan:
    """One review pass; on an issue, at most one tool-driven refinement round."""
    reply = chat(
        backend,
        [Message("system", prompts.PLAN_REVIEW_SYSTEM), Message("user", prompts.plan_review_user(ctx, plan.narrative))],
        [],
        config,
    )
    issue = _parse_plan_issue(reply.content)
    if issue is None:
        return plan
    if trace:
        trace.emit("plan_refine", plan_id=plan.plan_id, issue=issue)
    specs = tool_specs_openai(["GetSchema", "GetTableCol", "GetColValues", "FindRows", "SQLExecutor"])
    result = run_tool_loop(
        backend,
        prompts.REFINE_SYSTEM,
        prompts.refine_user(ctx, plan.narrative, issue),
        specs,
        session.dispatcher(),
        config,
    )
    revised = parse_plan_object(result.final_text)
    if revised is None:
        plan.warning = f"refinement produced no parseable plan: {issue}"
        return plan
    new_plan = Plan(
        plan_id=plan.plan_id,
        narrative=revised["plan"],
        language_hint=revised["language_hint"] or plan.language_hint,
        revision=plan.revision + 1,
        provenance="REFINED",
    )
    recheck = chat(
        backend,
        [
            Message("system", prompts.PLAN_REVIEW_SYSTEM),
            Message("user", prompts.plan_review_user(ctx, new_plan.narrative)),
        ],
        [],
        config,
    )
    still = _parse_plan_issue(recheck.content)
    if still is not None:
        new_plan.warning = f"refinement budget exhausted; remaining issue: {still}"
    return new_plan


def _parse_plan_issue(text: str) -> Optional[str]:
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.upper().startswith("OK"):
            return None
        if line.upper().startswith("ISSUE"):
            return line[5:].lstrip(" :").strip() or "unspecified issue"
        break
    return None


# --- program generation -----------------------------------------------------


def synthesize_program(
    plan: Plan,
    ctx: PlanningContext,
    backend: Backend,
    session: ToolSession,
    config: LlmConfig,
    sql_only: bool = False,
) -> Optional[Program]:
    tool_names = ["GetSchema", "GetTableCol", "GetColValues", "FindRows", "SQLExecutor"]
    if not sql_only:
        tool_names.append("PythonExecutor")
    specs = tool_specs_openai(tool_names)
    dispatcher = session.dispatcher(allowed=tool_names)
    user = prompts.synth_user(ctx, plan.narrative, sql_only)
    result = run_tool_loop(backend, prompts.SYNTH_SYSTEM, user, specs, dispatcher, config)
    parsed = extract_program(result.final_text)
    if parsed and sql_only and parsed[0] == "PYTHON":
        retry_user = user + "\n\nYour previous final program was Python; only SQL is accepted. Provide SQL."
        result = run_tool_loop(backend, prompts.SYNTH_SYSTEM, retry_user, specs, dispatcher, config)
        parsed = extract_program(result.final_text)
        if parsed and parsed[0] == "PYTHON":
            parsed = None
    if parsed is None:
        return None
    language, source = parsed
    return Program(plan_id=plan.plan_id, language=language, source=source)


def execute_program(
    program: Program,
    db: DbHandle,
    sandbox,
    answer_max_rows: int = 10000,
) -> ResultTable | ExecError:
    if program.language == "SQL":
        return execute_sql(db, program.source, ExecLimits(max_rows=answer_max_rows))
    if program.language == "PYTHON":
        if sandbox is None:
            return ExecError("runtime", "no Python sandbox available")
        resp = sandbox.exec(program.source)
        if resp.get("status") == "TIMEOUT":
            return ExecError("timeout", resp.get("error") or "sandbox execution timed out")
        if resp.get("status") == "ERROR":
            return ExecError("runtime", resp.get("error", "sandbox error"))
        table = resp.get("answer_table")
        if not table:
            return ExecError(
                "runtime",
                "program produced no answer: assign the `answer` variable or print CSV "
                "between <<ANSWER and ANSWER>>",
            )
        return ResultTable(column_names=list(table["columns"]), rows=[tuple(r) for r in table["rows"]])
    return ExecError("runtime", "no final program emitted")


def review_output(
    question: str,
    plan: Plan,
    program: Program,
    result: ResultTable | ExecError,
    backend: Backend,
    config: LlmConfig,
) -> ReviewVerdict:
    """Execution errors classify as CODE_ERROR with zero LLM calls."""
    if isinstance(result, ExecError):
        return ReviewVerdict("CODE_ERROR", result.message)
    reply = chat(
        backend,
        [
            Message("system", prompts.REVIEW_SYSTEM),
            Message(
                "user",
                prompts.review_user(question, plan.narrative, program.source, program.language, render_table(result)),
            ),
        ],
        [],
        config,
    )
    return parse_verdict(reply.content)


def repair_program(
    program: Program,
    verdict: ReviewVerdict,
    backend: Backend,
    config: LlmConfig,
    plan: Plan,
    sql_only: bool = False,
) -> Optional[Program]:
    """One repair round; prompt carries the prior source and message verbatim."""
    reply = chat(
        backend,
        [
            Message("system", prompts.REPAIR_SYSTEM),
            Message("user", prompts.repair_user(plan.narrative, program.source, program.language, verdict.message)),
        ],
        [],
        config,
    )
    parsed = extract_program(reply.content)
    if parsed is None or (sql_only and parsed[0] == "PYTHON"):
        return None
    language, source = parsed
    if source.strip() == program.source.strip():
        logger.warning("repair produced identical source for plan %s", plan.plan_id)
    return Program(plan_id=plan.plan_id, language=language, source=source, attempt=program.attempt + 1)


def backtrack_plan(
    plan: Plan,
    verdict: ReviewVerdict,
    ctx: PlanningContext,
    backend: Backend,
    session: ToolSession,
    config: LlmConfig,
) -> Plan:
    specs = tool_specs_openai(["GetSchema", "GetTableCol", "GetColValues", "FindRows", "SQLExecutor"])
    result = run_tool_loop(
        backend,
        prompts.BACKTRACK_SYSTEM,
        prompts.backtrack_user(ctx, plan.narrative, verdict.message),
        specs,
        session.dispatcher(),
        config,
    )
    revised = parse_plan_object(result.final_text)
    if revised is None:
        return Plan(
            plan_id=plan.plan_id,
            narrative=plan.narrative,
            language_hint=plan.language_hint,
            revision=plan.revision + 1,
            provenance="BACKTRACKED",
            warning="backtracking produced no parseable plan; retrying with the old one",
        )
    return Plan(
        plan_id=plan.plan_id,
        narrative=revised["plan"],
        language_hint=revised["language_hint"] or plan.language_hint,
        revision=plan.revision + 1,
        provenance="BACKTRACKED",
    )


def run_candidate(
    candidate_id: int,
    plan: Plan,
    ctx: PlanningContext,
    db: DbHandle,
    backend: Backend,
    config: LlmConfig,
    session: ToolSession,
    repairs: int = 3,
    backtracks: int = 1,
    sql_only: bool = False,
    answer_max_rows: int = 10000,
    trace: Optional[TraceLog] = None,
) -> Candidate:
    """Synthesize -> execute -> review, with repair and plan backtracking.

    Terminates in at most (backtracks+1) * (repairs+1) program generations.
    """
    cand = Candidate(candidate_id=candidate_id, plan=plan)
    cid = str(candidate_id)
    current_plan = plan
    while True:  # one iteration per plan incarnation
        program = synthesize_program(current_plan, ctx, backend, session, config, sql_only)
        cand.program_generations += 1
        if trace:
            trace.emit("synthesize", cid, plan_id=current_plan.plan_id, language=program.language if program else "NONE")
        if program is None:
            program = Program(plan_id=current_plan.plan_id, language="NONE", source="")
        plan_error: Optional[ReviewVerdict] = None
        while True:  # repair loop for this incarnation
            if program.language == "NONE":
                result: ResultTable | ExecError = ExecError("runtime", "no final program emitted")
            else:
                result = execute_program(program, db, session.sandbox, answer_max_rows)
            verdict = review_output(ctx.question, current_plan, program, result, backend, config)
            if trace:
                trace.emit(
                    "review",
                    cid,
                    verdict=verdict.kind,
                    message=verdict.message[:200],
                    attempt=program.attempt,
                )
            cand.program = program
            cand.result = result
            cand.last_verdict = verdict
            if verdict.kind == "OK" and isinstance(result, ResultTable):
                cand.repairs_per_incarnation.append(program.attempt)
                cand.status = "SUCCEEDED"
                cand.order_sensitive = (
                    detect_order_sensitive(program.source) if program.language == "SQL" else False
                )
                cand.tool_counts = session.tool_counts()
                if trace:
                    trace.emit("candidate_done", cid, status="SUCCEEDED")
                return cand
            if verdict.kind == "OK":
                # Fail-open review on an execution error: treat as code error.
                verdict = ReviewVerdict("CODE_ERROR", getattr(result, "message", "execution failed"))
            if verdict.kind == "CODE_ERROR":
                if program.attempt >= repairs:
                    cand.repairs_per_incarnation.append(program.attempt)
                    cand.status = "FAILED"
                    cand.tool_counts = session.tool_counts()
                    if trace:
                        trace.emit("candidate_done", cid, status="FAILED", reason="repair budget exhausted")
                    return cand
                repaired = repair_program(program, verdict, backend, config, current_plan, sql_only)
                cand.repair_count += 1
                cand.program_generations += 1
                if trace:
                    trace.emit("repair", cid, attempt=program.attempt + 1)
                if repaired is None:
                    repaired = Program(
                        plan_id=current_plan.plan_id, language="NONE", source="", attempt=program.attempt + 1
                    )
                program = repaired
                continue
            cand.repairs_per_incarnation.append(program.attempt)
            plan_error = verdict
            break
        # PLAN_ERROR path
        if cand.backtrack_count >= backtracks:
            cand.status = "FAILED"
            cand.tool_counts = session.tool_counts()
            if trace:
                trace.emit("candidate_done", cid, status="FAILED", reason="backtrack budget exhausted")
            return cand
        current_plan = backtrack_plan(current_plan, plan_error, ctx, backend, session, config)
        cand.backtrack_count += 1
        if trace:
            trace.emit("backtrack", cid, revision=current_plan.revision)


# --- voting and transpilation -----------------------------------------------


def majority_vote(candidates: Sequence[Candidate], rel_tol: float = 1e-6) -> VoteOutcome:
    """Partition SUCCEEDED candidates by canonical output and pick the winner.

    Ties break toward classes containing a SQL member (no transpilation
    risk), then toward the lowest member candidate id.
    """
    classes: dict[str, VoteClass] = {}
    tables: dict[str, ResultTable] = {}
    for cand in candidates:
        if cand.status != "SUCCEEDED" or not isinstance(cand.result, ResultTable):
            continue
        digest = canonicalize(cand.result, order_sensitive=False, rel_tol=rel_tol).digest
        entry = classes.setdefault(digest, VoteClass(digest=digest, members=[], size=0, has_sql=False))
        entry.members.append(cand.candidate_id)
        entry.size += 1
        if cand.program is not None and cand.program.language == "SQL":
            entry.has_sql = True
        tables.setdefault(digest, cand.result)
    ordered = sorted(classes.values(), key=lambda c: (-c.size, not c.has_sql, min(c.members)))
    if not ordered:
        return VoteOutcome(classes=[], status="FAILED", failure="no candidate succeeded")
    winner = ordered[0]
    by_id = {c.candidate_id: c for c in candidates}
    sql_members = [m for m in winner.members if by_id[m].program.language == "SQL"]
    chosen = min(sql_members) if sql_members else min(winner.members)
    outcome = VoteOutcome(
        classes=ordered,
        winner_digest=winner.digest,
        winner_candidate=chosen,
        final_result=by_id[chosen].result,
        status="SUCCEEDED",
    )
    if sql_members:
        outcome.final_sql = by_id[chosen].program.source
    return outcome


@dataclass
class TranspileReport:
    sql: Optional[str]
    tier_used: int = 0
    attempts: int = 0
    fallback_used: bool = False
    failure: str = ""


def transpile_to_sql(
    python_source: str,
    plan_narrative: str,
    consensus: ResultTable,
    db: DbHandle,
    schema_text: str,
    tiers: Sequence[tuple[Backend, LlmConfig]],
    attempts_per_tier: int = TRANSPILE_ATTEMPTS_PER_TIER,
    answer_max_rows: int = 10000,
    trace: Optional[TraceLog] = None,
) -> TranspileReport:
    """Two-tier translation with execution-verified equivalence to the consensus."""
    report = TranspileReport(sql=None)
    feedback = ""
    for tier_index, (backend, config) in enumerate(tiers, start=1):
        for _ in range(attempts_per_tier):
            report.attempts += 1
            report.tier_used = tier_index
            if trace:
                trace.emit("transpile_attempt", tier=tier_index, attempt=report.attempts)
            reply = chat(
                backend,
                [
                    Message("system", prompts.TRANSPILE_SYSTEM),
                    Message(
                        "user",
                        prompts.transpile_user(python_source, plan_narrative, schema_text, db.dialect, feedback),
                    ),
                ],
                [],
                config,
            )
            parsed = extract_program(reply.content)
            if parsed is None or parsed[0] != "SQL":
                feedback = "the reply contained no fenced SQL block"
                continue
            sql = parsed[1]
            result = execute_sql(db, sql, ExecLimits(max_rows=answer_max_rows))
            if isinstance(result, ExecError):
                feedback = f"SQL failed to execute: {result.message}"
                continue
            if results_equivalent(result, consensus, order_sensitive=False):
                report.sql = sql
                return report
            feedback = "the SQL executed but its output does not match the consensus result"
    report.failure = "all transpilation attempts failed verification"
    return report


# --- end-to-end -------------------------------------------------------------


def answer_question(
    question: str,
    db_location: str,
    docs: Sequence[str],
    config: RunConfig,
    backend: Optional[Backend] = None,
    tier_backends: Optional[Sequence[tuple[Backend, LlmConfig]]] = None,
    sandbox_factory: Optional[Callable[[], object]] = None,
) -> FinalAnswer:
    """Compose context -> plans -> K candidates -> vote -> (maybe) transpile.

    Always returns a FinalAnswer; failures surface in status and the trace.
    """
    trace = TraceLog()
    backend = backend or make_backend(config.endpoint)
    llm = config.llm_config()
    db = open_database(db_location, config.dialect, read_only=True)
    try:
        snapshot = snapshot_hierarchy(db)
        ctx = build_planning_context(question, db, snapshot, docs, backend, llm, k=config.k, m=config.m)
        trace.emit("context", relevant_schemas=ctx.relevant_schemas, knowledge_chars=len(ctx.knowledge_summary))

        plan_session = ToolSession(db, ctx.snapshot, groups=ctx.groups, candidate_id="planning")
        plans = generate_plans(
            ctx,
            config.k,
            config.m,
            backend,
            plan_session,
            llm,
            diversity=not config.no_diversity,
            sql_only=config.sql_only,
            trace=trace,
        )
        plans = [review_and_refine_plan(p, ctx, backend, plan_session, llm, trace) for p in plans]
        for p in plans:
            trace.emit("plan", plan_id=p.plan_id, provenance=p.provenance, narrative=p.narrative[:300])

        candidates: list[Candidate] = []
        sessions: list[ToolSession] = []
        for index, plan in enumerate(plans):
            sandbox = None
            if not config.sql_only:
                sandbox = sandbox_factory() if sandbox_factory else StubSandboxSession(db_location)
            cand_db = open_database(db_location, config.dialect, read_only=True)
            session = ToolSession(cand_db, ctx.snapshot, groups=ctx.groups, sandbox=sandbox, candidate_id=str(index))
            sessions.append(session)
            cand = run_candidate(
                index,
                plan,
                ctx,
                cand_db,
                backend,
                llm,
                session,
                repairs=config.effective_repairs,
                backtracks=config.effective_backtracks,
                sql_only=config.sql_only,
                answer_max_rows=config.answer_max_rows,
                trace=trace,
            )
            candidates.append(cand)
            for rec in session.records:
                trace.emit(
                    "tool_call",
                    str(index),
                    tool_name=rec.tool_name,
                    sequence_no=rec.sequence_no,
                    digest=rec.result_digest,
                )
            if sandbox is not None and hasattr(sandbox, "close"):
                sandbox.close()
            cand_db.close()

        vote = majority_vote(candidates)
        trace.emit(
            "vote",
            classes=[{"digest": c.digest, "size": c.size, "has_sql": c.has_sql} for c in vote.classes],
            winner=vote.winner_digest,
        )

        if vote.status == "SUCCEEDED" and vote.final_sql is None:
            vote = _resolve_python_winner(vote, candidates, ctx, db, config, backend, tier_backends, trace)

        for rec in plan_session.records:
            trace.emit("tool_call", "planning", tool_name=rec.tool_name, sequence_no=rec.sequence_no)

        stats = _gather_stats(candidates, plan_session, sessions, vote)
        answer = FinalAnswer(
            final_sql=vote.final_sql,
            final_result=vote.final_result,
            vote=vote,
            status=vote.status,
            stats=stats,
            plans=plans,
            candidates=candidates,
            trace=trace.events,
        )
        trace.emit("final", status=answer.status, transpiled=vote.transpiled)
        if config.trace_path:
            trace.write(config.trace_path)
        return answer
    finally:
        db.close()


def _resolve_python_winner(
    vote: VoteOutcome,
    candidates: Sequence[Candidate],
    ctx: PlanningContext,
    db: DbHandle,
    config: RunConfig,
    backend: Backend,
    tier_backends: Optional[Sequence[tuple[Backend, LlmConfig]]],
    trace: TraceLog,
) -> VoteOutcome:
    """Winner class is Python-only: transpile, else fall back to a SQL class."""
    by_id = {c.candidate_id: c for c in candidates}
    winner_cand = by_id[vote.winner_candidate]
    tiers = list(tier_backends) if tier_backends else [
        (backend, config.llm_config()),
        (make_backend(config.tier2_endpoint) if config.tier2_endpoint else backend, config.tier2_llm_config()),
    ]
    schema_text = prompts.render_snapshot(ctx.snapshot, ctx.relevant_schemas)
    report = transpile_to_sql(
        winner_cand.program.source,
        winner_cand.plan.narrative,
        vote.final_result,
        db,
        schema_text,
        tiers,
        answer_max_rows=config.answer_max_rows,
        trace=trace,
    )
    if report.sql is not None:
        vote.final_sql = report.sql
        vote.transpiled = True
        trace.emit("transpiled", tier=report.tier_used, attempts=report.attempts)
        return vote
    # Documented fallback: largest class containing any SQL member.
    sql_classes = [c for c in vote.classes if c.has_sql]
    if sql_classes:
        fallback = sql_classes[0]
        sql_members = [m for m in fallback.members if by_id[m].program.language == "SQL"]
        chosen = min(sql_members)
        trace.emit("transpile_fallback", fallback_digest=fallback.digest)
        vote.winner_digest = fallback.digest
        vote.winner_candidate = chosen
        vote.final_sql = by_id[chosen].program.source
        vote.final_result = by_id[chosen].result
        vote.transpiled = False
        vote.failure = "transpilation failed; fell back to the largest SQL-bearing class"
        return vote
    vote.status = "FAILED"
    vote.failure = f"TranspilationFailed: {report.failure}"
    trace.emit("transpile_failed", reason=report.failure)
    return vote


def _gather_stats(candidates, plan_session, sessions, vote) -> dict:
    tool_totals: dict[str, int] = {}
    for session in [plan_session, *sessions]:
        for name, count in session.tool_counts().items():
            tool_totals[name] = tool_totals.get(name, 0) + count
    languages = {}
    for cand in candidates:
        if cand.program is not None:
            languages[str(cand.candidate_id)] = cand.program.language
    return {
        "tool_calls": tool_totals,
        "repairs": sum(c.repair_count for c in candidates),
        "backtracks": sum(c.backtrack_count for c in candidates),
        "program_generations": sum(c.program_generations for c in candidates),
        "languages": languages,
        "succeeded": sum(1 for c in candidates if c.status == "SUCCEEDED"),
        "failed": sum(1 for c in candidates if c.status == "FAILED"),
        "transpiled": vote.transpiled,
    }
