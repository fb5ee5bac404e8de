"""Run configuration: defaults, file parsing, and backend construction.

Config files are plain ``key = value`` text; CLI flags override file
values. ``endpoint`` accepts either an HTTP base URL or ``script:<path>``
pointing at a scripted-replay fixture, which keeps every surface testable
without a live model.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

from .agent import Backend, HttpBackend, LlmConfig, load_script
from .dblayer import Dialect


@dataclass
class RunConfig:
    db_location: str = ""
    question: str = ""
    manifest: str = ""
    dialect: Dialect = Dialect.SQLITE
    k: int = 8
    m: int = 4
    repairs: int = 3
    backtracks: int = 1
    sql_only: bool = False
    no_diversity: bool = False
    no_repair: bool = False
    endpoint: str = ""
    model_id: str = "gpt-oss-120b"
    tier2_model_id: str = "gpt-oss-120b"
    tier2_endpoint: str = ""
    temperature: float = 1.0
    reasoning_effort: str = "high"
    max_loop_steps: int = 30
    answer_max_rows: int = 10000
    sandbox_wall_s: float = 60.0
    parallelism: int = 1
    trace_path: str = ""
    report_path: str = ""
    seed_label: str = ""

    def __post_init__(self):
        if self.k < 1 or self.m < 1:
            raise ValueError("K and M must be >= 1")
        if self.repairs < 0 or self.backtracks < 0:
            raise ValueError("repair and backtrack budgets must be >= 0")
        if isinstance(self.dialect, str):
            self.dialect = Dialect(self.dialect)

    @property
    def effective_repairs(self) -> int:
        return 0 if self.no_repair else self.repairs

    @property
    def effective_backtracks(self) -> int:
        return 0 if self.no_repair else self.backtracks

    def llm_config(self) -> LlmConfig:
        return LlmConfig(
            model_id=self.model_id,
            temperature=self.temperature,
            reasoning_effort=self.reasoning_effort,
            endpoint=self.endpoint,
            max_loop_steps=self.max_loop_steps,
        )

    def tier2_llm_config(self) -> LlmConfig:
        return LlmConfig(
            model_id=self.tier2_model_id,
            temperature=self.temperature,
            reasoning_effort=self.reasoning_effort,
            endpoint=self.tier2_endpoint or self.endpoint,
            max_loop_steps=self.max_loop_steps,
        )


_BOOL_KEYS = {"sql_only", "no_diversity", "no_repair"}
_INT_KEYS = {"k", "m", "repairs", "backtracks", "max_loop_steps", "answer_max_rows", "parallelism"}
_FLOAT_KEYS = {"temperature", "sandbox_wall_s"}


def parse_config_file(path: str | Path) -> dict:
    """Parse ``key = value`` lines; '#' starts a comment."""
    values: dict = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key in _BOOL_KEYS:
            values[key] = val.lower() in ("1", "true", "yes", "on")
        elif key in _INT_KEYS:
            values[key] = int(val)
        elif key in _FLOAT_KEYS:
            values[key] = float(val)
        else:
            values[key] = val
    return values


def serialize_config(config: RunConfig) -> str:
    lines = []
    for key, value in asdict(config).items():
        if isinstance(value, Dialect):
            value = value.value
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> RunConfig:
    values = parse_config_file(path) if path else {}
    for key, val in (overrides or {}).items():
        if val is not None:
            values[key] = val
    return RunConfig(**values)


def make_backend(endpoint: str) -> Backend:
    """An HTTP backend, or a scripted replay backend for ``script:`` endpoints."""
    if endpoint.startswith("script:"):
        return load_script(endpoint[len("script:"):])
    if not endpoint:
        raise ValueError("no LLM endpoint configured (set endpoint=http://... or script:<fixture>)")
    return HttpBackend(api_key=os.environ.get("SQLSCOUT_API_KEY", ""))
