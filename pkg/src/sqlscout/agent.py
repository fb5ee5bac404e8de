"""LLM backend abstraction and the generic tool-interaction loop.

Two backends share one interface: an HTTP chat-completions client and a
deterministic scripted replay backend used throughout the test suite.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

from .errors import LlmError, ScriptExhausted, ScriptMismatch

logger = logging.getLogger(__name__)


@dataclass
class ToolCallRequest:
    id: str
    name: str
    arguments: dict


@dataclass
class Message:
    role: str  # system | user | assistant | tool
    content: str = ""
    tool_calls: Optional[list[ToolCallRequest]] = None
    tool_call_id: Optional[str] = None

    def __post_init__(self):
        if self.role == "tool" and not self.tool_call_id:
            raise ValueError("tool messages require tool_call_id")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("tool_calls only allowed on assistant messages")


@dataclass
class LlmConfig:
    model_id: str = "gpt-oss-120b"
    temperature: float = 1.0
    reasoning_effort: str = "high"
    endpoint: str = ""
    max_loop_steps: int = 30
    request_timeout_s: float = 120.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_loop_steps < 1:
            raise ValueError("max_loop_steps must be >= 1")


@dataclass
class Usage:
    chat_calls: int = 0
    prompt_chars: int = 0
    completion_chars: int = 0


@dataclass
class Transcript:
    """Append-only record of one loop: messages plus tool-call bookkeeping."""

    messages: list[Message] = field(default_factory=list)
    tool_records: list = field(default_factory=list)
    usage: Usage = field(default_factory=Usage)

    def append(self, msg: Message) -> None:
        self.messages.append(msg)

    def check_alternation(self) -> bool:
        """Every assistant tool_call is answered before the next assistant turn."""
        pending: set[str] = set()
        for msg in self.messages:
            if msg.role == "assistant":
                if pending:
                    return False
                pending = {tc.id for tc in (msg.tool_calls or [])}
            elif msg.role == "tool":
                pending.discard(msg.tool_call_id)
        return not pending


class Backend(Protocol):
    def complete(self, messages: Sequence[Message], tool_specs: Sequence[dict], config: LlmConfig) -> Message:
        ...


def _render_conversation(messages: Sequence[Message]) -> str:
    parts = []
    for m in messages:
        parts.append(f"[{m.role}] {m.content}")
        for tc in m.tool_calls or []:
            parts.append(f"[call] {tc.name}({json.dumps(tc.arguments, sort_keys=True)})")
    return "\n".join(parts)


@dataclass
class ScriptStep:
    match: list[str]
    respond: Message


class ScriptedBackend:
    """Replays canned assistant turns in order, validating each request.

    A step's ``match`` substrings must all appear somewhere in the rendered
    conversation; otherwise the replay aborts with the failing step index.
    Temperature and reasoning effort are ignored.
    """

    def __init__(self, steps: Sequence[ScriptStep]):
        self.steps = list(steps)
        self.cursor = 0

    def complete(self, messages, tool_specs, config) -> Message:
        if self.cursor >= len(self.steps):
            raise ScriptExhausted(f"script has {len(self.steps)} steps, got call {self.cursor + 1}")
        step = self.steps[self.cursor]
        rendered = _render_conversation(messages)
        for needle in step.match:
            if needle not in rendered:
                raise ScriptMismatch(self.cursor, needle)
        self.cursor += 1
        return step.respond

    @property
    def remaining(self) -> int:
        return len(self.steps) - self.cursor


def _message_from_wire(d: dict) -> Message:
    calls = None
    if d.get("tool_calls"):
        calls = []
        for tc in d["tool_calls"]:
            args = tc["function"]["arguments"]
            if isinstance(args, str):
                args = json.loads(args) if args.strip() else {}
            calls.append(ToolCallRequest(id=tc.get("id", ""), name=tc["function"]["name"], arguments=args))
    return Message(role=d.get("role", "assistant"), content=d.get("content") or "", tool_calls=calls)


def _message_to_wire(m: Message) -> dict:
    d: dict = {"role": m.role, "content": m.content}
    if m.tool_calls:
        d["tool_calls"] = [
            {
                "id": tc.id,
                "type": "function",
                "function": {"name": tc.name, "arguments": json.dumps(tc.arguments)},
            }
            for tc in m.tool_calls
        ]
    if m.tool_call_id:
        d["tool_call_id"] = m.tool_call_id
    return d


class HttpBackend:
    """Chat-completions client (OpenAI wire shape), with transport retries."""

    MAX_ATTEMPTS = 3

    def __init__(self, api_key: str = ""):
        import httpx

        self._client = httpx.Client(timeout=None)
        self._headers = {"Content-Type": "application/json"}
        if api_key:
            self._headers["Authorization"] = f"Bearer {api_key}"

    def complete(self, messages, tool_specs, config) -> Message:
        import httpx

        payload = {
            "model": config.model_id,
            "messages": [_message_to_wire(m) for m in messages],
            "temperature": config.temperature,
            "reasoning_effort": config.reasoning_effort,
            "stream": False,
        }
        if tool_specs:
            payload["tools"] = list(tool_specs)
        url = config.endpoint.rstrip("/") + "/v1/chat/completions"
        last_exc: Exception | None = None
        for attempt in range(self.MAX_ATTEMPTS):
            try:
                resp = self._client.post(
                    url, json=payload, headers=self._headers, timeout=config.request_timeout_s
                )
                resp.raise_for_status()
                body = resp.json()
                return _message_from_wire(body["choices"][0]["message"])
            except (httpx.TransportError, httpx.HTTPStatusError) as exc:
                last_exc = exc
                if attempt < self.MAX_ATTEMPTS - 1:
                    time.sleep(0.5 * 2**attempt)
            except (KeyError, ValueError) as exc:
                raise LlmError("protocol", f"malformed response: {exc}") from exc
        raise LlmError("transport", f"request failed after {self.MAX_ATTEMPTS} attempts: {last_exc}")


def load_script(fixture_path: str | Path) -> ScriptedBackend:
    """Load a scripted backend from a JSON fixture.

    The fixture is a list of ``{"match": [substr, ...], "respond": message}``
    pairs; ``respond`` uses the chat wire shape.
    """
    data = json.loads(Path(fixture_path).read_text())
    steps = [ScriptStep(match=list(d.get("match", [])), respond=_message_from_wire(d["respond"])) for d in data]
    return ScriptedBackend(steps)


def chat(
    backend: Backend,
    messages: Sequence[Message],
    tool_specs: Sequence[dict],
    config: LlmConfig,
    transcript: Optional[Transcript] = None,
) -> Message:
    if not messages or messages[0].role != "system":
        raise ValueError("messages must be non-empty and start with a system message")
    reply = backend.complete(messages, tool_specs, config)
    if transcript is not None:
        transcript.usage.chat_calls += 1
        transcript.usage.prompt_chars += sum(len(m.content) for m in messages)
        transcript.usage.completion_chars += len(reply.content)
    return reply


@dataclass
class LoopResult:
    final_text: str
    transcript: Transcript
    exhausted: bool = False


def run_tool_loop(
    backend: Backend,
    system: str,
    user: str,
    tool_specs: Sequence[dict],
    dispatcher: Callable[[ToolCallRequest], "object"],
    config: LlmConfig,
    transcript: Optional[Transcript] = None,
) -> LoopResult:
    """Alternate chat and tool dispatch until a turn carries no tool calls.

    Tool failures come back as tool messages; they never abort the loop.
    On step exhaustion the last assistant text is returned with
    ``exhausted=True``.
    """
    transcript = transcript if transcript is not None else Transcript()
    transcript.append(Message(role="system", content=system))
    transcript.append(Message(role="user", content=user))
    last_text = ""
    for _ in range(config.max_loop_steps):
        reply = chat(backend, transcript.messages, tool_specs, config, transcript)
        transcript.append(reply)
        last_text = reply.content
        if not reply.tool_calls:
            return LoopResult(final_text=reply.content, transcript=transcript)
        for call in reply.tool_calls:
            result = dispatcher(call)
            rendered = getattr(result, "rendered", str(result))
            transcript.append(Message(role="tool", content=rendered, tool_call_id=call.id))
    return LoopResult(final_text=last_text, transcript=transcript, exhausted=True)
