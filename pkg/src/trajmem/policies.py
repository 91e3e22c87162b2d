"""Episode policies: the pluggable decision source for the agent loop.

A policy maps the transcript so far plus the visible tool specs to either a
(thought, action code) pair or a final answer. Shipped implementations:

* ScriptedPolicy: per-question playbooks, fully deterministic; used by the
  bundled fixture suite. It adapts to a memory prefix (skipping exploration)
  and to composite tools visible in the registry.
* ReplayPolicy / RecordingPolicy: a script file mapping transcript
  fingerprints to actions, for exact replays.
* ExplorerPolicy: the restricted offline agent that turns synthetic
  questions into exploration-rich trajectories.
* HttpPolicy: a chat-endpoint-backed policy for real models.
"""

from __future__ import annotations

import abc
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import StateError
from .llm import ChatEndpoint
from .model import Question, Step, ToolSpec

BOOTSTRAP_COMPOSITE = "get_ext_then_get_ddl"


@dataclass
class PolicyDecision:
    thought: str = ""
    action_code: str = ""
    final_answer: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "thought": self.thought,
            "action_code": self.action_code,
            "final_answer": self.final_answer,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PolicyDecision":
        return cls(
            thought=data.get("thought", ""),
            action_code=data.get("action_code", ""),
            final_answer=data.get("final_answer"),
        )


@dataclass
class Transcript:
    """What a policy sees: the question, any memory prefix, and prior steps."""

    question: Question
    context_prefix: str = ""
    steps: Sequence[Step] = field(default_factory=list)


class Policy(abc.ABC):
    """Port for the per-step decision source."""

    @abc.abstractmethod
    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision: ...

    def refine_sql(self, query: str, feedback: str) -> str | None:
        """Optional one-shot SQL correction hook; None declines to refine."""
        return None


def transcript_fingerprint(transcript: Transcript) -> str:
    """Stable digest of a transcript for script-file replay."""
    payload = {
        "question": transcript.question.text,
        "database": transcript.question.database_id,
        "has_prefix": bool(transcript.context_prefix),
        "steps": [
            [step.thought, step.action_code, step.observation]
            for step in transcript.steps
        ],
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ReplayPolicy(Policy):
    """Plays back decisions recorded against transcript fingerprints."""

    def __init__(
        self,
        mapping: Mapping[str, PolicyDecision],
        refinements: Mapping[str, str] | None = None,
    ) -> None:
        self.mapping = dict(mapping)
        self.refinements = dict(refinements or {})

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayPolicy":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            {
                fingerprint: PolicyDecision.from_dict(decision)
                for fingerprint, decision in data.get("fingerprints", {}).items()
            },
            refinements=data.get("refinements", {}),
        )

    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision:
        fingerprint = transcript_fingerprint(transcript)
        decision = self.mapping.get(fingerprint)
        if decision is None:
            raise StateError(f"no recorded action for transcript {fingerprint[:12]}...")
        return decision

    def refine_sql(self, query: str, feedback: str) -> str | None:
        return self.refinements.get(query)


class RecordingPolicy(Policy):
    """Wraps another policy and records its decisions for later replay."""

    def __init__(self, inner: Policy) -> None:
        self.inner = inner
        self.mapping: dict[str, PolicyDecision] = {}
        self.refinements: dict[str, str] = {}

    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision:
        decision = self.inner.next_action(transcript, tools)
        self.mapping[transcript_fingerprint(transcript)] = decision
        return decision

    def refine_sql(self, query: str, feedback: str) -> str | None:
        corrected = self.inner.refine_sql(query, feedback)
        if corrected is not None:
            self.refinements[query] = corrected
        return corrected

    def save(self, path: str | Path) -> None:
        payload = {
            "fingerprints": {
                fingerprint: decision.to_dict()
                for fingerprint, decision in self.mapping.items()
            },
            "refinements": dict(self.refinements),
        }
        Path(path).write_text(
            json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )


@dataclass
class QuestionScript:
    """Deterministic playbook for one question.

    ``memory_mode`` controls behaviour when a memory prefix is present:
    "condensed" keeps a quick schema fetch and drops probes and planning;
    "skip_exploration" drops all exploration steps but keeps the plan step.
    """

    probes: list[str] = field(default_factory=list)
    main_sql: str = ""
    answer: str = "done"
    check: bool = False
    refine: dict[str, str] = field(default_factory=dict)
    memory_mode: str = "condensed"

    def to_dict(self) -> dict[str, Any]:
        return {
            "probes": list(self.probes),
            "main_sql": self.main_sql,
            "answer": self.answer,
            "check": self.check,
            "refine": dict(self.refine),
            "memory_mode": self.memory_mode,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "QuestionScript":
        return cls(
            probes=list(data.get("probes", [])),
            main_sql=data.get("main_sql", ""),
            answer=data.get("answer", "done"),
            check=bool(data.get("check", False)),
            refine=dict(data.get("refine", {})),
            memory_mode=data.get("memory_mode", "condensed"),
        )


def _sql_call(query: str) -> str:
    return f"sql_execute(query={query!r})"


class ScriptedPolicy(Policy):
    """Replays per-question playbooks, branching on memory and composites."""

    def __init__(self, scripts: Mapping[str, QuestionScript]) -> None:
        self.scripts = dict(scripts)

    def _decisions(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> list[PolicyDecision]:
        question = transcript.question
        script = self.scripts.get(question.id)
        if script is None:
            raise StateError(f"no script for question {question.id!r}")
        names = {tool.name for tool in tools}
        db = question.database_id
        has_memory = bool(transcript.context_prefix)

        decisions: list[PolicyDecision] = []

        def schema_fetch() -> list[PolicyDecision]:
            if BOOTSTRAP_COMPOSITE in names:
                return [
                    PolicyDecision(
                        thought="Load the knowledge file and schema in one step.",
                        action_code=f"{BOOTSTRAP_COMPOSITE}(database={db!r})",
                    )
                ]
            return [
                PolicyDecision(
                    thought="Read the external knowledge file.",
                    action_code=f"get_ext(database={db!r})",
                ),
                PolicyDecision(
                    thought="Fetch the schema definition.",
                    action_code=f"get_ddl(database={db!r})",
                ),
            ]

        plan_needed = True
        if has_memory and script.memory_mode == "skip_exploration":
            pass
        elif has_memory:
            decisions.extend(schema_fetch())
            plan_needed = False
        else:
            decisions.extend(schema_fetch())
            for probe in script.probes:
                decisions.append(
                    PolicyDecision(
                        thought="Probe a few rows to understand the data.",
                        action_code=_sql_call(probe),
                    )
                )
        if plan_needed:
            decisions.append(
                PolicyDecision(
                    thought=f"Plan: translate the question into one query on {db}.",
                    action_code="",
                )
            )
        decisions.append(
            PolicyDecision(
                thought="Run the main query.", action_code=_sql_call(script.main_sql)
            )
        )
        if script.check:
            decisions.append(
                PolicyDecision(
                    thought="Check that the result looks plausible before validating.",
                    action_code="",
                )
            )
        decisions.append(
            PolicyDecision(
                thought="Validate the result by re-running the final query.",
                action_code="validate_result()",
            )
        )
        decisions.append(
            PolicyDecision(
                thought="Save the answer rows.", action_code="save_result()"
            )
        )
        decisions.append(
            PolicyDecision(thought="Report the answer.", final_answer=script.answer)
        )
        return decisions

    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision:
        decisions = self._decisions(transcript, tools)
        position = len(transcript.steps)
        if position < len(decisions):
            return decisions[position]
        return PolicyDecision(thought="Script exhausted.", final_answer="(no answer)")

    def refine_sql(self, query: str, feedback: str) -> str | None:
        for script in self.scripts.values():
            corrected = script.refine.get(query)
            if corrected is not None:
                return corrected
        return None


_CREATE_TABLE = re.compile(r"CREATE TABLE (\w+)", re.IGNORECASE)
_FIRST_COLUMN = re.compile(r"CREATE TABLE \w+\s*\(\s*(\w+)", re.IGNORECASE)


class ExplorerPolicy(Policy):
    """Offline exploration flow for synthetic questions.

    Reads knowledge and schema, probes the first tables it saw in the DDL
    observation, attempts one analytical query, then stops. Answers are
    never graded; the value is the exploration trace.
    """

    def __init__(self, max_probe_tables: int = 2) -> None:
        self.max_probe_tables = max_probe_tables

    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision:
        db = transcript.question.database_id
        position = len(transcript.steps)
        if position == 0:
            return PolicyDecision(
                thought="Read the external knowledge file.",
                action_code=f"get_ext(database={db!r})",
            )
        if position == 1:
            return PolicyDecision(
                thought="Fetch the schema definition.",
                action_code=f"get_ddl(database={db!r})",
            )
        ddl = transcript.steps[1].observation
        tables = _CREATE_TABLE.findall(ddl)[: self.max_probe_tables]
        probe_index = position - 2
        if probe_index < len(tables):
            table = tables[probe_index]
            return PolicyDecision(
                thought=f"Probe a few rows of {table}.",
                action_code=_sql_call(f"SELECT * FROM {table} LIMIT 5"),
            )
        if probe_index == len(tables) and tables:
            first_table = tables[0]
            match = _FIRST_COLUMN.search(ddl)
            column = match.group(1) if match else "rowid"
            attempt = (
                f"SELECT {column}, COUNT(*) AS n FROM {first_table} "
                f"GROUP BY {column} ORDER BY n DESC"
            )
            return PolicyDecision(
                thought="Attempt an aggregate query for the question.",
                action_code=_sql_call(attempt),
            )
        return PolicyDecision(
            thought="Exploration recorded.",
            final_answer=f"exploration complete for {db}",
        )


_FINAL_ANSWER = re.compile(r"^\s*final answer\s*:\s*(.*)$", re.IGNORECASE | re.DOTALL)
_THOUGHT = re.compile(r"^\s*thought\s*:\s*(.*?)(?:\n\s*action\s*:|\Z)", re.IGNORECASE | re.DOTALL)


class HttpPolicy(Policy):
    """Chat-endpoint-backed policy for real model runs."""

    SYSTEM = (
        "You are a data analyst agent working over a relational database. "
        "Each turn, reply either with\n"
        "Thought: <one line>\nAction:\n<one tool call per line, e.g. "
        "tool_name(arg=\"value\")>\n"
        "or, when done,\nFinal Answer: <text>."
    )

    def __init__(self, endpoint: ChatEndpoint, observation_limit: int = 1500) -> None:
        self.endpoint = endpoint
        self.observation_limit = observation_limit

    def _render(self, transcript: Transcript, tools: Sequence[ToolSpec]) -> str:
        lines = [f"Question ({transcript.question.database_id}): {transcript.question.text}"]
        tool_lines = []
        for tool in tools:
            params = ", ".join(p.name for p in tool.params)
            tool_lines.append(f"- {tool.name}({params}): {tool.description}")
        lines.append("Available tools:\n" + "\n".join(tool_lines))
        if transcript.context_prefix:
            lines.append("Relevant prior exploration:\n" + transcript.context_prefix)
        for step in transcript.steps:
            lines.append(f"Thought: {step.thought}")
            if step.action_code:
                lines.append(f"Action:\n{step.action_code}")
            observation = step.observation
            if len(observation) > self.observation_limit:
                observation = observation[: self.observation_limit] + "\n[truncated]"
            lines.append(f"Observation:\n{observation}")
        lines.append("Next step?")
        return "\n\n".join(lines)

    def next_action(
        self, transcript: Transcript, tools: Sequence[ToolSpec]
    ) -> PolicyDecision:
        reply = self.endpoint.complete(self._render(transcript, tools), system=self.SYSTEM)
        final = _FINAL_ANSWER.match(reply)
        if final:
            return PolicyDecision(thought="", final_answer=final.group(1).strip())
        thought_match = _THOUGHT.search(reply)
        action_match = re.search(r"action\s*:\s*\n?(.*)$", reply, re.IGNORECASE | re.DOTALL)
        thought = thought_match.group(1).strip() if thought_match else reply.strip()
        action = action_match.group(1).strip() if action_match else ""
        return PolicyDecision(thought=thought, action_code=action)

    def refine_sql(self, query: str, feedback: str) -> str | None:
        prompt = (
            "The SQL query below failed. Reply with a corrected SQL query only, "
            f"no prose.\n\nQuery:\n{query}\n\nFeedback:\n{feedback}"
        )
        try:
            corrected = self.endpoint.complete(prompt).strip()
        except Exception:  # noqa: BLE001 - refinement is best effort
            return None
        corrected = corrected.strip("`").strip()
        return corrected or None
