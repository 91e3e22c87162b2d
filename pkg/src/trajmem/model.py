"""Core trajectory data model shared by every other module.

A trajectory is the full ordered record of one agent episode: per step a
thought, the emitted action code, the tool invocations parsed from it, and
the resulting observation. Token counters are maintained on append so that
episode cost can be reported without a model-specific tokenizer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from .errors import StructuralError


class Phase(Enum):
    """Workflow stage a classified step belongs to."""

    EXPLORATION = "exploration"
    EXECUTION = "execution"
    VALIDATION = "validation"

    @classmethod
    def parse(cls, value: str) -> "Phase":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown phase: {value!r}") from None


def count_tokens(text: str) -> int:
    """Deterministic token-count proxy: ceil(UTF-8 byte length / 4)."""
    if not text:
        return 0
    return math.ceil(len(text.encode("utf-8")) / 4)


@dataclass(frozen=True)
class ToolParam:
    name: str
    description: str = ""


@dataclass(frozen=True)
class ToolSpec:
    """Declared interface of a callable tool."""

    name: str
    description: str = ""
    params: tuple[ToolParam, ...] = ()
    phase_affinity: Phase | None = None

    def __post_init__(self) -> None:
        names = [p.name for p in self.params]
        if len(names) != len(set(names)):
            raise StructuralError(f"duplicate parameter names in tool spec {self.name!r}")


@dataclass
class ToolInvocation:
    """One concrete tool call with its arguments and observed output."""

    tool_name: str
    args: dict[str, str] = field(default_factory=dict)
    output: str = ""
    succeeded: bool = True

    def to_dict(self) -> dict[str, Any]:
        return {
            "tool_name": self.tool_name,
            "args": dict(self.args),
            "output": self.output,
            "succeeded": self.succeeded,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ToolInvocation":
        return cls(
            tool_name=data["tool_name"],
            args=dict(data.get("args", {})),
            output=data.get("output", ""),
            succeeded=bool(data.get("succeeded", True)),
        )


@dataclass
class Step:
    """One observe/reason/act cycle. A step with no invocations is reasoning-only."""

    index: int
    thought: str = ""
    action_code: str = ""
    invocations: list[ToolInvocation] = field(default_factory=list)
    observation: str = ""
    phase: Phase | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "thought": self.thought,
            "action_code": self.action_code,
            "invocations": [inv.to_dict() for inv in self.invocations],
            "observation": self.observation,
            "phase": self.phase.value if self.phase is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Step":
        phase = data.get("phase")
        return cls(
            index=int(data["index"]),
            thought=data.get("thought", ""),
            action_code=data.get("action_code", ""),
            invocations=[ToolInvocation.from_dict(d) for d in data.get("invocations", [])],
            observation=data.get("observation", ""),
            phase=Phase.parse(phase) if phase else None,
        )


@dataclass
class Question:
    """A natural-language question tied to one database."""

    id: str
    text: str
    database_id: str
    synthetic: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "text": self.text,
            "database_id": self.database_id,
            "synthetic": self.synthetic,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Question":
        return cls(
            id=data["id"],
            text=data["text"],
            database_id=data["database_id"],
            synthetic=bool(data.get("synthetic", False)),
        )


@dataclass
class Trajectory:
    """Ordered step record of one episode, with token accounting."""

    question_id: str
    database_id: str
    steps: list[Step] = field(default_factory=list)
    final_answer: str | None = None
    input_tokens: int = 0
    output_tokens: int = 0
    wall_time_ms: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "question_id": self.question_id,
            "database_id": self.database_id,
            "steps": [step.to_dict() for step in self.steps],
            "final_answer": self.final_answer,
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "wall_time_ms": self.wall_time_ms,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Trajectory":
        steps = [Step.from_dict(d) for d in data.get("steps", [])]
        for position, step in enumerate(steps):
            if step.index != position:
                raise StructuralError(
                    f"step index {step.index} does not match position {position}"
                )
        return cls(
            question_id=data["question_id"],
            database_id=data["database_id"],
            steps=steps,
            final_answer=data.get("final_answer"),
            input_tokens=int(data.get("input_tokens", 0)),
            output_tokens=int(data.get("output_tokens", 0)),
            wall_time_ms=int(data.get("wall_time_ms", 0)),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        return cls.from_dict(json.loads(text))


def append_step(trajectory: Trajectory, step: Step) -> Trajectory:
    """Append a step in index order and update the token counters.

    Thought and action code count toward output tokens, the observation
    toward input tokens. Raises StructuralError on an index mismatch.
    """
    if step.index != len(trajectory.steps):
        raise StructuralError(
            f"step index {step.index} does not extend trajectory of length "
            f"{len(trajectory.steps)}"
        )
    trajectory.steps.append(step)
    trajectory.output_tokens += count_tokens(step.thought) + count_tokens(step.action_code)
    trajectory.input_tokens += count_tokens(step.observation)
    return trajectory
