"""On-disk semantic memory: structured markdown trajectories per database.

Each stored entry renders a classified trajectory into phase-segmented
markdown with generated section headers, and is persisted atomically under
``store_root/<database_id>/<question_id>/`` as five files: ``meta.json``
plus one markdown document per phase and the full document.
"""

from __future__ import annotations

import abc
import json
import logging
import re
import shutil
import uuid
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

from .classifier import Segment, segment_trajectory
from .errors import ConfigurationError, StateError, StorageError
from .llm import ChatEndpoint
from .model import Phase, Question, Step, Trajectory

logger = logging.getLogger(__name__)

DEFAULT_OBSERVATION_LIMIT = 2000
_HEADER_MAX_CHARS = 120
_ID_PATTERN = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.-]*$")

_PHASE_FILES = {
    Phase.EXPLORATION: "exploration.md",
    Phase.EXECUTION: "execution.md",
    Phase.VALIDATION: "validation.md",
}
_FULL_FILE = "full.md"


def truncate_observation(text: str, limit: int = DEFAULT_OBSERVATION_LIMIT) -> str:
    """Cap an observation at ``limit`` characters, noting how much was cut."""
    if limit <= 0:
        raise ValueError("truncation limit must be positive")
    if len(text) <= limit:
        return text
    omitted = len(text) - limit
    return text[:limit] + f"\n[truncated {omitted} characters]"


class Summarizer(abc.ABC):
    """Port producing a short single-line header for a segment body."""

    @abc.abstractmethod
    def summarize(self, body: str) -> str:
        """Return header text; empty output triggers the deterministic fallback."""


class HeuristicSummarizer(Summarizer):
    """Deterministic header extraction: lead thought text, capped length."""

    def summarize(self, body: str) -> str:
        for line in body.splitlines():
            text = line.strip()
            if not text or text.startswith("```") or text.startswith("[truncated"):
                continue
            text = re.sub(r"\*\*Step \d+\.\*\*\s*", "", text).strip()
            if text:
                return _clean_header(text)
        return ""


class HttpSummarizer(Summarizer):
    """Header generation through a chat endpoint."""

    def __init__(self, endpoint: ChatEndpoint) -> None:
        self.endpoint = endpoint

    def summarize(self, body: str) -> str:
        prompt = (
            "Write one short title (at most 10 words, one line) for this section "
            "of an agent work log:\n\n" + body
        )
        return _clean_header(self.endpoint.complete(prompt))


def _clean_header(text: str) -> str:
    line = " ".join(text.strip().splitlines()[0].split()) if text.strip() else ""
    if len(line) > _HEADER_MAX_CHARS:
        line = line[: _HEADER_MAX_CHARS - 3].rstrip() + "..."
    return line


@dataclass(frozen=True)
class StructuredSegment:
    phase: Phase
    header: str
    body: str


@dataclass
class StructuredTrajectory:
    """Phase-segmented markdown rendering of a trajectory."""

    question: Question
    segments: list[StructuredSegment]
    full_document: str

    def phase_document(self, phase: Phase) -> str:
        return "".join(
            segment_text(seg) for seg in self.segments if seg.phase == phase
        )


def segment_text(segment: StructuredSegment) -> str:
    return f"## [{segment.phase.value}] {segment.header}\n\n{segment.body}\n\n"


def _render_step(step: Step, limit: int) -> str:
    parts = [f"**Step {step.index}.** {step.thought}".rstrip()]
    if step.action_code.strip():
        parts.append(f"```\n{step.action_code.strip()}\n```")
    if step.observation:
        parts.append(truncate_observation(step.observation, limit))
    return "\n\n".join(parts)


def fallback_header(phase: Phase, segment: Segment) -> str:
    return f"Phase {phase.value}, steps {segment.start}-{segment.end}"


def structure_trajectory(
    trajectory: Trajectory,
    question: Question,
    summarizer: Summarizer | None = None,
    observation_limit: int = DEFAULT_OBSERVATION_LIMIT,
) -> StructuredTrajectory:
    """Render a classified trajectory into headed markdown segments.

    Every segment body lists its steps as thought, fenced action code, and
    truncated observation. Header generation failures (exceptions or empty
    output) fall back to a deterministic "Phase <name>, steps i-j" header.
    """
    summarizer = summarizer or HeuristicSummarizer()
    segments: list[StructuredSegment] = []
    for raw in segment_trajectory(trajectory):
        steps = trajectory.steps[raw.start : raw.end + 1]
        body = "\n\n".join(_render_step(step, observation_limit) for step in steps)
        try:
            header = _clean_header(summarizer.summarize(body))
        except Exception:  # noqa: BLE001 - any summarizer failure falls back
            header = ""
        if not header:
            header = fallback_header(raw.phase, raw)
        segments.append(StructuredSegment(phase=raw.phase, header=header, body=body))
    full_document = "".join(segment_text(seg) for seg in segments)
    return StructuredTrajectory(
        question=question, segments=segments, full_document=full_document
    )


@dataclass
class MemoryEntry:
    """One retrievable unit: a question plus its structured trajectory."""

    question: Question
    database_id: str
    structured: StructuredTrajectory
    embedding: list[float]
    created_at: str = ""
    step_count: int = 0
    path: Path | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.database_id != self.question.database_id:
            raise StateError(
                f"entry database {self.database_id!r} does not match question "
                f"database {self.question.database_id!r}"
            )
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat()


class MemoryStore:
    """Per-database on-disk layout of memory entries with atomic writes."""

    def __init__(self, root: str | Path, dimension: int | None = None) -> None:
        self.root = Path(root)
        configured = self._read_store_config()
        if dimension is None:
            self.dimension = configured if configured is not None else 256
        elif configured is not None and configured != dimension:
            raise ConfigurationError(
                f"store at {self.root} uses embedding dimension {configured}, "
                f"not {dimension}"
            )
        else:
            self.dimension = dimension

    # -- layout helpers -----------------------------------------------------

    def entry_dir(self, database_id: str, question_id: str) -> Path:
        return self.root / database_id / question_id

    def database_ids(self) -> list[str]:
        if not self.root.is_dir():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if p.is_dir() and not p.name.startswith(".")
        )

    def _read_store_config(self) -> int | None:
        config_path = self.root / "store.json"
        if not config_path.is_file():
            return None
        try:
            return int(json.loads(config_path.read_text(encoding="utf-8"))["embedding_dimension"])
        except (OSError, ValueError, KeyError, json.JSONDecodeError):
            logger.warning("ignoring unreadable store config at %s", config_path)
            return None

    def _write_store_config(self) -> None:
        config_path = self.root / "store.json"
        if config_path.exists():
            return
        tmp = self.root / f".tmp-store-{uuid.uuid4().hex[:8]}.json"
        tmp.write_text(
            json.dumps({"embedding_dimension": self.dimension}, indent=2) + "\n",
            encoding="utf-8",
        )
        tmp.replace(config_path)

    # -- persistence --------------------------------------------------------

    def persist(self, entry: MemoryEntry, trajectory: Trajectory | None = None) -> Path:
        """Atomically write an entry; a duplicate question id is overwritten."""
        if len(entry.embedding) != self.dimension:
            raise ConfigurationError(
                f"embedding dimension {len(entry.embedding)} does not match "
                f"store dimension {self.dimension}"
            )
        for label, value in (("database", entry.database_id), ("question", entry.question.id)):
            if not _ID_PATTERN.match(value):
                raise StorageError(f"unsafe {label} id for storage: {value!r}")
        final = self.entry_dir(entry.database_id, entry.question.id)
        tmp = final.parent / f".tmp-{entry.question.id}-{uuid.uuid4().hex[:8]}"
        old = final.parent / f".old-{entry.question.id}-{uuid.uuid4().hex[:8]}"
        try:
            self.root.mkdir(parents=True, exist_ok=True)
            self._write_store_config()
            self._materialize(tmp, entry, trajectory)
            if final.exists():
                final.replace(old)
            tmp.replace(final)
        except OSError as exc:
            raise StorageError(f"persist failed for {entry.question.id!r}: {exc}") from exc
        finally:
            shutil.rmtree(tmp, ignore_errors=True)
            shutil.rmtree(old, ignore_errors=True)
        entry.path = final
        return final

    def _materialize(
        self, target: Path, entry: MemoryEntry, trajectory: Trajectory | None
    ) -> None:
        target.mkdir(parents=True, exist_ok=False)
        meta: dict[str, Any] = {
            "question": entry.question.to_dict(),
            "database_id": entry.database_id,
            "embedding": list(entry.embedding),
            "created_at": entry.created_at,
            "step_count": entry.step_count,
            "segments": [
                {"phase": seg.phase.value, "header": seg.header, "body": seg.body}
                for seg in entry.structured.segments
            ],
        }
        if trajectory is not None:
            meta["trajectory"] = trajectory.to_dict()
        (target / "meta.json").write_text(
            json.dumps(meta, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
        for phase, filename in _PHASE_FILES.items():
            (target / filename).write_text(
                entry.structured.phase_document(phase), encoding="utf-8"
            )
        (target / _FULL_FILE).write_text(entry.structured.full_document, encoding="utf-8")

    # -- loading ------------------------------------------------------------

    def load_entries(self, database_id: str) -> list[MemoryEntry]:
        """All entries for a database in question-id order; corrupt ones skipped."""
        db_dir = self.root / database_id
        if not db_dir.is_dir():
            return []
        entries: list[MemoryEntry] = []
        for entry_path in sorted(db_dir.iterdir(), key=lambda p: p.name):
            if not entry_path.is_dir() or entry_path.name.startswith("."):
                continue
            entry = self._load_entry(entry_path)
            if entry is not None:
                entries.append(entry)
        return entries

    def _load_entry(self, entry_path: Path) -> MemoryEntry | None:
        meta_path = entry_path / "meta.json"
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            question = Question.from_dict(meta["question"])
            embedding = [float(v) for v in meta["embedding"]]
            segments = [
                StructuredSegment(
                    phase=Phase.parse(seg["phase"]),
                    header=seg["header"],
                    body=seg["body"],
                )
                for seg in meta["segments"]
            ]
        except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
            logger.warning("skipping corrupt memory entry at %s: %s", entry_path, exc)
            return None
        if len(embedding) != self.dimension:
            logger.warning(
                "skipping entry at %s: embedding dimension %d does not match store %d",
                entry_path,
                len(embedding),
                self.dimension,
            )
            return None
        structured = StructuredTrajectory(
            question=question,
            segments=segments,
            full_document="".join(segment_text(seg) for seg in segments),
        )
        return MemoryEntry(
            question=question,
            database_id=meta["database_id"],
            structured=structured,
            embedding=embedding,
            created_at=meta.get("created_at", ""),
            step_count=int(meta.get("step_count", 0)),
            path=entry_path,
        )

    def load_trajectories(self, database_id: str) -> list[Trajectory]:
        """Raw classified trajectories stored alongside entries (for mining)."""
        trajectories: list[Trajectory] = []
        db_dir = self.root / database_id
        if not db_dir.is_dir():
            return []
        for entry_path in sorted(db_dir.iterdir(), key=lambda p: p.name):
            if not entry_path.is_dir() or entry_path.name.startswith("."):
                continue
            try:
                meta = json.loads((entry_path / "meta.json").read_text(encoding="utf-8"))
                raw = meta.get("trajectory")
                if raw is not None:
                    trajectories.append(Trajectory.from_dict(raw))
            except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
                logger.warning("skipping trajectory at %s: %s", entry_path, exc)
        return trajectories

    def load_phase_segment(self, entry: MemoryEntry, phase: Phase | None = None) -> str:
        """Contents of one phase's document (or the full document for None)."""
        if entry.path is None:
            raise StateError("entry has not been persisted")
        filename = _PHASE_FILES[phase] if phase is not None else _FULL_FILE
        target = entry.path / filename
        if not target.is_file():
            return ""
        return target.read_text(encoding="utf-8")
