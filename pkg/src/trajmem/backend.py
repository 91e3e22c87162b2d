"""Single-file relational backend (SQLite) with self-refining execution.

A failed or empty-result query is fed back to a refiner callback for one or
more corrected attempts; every attempt is recorded so the invocation output
can show the full trail.
"""

from __future__ import annotations

import sqlite3
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import ConfigurationError

Refiner = Callable[[str, str], "str | None"]


@dataclass
class QueryResult:
    columns: list[str]
    rows: list[tuple]


class SqliteBackend:
    """Thin wrapper over one SQLite database file."""

    def __init__(self, path: str | Path) -> None:
        self.path = Path(path)
        if not self.path.is_file():
            raise ConfigurationError(f"database file not found: {self.path}")
        self._conn = sqlite3.connect(str(self.path))

    def execute(self, query: str) -> QueryResult:
        cursor = self._conn.execute(query)
        columns = [d[0] for d in cursor.description] if cursor.description else []
        rows = [tuple(row) for row in cursor.fetchall()]
        return QueryResult(columns=columns, rows=rows)

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "SqliteBackend":
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()


def render_result(result: QueryResult, max_rows: int = 50) -> str:
    """Deterministic plain-text table for observations."""
    if not result.columns and not result.rows:
        return "(no result set)"
    lines = [" | ".join(result.columns)]
    for row in result.rows[:max_rows]:
        lines.append(" | ".join(_render_cell(cell) for cell in row))
    if len(result.rows) > max_rows:
        lines.append(f"... ({len(result.rows) - max_rows} more rows)")
    lines.append(f"({len(result.rows)} rows)")
    return "\n".join(lines)


def _render_cell(cell: object) -> str:
    if cell is None:
        return "NULL"
    if isinstance(cell, float):
        return f"{cell:g}"
    return str(cell)


@dataclass
class RefinementAttempt:
    query: str
    error: str | None
    row_count: int | None


@dataclass
class SqlOutcome:
    """Final result of executing a query with optional self-refinement."""

    result: QueryResult | None
    error: str | None
    attempts: list[RefinementAttempt] = field(default_factory=list)

    @property
    def succeeded(self) -> bool:
        return self.error is None

    @property
    def refinements(self) -> int:
        return max(0, len(self.attempts) - 1)


def execute_sql_with_refinement(
    query: str,
    backend: SqliteBackend,
    refine: Refiner | None = None,
    retry_limit: int = 1,
) -> SqlOutcome:
    """Execute a query, asking the refiner for corrections on failure.

    Both execution errors and empty result sets trigger refinement, up to
    ``retry_limit`` corrected attempts. An empty result that survives all
    attempts still counts as success; an execution error does not.
    """
    if retry_limit < 0:
        raise ValueError("retry_limit must be nonnegative")
    attempts: list[RefinementAttempt] = []
    current = query
    result: QueryResult | None = None
    error: str | None = None
    for attempt_index in range(retry_limit + 1):
        try:
            result = backend.execute(current)
            error = None
        except sqlite3.Error as exc:
            result = None
            error = str(exc)
        attempts.append(
            RefinementAttempt(
                query=current,
                error=error,
                row_count=len(result.rows) if result is not None else None,
            )
        )
        if error is None and result is not None and result.rows:
            return SqlOutcome(result=result, error=None, attempts=attempts)
        if attempt_index == retry_limit:
            break
        feedback = error if error is not None else "empty result"
        corrected = refine(current, feedback) if refine is not None else None
        if not corrected or corrected == current:
            break
        current = corrected
    if error is None:
        return SqlOutcome(result=result, error=None, attempts=attempts)
    return SqlOutcome(result=None, error=error, attempts=attempts)
