from __future__ import annotations

import dataclasses
import random

import pytest

from trajmem.fixtures import build_fixture_workspace
from trajmem.harness import (
    EpisodeConfig,
    SchemaIndex,
    SchemaIndexEntry,
    build_linker_registry,
    build_planner_registry,
    build_schema_index,
    load_questions_file,
    run_episode,
    run_suite,
    schema_link,
    vector_search,
)
from trajmem.mining import MinedComposite, ToolSequence
from trajmem.model import Phase, Question
from trajmem.policies import Policy, PolicyDecision, QuestionScript, ScriptedPolicy
from trajmem.retrieval import HashingEmbedder
from trajmem.store import MemoryStore
from trajmem.synthesis import synthesize_memory
from trajmem.tools import Workspace

from oracles import brute_force_schema_rank

PROVIDER = HashingEmbedder(256)


@pytest.fixture()
def workspace(tmp_path):
    return Workspace(build_fixture_workspace(tmp_path / "ws"))


@pytest.fixture()
def memory(tmp_path, workspace):
    store = MemoryStore(tmp_path / "store")
    question = Question(
        id="syn-flights-001",
        text="How many rows are in flights?",
        database_id="flights",
        synthetic=True,
    )
    synthesize_memory([question], workspace, store, provider=PROVIDER)
    return store


UNIT_SCRIPT = QuestionScript(
    probes=["SELECT * FROM flights LIMIT 5"],
    main_sql="SELECT COUNT(*) AS n FROM flights",
    answer="36 flights in total",
    memory_mode="skip_exploration",
)

UNIT_QUESTION = Question(id="f1", text="How many flights are recorded in total?",
                         database_id="flights")


def _config(**kwargs):
    defaults = dict(memory_enabled=False, composites_enabled=False)
    defaults.update(kwargs)
    return EpisodeConfig(**defaults)


def test_scripted_episode_base_path(workspace):
    policy = ScriptedPolicy({"f1": UNIT_SCRIPT})
    result = run_episode(UNIT_QUESTION, workspace, _config(), policy)
    assert len(result.trajectory.steps) == 8
    assert result.answer == "36 flights in total"
    assert result.answer_rows == [(36,)]
    assert result.trajectory.final_answer == result.answer


def test_memory_prefix_skips_three_exploration_steps(workspace, memory):
    policy = ScriptedPolicy({"f1": UNIT_SCRIPT})
    result = run_episode(
        UNIT_QUESTION,
        workspace,
        _config(memory_enabled=True),
        policy,
        memory_store=memory,
        provider=PROVIDER,
    )
    assert len(result.trajectory.steps) == 5  # 8 minus ext, ddl, probe
    assert result.answer == "36 flights in total"


def test_memory_prefix_is_the_exploration_segment(workspace, memory):
    entry = memory.load_entries("flights")[0]
    expected = memory.load_phase_segment(entry, Phase.EXPLORATION)
    seen = {}

    class Spy(Policy):
        def next_action(self, transcript, tools):
            seen["prefix"] = transcript.context_prefix
            return PolicyDecision(thought="", final_answer="stop")

    run_episode(
        UNIT_QUESTION,
        workspace,
        _config(memory_enabled=True),
        Spy(),
        memory_store=memory,
        provider=PROVIDER,
    )
    assert seen["prefix"] == expected
    assert expected.startswith("## [exploration]")


def test_memory_disabled_never_touches_store(workspace, tmp_path):
    seen = {}

    class Spy(Policy):
        def next_action(self, transcript, tools):
            seen["prefix"] = transcript.context_prefix
            seen["tools"] = {t.name for t in tools}
            return PolicyDecision(thought="", final_answer="stop")

    # Store root does not even exist; memory disabled must not look at it.
    run_episode(
        UNIT_QUESTION,
        workspace,
        _config(memory_enabled=False),
        Spy(),
        memory_store=None,
    )
    assert seen["prefix"] == ""
    assert "retrieve_trajectory" not in seen["tools"]


def test_budget_exhaustion_returns_no_answer(workspace):
    class NeverAnswer(Policy):
        def next_action(self, transcript, tools):
            return PolicyDecision(thought="loop", action_code="get_ddl()")

    config = _config(max_planner_steps=6)
    result = run_episode(UNIT_QUESTION, workspace, config, NeverAnswer())
    assert len(result.trajectory.steps) == 6
    assert result.answer is None
    assert result.trajectory.final_answer is None


def test_tool_crash_is_recorded_and_episode_continues(workspace):
    class CrashThenAnswer(Policy):
        def next_action(self, transcript, tools):
            if not transcript.steps:
                return PolicyDecision(thought="try", action_code="read_file(path='missing.txt')")
            return PolicyDecision(thought="", final_answer="gave up")

    result = run_episode(UNIT_QUESTION, workspace, _config(), CrashThenAnswer())
    first = result.trajectory.steps[0]
    assert first.invocations[0].succeeded is False
    assert "error" in first.observation
    assert result.answer == "gave up"


def test_episode_determinism_modulo_wall_time(workspace):
    policy = ScriptedPolicy({"f1": UNIT_SCRIPT})
    results = [
        run_episode(UNIT_QUESTION, workspace, _config(), policy) for _ in range(2)
    ]
    dumps = []
    for result in results:
        clone = dataclasses.replace(result.trajectory, wall_time_ms=0)
        dumps.append(clone.to_json().encode())
    assert dumps[0] == dumps[1]


def test_planner_registry_hygiene():
    config = EpisodeConfig()
    registry = build_planner_registry(config, ScriptedPolicy({}))
    assert "vector_search" not in registry
    for name in ("sql_execute", "get_ddl", "get_ext", "validate_result", "save_result"):
        assert name in registry


def test_linker_registry_has_vector_search():
    index = SchemaIndex(entries=())
    registry = build_linker_registry(index, PROVIDER)
    assert "vector_search" in registry
    assert "validate_result" not in registry


def test_vector_search_never_invoked_at_planner_level(workspace):
    class TryVectorSearch(Policy):
        def next_action(self, transcript, tools):
            if not transcript.steps:
                return PolicyDecision(thought="", action_code="vector_search(query='x')")
            return PolicyDecision(thought="", final_answer="done")

    result = run_episode(UNIT_QUESTION, workspace, _config(), TryVectorSearch())
    invocation = result.trajectory.steps[0].invocations[0]
    assert invocation.succeeded is False
    assert "unknown tool" in invocation.output


def test_retrieve_trajectory_tool_pulls_phase_segments(workspace, memory):
    class PullValidation(Policy):
        def next_action(self, transcript, tools):
            if not transcript.steps:
                return PolicyDecision(
                    thought="check prior execution work",
                    action_code="retrieve_trajectory(phase='execution')",
                )
            return PolicyDecision(thought="", final_answer="done")

    result = run_episode(
        UNIT_QUESTION,
        workspace,
        _config(memory_enabled=True),
        PullValidation(),
        memory_store=memory,
        provider=PROVIDER,
    )
    invocation = result.trajectory.steps[0].invocations[0]
    assert invocation.succeeded
    assert "retrieved trajectory" in invocation.output


def test_episode_config_validation():
    with pytest.raises(ValueError):
        EpisodeConfig(max_planner_steps=0)
    with pytest.raises(ValueError):
        EpisodeConfig(schema_link_budget=0)
    with pytest.raises(ValueError):
        EpisodeConfig(sql_retry_limit=-1)
    assert EpisodeConfig().schema_link_budget == 5
    assert EpisodeConfig().max_planner_steps == 30


# -- composites in episodes ----------------------------------------------------------


def _bootstrap_composite():
    return MinedComposite(
        sequence=ToolSequence(tools=("get_ext", "get_ddl"), phase=Phase.EXPLORATION),
        support_count=4,
        support_ratio=1.0,
        name="get_ext_then_get_ddl",
        description="knowledge then schema",
    )


def test_composite_merges_exactly_one_boundary(workspace):
    policy = ScriptedPolicy({"f1": UNIT_SCRIPT})
    without = run_episode(UNIT_QUESTION, workspace, _config(), policy)
    with_composites = run_episode(
        UNIT_QUESTION,
        workspace,
        _config(composites_enabled=True),
        policy,
        composites=[_bootstrap_composite()],
    )
    merged_pairs = 1  # (get_ext, get_ddl) is the only mined pair in the flow
    assert len(without.trajectory.steps) - len(with_composites.trajectory.steps) == merged_pairs
    used = {
        inv.tool_name
        for step in with_composites.trajectory.steps
        for inv in step.invocations
    }
    assert "get_ext_then_get_ddl" in used


def test_no_composites_flag_keeps_tool_names_primitive(workspace):
    policy = ScriptedPolicy({"f1": UNIT_SCRIPT})
    result = run_episode(
        UNIT_QUESTION,
        workspace,
        _config(composites_enabled=False),
        policy,
        composites=[_bootstrap_composite()],
    )
    used = {
        inv.tool_name for step in result.trajectory.steps for inv in step.invocations
    }
    assert "get_ext_then_get_ddl" not in used


# -- schema linking --------------------------------------------------------------------


class LinkerPolicy(Policy):
    """Searches the index once, then reports the top hit."""

    def next_action(self, transcript, tools):
        if not transcript.steps:
            return PolicyDecision(
                thought="search the schema index",
                action_code=f"vector_search(query={transcript.question.text!r}, k=3)",
            )
        top = transcript.steps[0].observation.splitlines()[1].split("\t")[0]
        return PolicyDecision(thought="", final_answer=f"relevant schema element: {top}")


def test_schema_link_reports_matching_column(workspace):
    index = build_schema_index(workspace, "flights", PROVIDER)
    question = Question(
        id="q", text="flights departure_delay_minutes REAL", database_id="flights"
    )
    report = schema_link(question, workspace, 5, LinkerPolicy(), index, provider=PROVIDER)
    assert "flights.departure_delay_minutes" in report


def test_schema_link_budget_one_takes_one_step(workspace):
    index = build_schema_index(workspace, "flights", PROVIDER)
    steps_taken = []

    class Probing(Policy):
        def next_action(self, transcript, tools):
            steps_taken.append(len(transcript.steps))
            return PolicyDecision(
                thought="probe", action_code="vector_search(query='x', k=1)"
            )

    question = Question(id="q", text="anything", database_id="flights")
    report = schema_link(question, workspace, 1, Probing(), index, provider=PROVIDER)
    assert steps_taken == [0]
    assert "budget exhausted after 1 step" in report


def test_schema_link_empty_index_reports_no_candidates(workspace):
    class SearchOnce(Policy):
        def next_action(self, transcript, tools):
            if not transcript.steps:
                return PolicyDecision(thought="", action_code="vector_search(query='x')")
            return PolicyDecision(
                thought="", final_answer=f"no candidates: {transcript.steps[0].observation}"
            )

    question = Question(id="q", text="anything", database_id="flights")
    report = schema_link(
        question, workspace, 5, SearchOnce(), SchemaIndex(entries=()), provider=PROVIDER
    )
    assert "no schema index entries" in report


def test_planner_schema_link_tool_returns_report_only(workspace):
    index = build_schema_index(workspace, "flights", PROVIDER)

    class UseLinker(Policy):
        def next_action(self, transcript, tools):
            if not transcript.steps:
                return PolicyDecision(thought="", action_code="schema_link()")
            return PolicyDecision(thought="", final_answer="done")

    result = run_episode(
        Question(id="q", text="flights carrier TEXT", database_id="flights"),
        workspace,
        _config(),
        UseLinker(),
        linker_policy=LinkerPolicy(),
        schema_index=index,
    )
    observation = result.trajectory.steps[0].observation
    assert "relevant schema element" in observation
    assert "vector_search" not in observation  # sub-transcript stays hidden


# -- vector search ------------------------------------------------------------------


def test_vector_search_k_larger_than_index(workspace):
    index = build_schema_index(workspace, "retail", PROVIDER)
    results = vector_search("anything at all", index, PROVIDER, k=500)
    assert len(results) == len(index.entries)


def test_vector_search_exact_description_ranks_first(workspace):
    index = build_schema_index(workspace, "retail", PROVIDER)
    entry = index.entries[0]
    results = vector_search(entry.description, index, PROVIDER, k=1)
    assert results[0][:2] == (entry.table, entry.column)
    assert results[0][2] == pytest.approx(1.0, abs=1e-9)


def test_vector_search_matches_brute_force_ranking():
    rng = random.Random(41)
    words = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta"]
    entries = []
    for i in range(20):
        description = " ".join(rng.choice(words) for _ in range(3))
        entries.append(
            SchemaIndexEntry(
                table=f"t{i % 4}",
                column=f"c{i}",
                description=description,
                embedding=tuple(PROVIDER.embed(description)),
            )
        )
    index = SchemaIndex(entries=tuple(entries))
    query = "beta gamma delta"
    expected = brute_force_schema_rank(
        PROVIDER.embed(query),
        [(e.table, e.column, e.embedding) for e in entries],
        7,
    )
    assert vector_search(query, index, PROVIDER, k=7) == expected


def test_vector_search_empty_index():
    assert vector_search("x", SchemaIndex(entries=()), PROVIDER) == []


# -- run_suite ------------------------------------------------------------------------


def test_run_suite_writes_records_and_trajectories(workspace, tmp_path):
    records = load_questions_file(workspace.root / "questions.jsonl")[:3]
    suite = run_suite(
        records,
        workspace,
        tmp_path / "runs",
        _config(),
    )
    assert len(suite.records) == 3
    for record in records:
        qid = record.question.id
        assert (tmp_path / "runs" / "records" / f"{qid}.json").is_file()
        assert (tmp_path / "runs" / "trajectories" / f"{qid}.json").is_file()
        assert (tmp_path / "runs" / "answers" / f"{qid}.csv").is_file()
    assert all(r.correct is True for r in suite.records)


def test_run_suite_parallel_matches_serial(workspace, tmp_path):
    records = load_questions_file(workspace.root / "questions.jsonl")[:4]
    serial = run_suite(records, workspace, tmp_path / "serial", _config())
    parallel = run_suite(records, workspace, tmp_path / "parallel", _config(), workers=3)
    strip = lambda rs: [
        {**r.to_dict(), "wall_time_ms": 0} for r in rs
    ]
    assert strip(serial.records) == strip(parallel.records)


def test_run_suite_scores_wrong_answer_false(workspace, tmp_path):
    records = [
        r for r in load_questions_file(workspace.root / "questions.jsonl")
        if r.question.id == "f7"
    ]
    suite = run_suite(records, workspace, tmp_path / "runs", _config())
    assert suite.records[0].correct is False


def test_run_suite_refinement_question_succeeds(workspace, tmp_path):
    records = [
        r for r in load_questions_file(workspace.root / "questions.jsonl")
        if r.question.id == "f6"
    ]
    suite = run_suite(records, workspace, tmp_path / "runs", _config())
    assert suite.records[0].correct is True
    trajectory = suite.results["f6"].trajectory
    main_steps = [
        s for s in trajectory.steps
        for inv in s.invocations
        if inv.tool_name == "sql_execute" and "attempt 2" in inv.output
    ]
    assert main_steps, "refinement trail missing from invocation output"
