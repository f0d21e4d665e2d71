import asyncio
import itertools

import pytest

from mocr.arena import (
    ArenaTask,
    BattleRecord,
    DocumentRef,
    PairingStrategy,
    TranscriptStore,
    battle_key,
    combine_trials,
    leaderboard,
    leaderboard_by_benchmark,
    run_arena,
    run_battle,
    scan_documents,
    schedule_pairs,
)
from mocr.elo import EloConfig
from mocr.errors import ConfigError, DataError, LogCorruptionError, NoBattlesError
from mocr.prompting import TrialVerdict
from mocr.services.battle_log import BattleLog
from mocr.services.mock_judge import MockJudge
from tests.conftest import make_arena

V = TrialVerdict


def _run(arena, judge, log_path=None, pairing="all-pairs", jobs=1):
    models = arena["models"].read_text().split()
    plan = schedule_pairs(models, scan_documents(arena["documents"]), PairingStrategy.parse(pairing))
    log = BattleLog(log_path or arena["log"])
    summary = asyncio.run(
        run_arena(plan, judge, log, TranscriptStore(arena["transcripts"]), template_id="t", jobs=jobs)
    )
    return summary, log


# =========================
# Combining trials
# =========================
def test_truth_table():
    table = {
        (V.FIRST, V.SECOND): 1.0,
        (V.SECOND, V.FIRST): 0.0,
        (V.FIRST, V.FIRST): 0.5,
        (V.SECOND, V.SECOND): 0.5,
    }
    for t1, t2 in itertools.product(V, V):
        expected = table.get((t1, t2), 0.5)
        assert combine_trials(t1, t2) == expected
    decisive = [c for c in itertools.product(V, V) if combine_trials(*c) != 0.5]
    assert len(decisive) == 2


def test_battle_key_ignores_model_order():
    assert battle_key("d", "a", "b") == battle_key("d", "b", "a")
    assert battle_key("d", "a", "b") != battle_key("e", "a", "b")


# =========================
# Pairing
# =========================
def _docs(n):
    return [DocumentRef(f"d{i}", f"/nowhere/d{i}.png") for i in range(n)]


def test_all_pairs_counts():
    plan = schedule_pairs(["A", "B", "C"], _docs(4))
    assert len(plan) == 3 * 4
    assert all(t.model_a < t.model_b for t in plan.tasks)


def test_duplicate_model_names_collapse():
    assert len(schedule_pairs(["A", "B", "B"], _docs(2))) == 2


def test_needs_two_models():
    with pytest.raises(ConfigError):
        schedule_pairs(["A"], _docs(2))
    with pytest.raises(ConfigError):
        schedule_pairs(["A", "A"], _docs(2))


def test_sampled_pairing_is_deterministic_subset():
    universe = {t.key for t in schedule_pairs(list("ABCD"), _docs(5)).tasks}
    one = schedule_pairs(list("ABCD"), _docs(5), PairingStrategy.parse("sampled:7", seed=3))
    two = schedule_pairs(list("ABCD"), _docs(5), PairingStrategy.parse("sampled:7", seed=3))
    assert one == two
    assert len(one) == 7
    assert {t.key for t in one.tasks} <= universe
    capped = schedule_pairs(list("ABC"), _docs(1), PairingStrategy.parse("sampled:50"))
    assert len(capped) == 3


@pytest.mark.parametrize("text", ["sampled:", "sampled:x", "sampled:0", "round-robin"])
def test_bad_pairing_strings(text):
    with pytest.raises(ConfigError):
        PairingStrategy.parse(text)


def test_scan_documents_benchmarks(tmp_path):
    arena = make_arena(tmp_path, ["a", "b"], ["olm/p1", "olm/p2", "loose"])
    docs = scan_documents(arena["documents"])
    assert [d.doc_id for d in docs] == ["loose", "olm/p1", "olm/p2"]
    assert [d.benchmark for d in docs] == [None, "olm", "olm"]


# =========================
# Battles
# =========================
def _task(arena, doc="doc1"):
    (ref,) = [d for d in scan_documents(arena["documents"]) if d.doc_id == doc]
    return ArenaTask(ref, "alpha", "beta")


def test_run_battle_tie(arena_dir):
    judge = MockJudge.from_policy("tie")
    record = asyncio.run(run_battle(_task(arena_dir), judge, TranscriptStore(arena_dir["transcripts"]), "t"))
    assert record.ok and record.score_a == 0.5
    assert len(judge.calls) == 2
    assert judge.calls[0].first == judge.calls[1].second
    assert judge.calls[0].image == judge.calls[1].image


def test_run_battle_marker_decides(tmp_path):
    arena = make_arena(
        tmp_path, ["alpha", "beta"], ["doc1"],
        text_for=lambda m, d: "GOLD\n" if m == "beta" else "lead\n",
    )
    judge = MockJudge.from_policy("marker:GOLD")
    record = asyncio.run(run_battle(_task(arena), judge, TranscriptStore(arena["transcripts"]), "t"))
    assert (record.trial1, record.trial2) == (V.SECOND, V.FIRST)
    assert record.score_a == 0.0
    assert record.problems() == []


def test_positional_bias_is_neutralised(arena_dir):
    judge = MockJudge.from_policy("first")
    record = asyncio.run(run_battle(_task(arena_dir), judge, TranscriptStore(arena_dir["transcripts"]), "t"))
    assert (record.trial1, record.trial2) == (V.FIRST, V.FIRST)
    assert record.score_a == 0.5


def test_failed_judge_yields_failed_record(arena_dir):
    record = asyncio.run(
        run_battle(_task(arena_dir), MockJudge.from_policy("fail"), TranscriptStore(arena_dir["transcripts"]), "t")
    )
    assert not record.ok
    assert record.score_a is None
    assert "TransportError" in record.error


def test_record_dict_round_trip_and_validation(arena_dir):
    record = asyncio.run(
        run_battle(_task(arena_dir), MockJudge.from_policy("tie"), TranscriptStore(arena_dir["transcripts"]), "t")
    )
    assert BattleRecord.from_dict(record.to_dict()) == record
    tampered = {**record.to_dict(), "score_a": 1.0}
    with pytest.raises(DataError):
        BattleRecord.from_dict(tampered)
    with pytest.raises(DataError):
        BattleRecord.from_dict({k: v for k, v in record.to_dict().items() if k != "model_b"})


def test_record_keeps_the_compared_texts(arena_dir):
    record = asyncio.run(
        run_battle(_task(arena_dir), MockJudge.from_policy("tie"), TranscriptStore(arena_dir["transcripts"]), "t")
    )
    assert record.candidates == ("# doc1\n\ntranscribed by alpha\n", "# doc1\n\ntranscribed by beta\n")
    assert record.swapped().candidates == record.candidates[::-1]
    assert record.swapped().problems() == []
    assert BattleRecord.from_dict(record.to_dict()).candidates == record.candidates
    edited = {**record.to_dict(), "candidates": ["rewritten", record.candidates[1]]}
    with pytest.raises(DataError):
        BattleRecord.from_dict(edited)
    with pytest.raises(DataError):
        BattleRecord.from_dict({**record.to_dict(), "candidates": [1, 2]})


# =========================
# Arena runs and resume
# =========================
def test_run_and_resume(arena_dir):
    judge = MockJudge.from_policy("tie")
    summary, log = _run(arena_dir, judge)
    assert summary.ok and summary.new == 3 and summary.skipped == 0
    assert len(judge.calls) == 6

    again = MockJudge.from_policy("tie")
    summary, _ = _run(arena_dir, again)
    assert summary.new == 0 and summary.skipped == 3
    assert again.calls == []
    assert summary.lines()[0].startswith("0 new battles, 3 already complete")


def test_interrupted_resume_matches_uninterrupted(tmp_path):
    models = ["m1", "m2", "m3"]
    docs = [f"doc{i}" for i in range(4)]
    arena = make_arena(tmp_path, models, docs, text_for=lambda m, d: "GOLD" if m == "m2" else m)

    full_summary, full_log = _run(arena, MockJudge.from_policy("marker:GOLD"), tmp_path / "full.jsonl")
    lines = full_log.path.read_text(encoding="utf-8").splitlines(keepends=True)
    assert full_summary.new == len(lines) == 12

    cut = tmp_path / "cut.jsonl"
    cut.write_text("".join(lines[:5]) + lines[5][: len(lines[5]) // 2], encoding="utf-8")
    judge = MockJudge.from_policy("marker:GOLD")
    summary, cut_log = _run(arena, judge, cut)
    assert summary.skipped == 5 and summary.new == 7
    assert len(judge.calls) == 14

    def as_set(log):
        return {(r.key, r.score_a, r.trial1, r.trial2) for r in log.load()}

    assert as_set(cut_log) == as_set(full_log)
    assert len(cut_log.load()) == 12


def test_parallel_run_logs_every_task(tmp_path):
    arena = make_arena(tmp_path, ["a", "b", "c", "d"], ["x", "y", "z"])
    summary, log = _run(arena, MockJudge.from_policy("tie"), jobs=4)
    assert summary.new == 18
    assert len({r.key for r in log.load()}) == 18


def test_failed_battles_are_retried_on_resume(arena_dir):
    summary, log = _run(arena_dir, MockJudge.from_policy("fail"))
    assert summary.failed == 3 and not summary.ok
    assert log.completed_keys() == set()
    assert len(log.load()) == 3

    summary, log = _run(arena_dir, MockJudge.from_policy("tie"))
    assert summary.new == 3
    assert len(log.completed_keys()) == 3


def test_missing_transcription_is_a_task_error(arena_dir):
    (arena_dir["transcripts"] / "beta" / "doc2.md").unlink()
    summary, log = _run(arena_dir, MockJudge.from_policy("tie"))
    assert summary.new == 2
    assert len(summary.task_errors) == 1
    assert "doc2" in summary.lines()[1]
    assert len(log.load()) == 2


def test_corrupted_log_reports_line(arena_dir):
    _run(arena_dir, MockJudge.from_policy("tie"))
    lines = arena_dir["log"].read_text(encoding="utf-8").splitlines(keepends=True)
    lines[1] = lines[1].replace('"tie"', '"first"', 1)
    arena_dir["log"].write_text("".join(lines), encoding="utf-8")
    with pytest.raises(LogCorruptionError) as info:
        BattleLog(arena_dir["log"]).load()
    assert info.value.line == 2

    arena_dir["log"].write_text(lines[0] + "{not json\n", encoding="utf-8")
    with pytest.raises(LogCorruptionError) as info:
        BattleLog(arena_dir["log"]).load()
    assert info.value.line == 2


# =========================
# Leaderboards
# =========================
def test_no_battles():
    with pytest.raises(NoBattlesError):
        leaderboard([], EloConfig(), iterations=10)


def test_smoke_ranking_with_marker_judge(tmp_path):
    models = ["gold", "silver", "tin"]
    docs = [f"p{i}" for i in range(5)]
    arena = make_arena(tmp_path, models, docs, text_for=lambda m, d: f"{d} GOLD" if m == "gold" else f"{d} {m}")
    summary, log = _run(arena, MockJudge.from_policy("marker:GOLD"))
    assert summary.new == 15
    board = leaderboard(log.load(), EloConfig(), iterations=200, seed=0)
    assert board.rows[0].model == "gold"
    assert board.rows[0].wins == 10
    assert board.diagnostics.inconsistent == 0
    assert "gold" in board.format_table()
    assert board.to_dict()["schema"] == "mocr-leaderboard/1"


def test_first_slot_bias_gives_flat_board(tmp_path):
    arena = make_arena(tmp_path, ["a", "b", "c"], ["x", "y"])
    _, log = _run(arena, MockJudge.from_policy("first"))
    board = leaderboard(log.load(), EloConfig(), iterations=100)
    assert all(abs(r.mean - 1000) < 1 for r in board.rows)
    assert board.diagnostics.first_preference_rate == 1.0
    assert board.diagnostics.consistent == 0


def test_label_swap_immunity(tmp_path):
    models = ["gold", "silver", "tin"]
    arena = make_arena(
        tmp_path, models, ["p0", "p1", "p2", "p3"],
        text_for=lambda m, d: "GOLD" if (m == "gold") ^ (d == "p2") else m,
    )
    _, log = _run(arena, MockJudge.from_policy("marker:GOLD"))
    records = log.load()
    swapped = [r.swapped() for r in records]
    assert all(s.problems() == [] for s in swapped)
    one = {r.model: r.mean for r in leaderboard(records, iterations=300, seed=5).rows}
    two = {r.model: r.mean for r in leaderboard(swapped, iterations=300, seed=5).rows}
    for m in models:
        assert abs(one[m] - two[m]) < 1e-6


def test_report_is_independent_of_log_order(arena_dir):
    _, log = _run(arena_dir, MockJudge.from_policy("tie"))
    records = log.load()
    a = leaderboard(records, iterations=50, seed=1).to_dict()
    b = leaderboard(records[::-1], iterations=50, seed=1).to_dict()
    assert a == b


def test_leaderboard_by_benchmark(tmp_path):
    arena = make_arena(
        tmp_path, ["a", "b"], ["olm/p1", "olm/p2", "omni/q1"],
        text_for=lambda m, d: "GOLD" if m == "a" else "x",
    )
    _, log = _run(arena, MockJudge.from_policy("marker:GOLD"))
    boards = leaderboard_by_benchmark(log.load(), iterations=20)
    assert sorted(boards) == ["olm", "omni"]
    assert boards["olm"].rows[0].battles == 2
    assert boards["omni"].benchmark == "omni"
