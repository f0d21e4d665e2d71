# mocr/arena.py
"""
OCR Arena: pairwise battles between OCR models on the same page, judged twice
with the presentation order swapped.

A battle is decisive only when both trials prefer the same candidate; any tie
or order-flipped preference scores 0.5 for both. A judge that always favours
whichever candidate it sees first therefore produces nothing but ties.
"""
from __future__ import annotations

import asyncio
import hashlib
import itertools
import json
import logging
import mimetypes
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from tqdm import tqdm

from mocr import elo
from mocr.errors import ConfigError, DataError, JudgeError, NoBattlesError, TaskError
from mocr.prompting import JudgeRequest, JudgeResponse, TrialVerdict

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FAILED = "failed"

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".webp")


class Judge(Protocol):
    async def judge(self, request: JudgeRequest) -> JudgeResponse: ...


# =========================
# Inputs
# =========================
@dataclass(frozen=True)
class Candidate:
    model: str
    text: str

    def __post_init__(self) -> None:
        if self.text is None:
            raise TaskError(f"transcription for {self.model} is missing")

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.text.encode("utf-8")).hexdigest()


@dataclass(frozen=True, order=True)
class DocumentRef:
    doc_id: str
    image_path: str
    benchmark: Optional[str] = None

    def load_image(self) -> Tuple[bytes, str]:
        try:
            data = Path(self.image_path).read_bytes()
        except OSError as e:
            raise TaskError(f"cannot read image for {self.doc_id}: {e}") from e
        if not data:
            raise TaskError(f"image for {self.doc_id} is empty")
        mime = mimetypes.guess_type(self.image_path)[0] or "application/octet-stream"
        return data, mime


def scan_documents(root: Union[str, Path]) -> List[DocumentRef]:
    """Page images under `root`. A first-level subdirectory names the benchmark."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"documents directory not found: {root}")
    docs = []
    for path in sorted(root.rglob("*")):
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES:
            rel = path.relative_to(root).with_suffix("")
            benchmark = rel.parts[0] if len(rel.parts) > 1 else None
            docs.append(DocumentRef(rel.as_posix(), str(path), benchmark))
    ids = [d.doc_id for d in docs]
    if len(set(ids)) != len(ids):
        raise DataError("two page images share a document id (same stem, different suffix)")
    return docs


class TranscriptStore:
    """Transcriptions laid out as <root>/<model>/<doc-id>.md."""

    def __init__(self, root: Union[str, Path]) -> None:
        self.root = Path(root)

    def path(self, model: str, doc_id: str) -> Path:
        return self.root / model / f"{doc_id}.md"

    def load(self, model: str, doc_id: str) -> Candidate:
        p = self.path(model, doc_id)
        try:
            return Candidate(model, p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise TaskError(f"missing transcription {p}") from None
        except (OSError, UnicodeDecodeError) as e:
            raise TaskError(f"unreadable transcription {p}: {e}") from e

    def models(self) -> List[str]:
        return sorted(p.name for p in self.root.iterdir() if p.is_dir() and not p.name.startswith("."))


# =========================
# Pairing
# =========================
@dataclass(frozen=True)
class ArenaTask:
    document: DocumentRef
    model_a: str
    model_b: str

    @property
    def key(self) -> str:
        return battle_key(self.document.doc_id, self.model_a, self.model_b)


@dataclass(frozen=True)
class PairingStrategy:
    kind: str = "all-pairs"
    n: int = 0
    seed: int = 0

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "PairingStrategy":
        text = (text or "all-pairs").strip()
        if text == "all-pairs":
            return cls()
        if text.startswith("sampled:"):
            try:
                n = int(text.split(":", 1)[1])
            except ValueError:
                raise ConfigError(f"bad pairing strategy '{text}' (expected sampled:N)") from None
            if n < 1:
                raise ConfigError("sampled pairing needs N >= 1")
            return cls("sampled", n, seed)
        raise ConfigError(f"unknown pairing strategy '{text}' (all-pairs | sampled:N)")

    def __str__(self) -> str:
        return self.kind if self.kind == "all-pairs" else f"sampled:{self.n}"


@dataclass(frozen=True)
class PairingPlan:
    tasks: Tuple[ArenaTask, ...]

    def __post_init__(self) -> None:
        seen = set()
        for t in self.tasks:
            if t.model_a == t.model_b:
                raise ConfigError(f"task pairs {t.model_a} with itself")
            if t.key in seen:
                raise ConfigError(f"duplicate task {t.document.doc_id}: {t.model_a} vs {t.model_b}")
            seen.add(t.key)

    def __len__(self) -> int:
        return len(self.tasks)


def schedule_pairs(
    models: Sequence[str],
    documents: Sequence[DocumentRef],
    strategy: Union[str, PairingStrategy] = "all-pairs",
) -> PairingPlan:
    if isinstance(strategy, str):
        strategy = PairingStrategy.parse(strategy)
    names = sorted(set(models))
    if len(names) < 2:
        raise ConfigError(f"need at least 2 distinct models (got {len(names)})")
    if not documents:
        raise ConfigError("need at least 1 document")
    universe = [
        ArenaTask(doc, a, b)
        for doc in sorted(documents)
        for a, b in itertools.combinations(names, 2)
    ]
    if strategy.kind == "all-pairs":
        return PairingPlan(tuple(universe))

    n = strategy.n
    if n > len(universe):
        logger.warning("sampled:%d exceeds the %d possible tasks; using all", n, len(universe))
        n = len(universe)
    picked = np.random.default_rng(strategy.seed).choice(len(universe), size=n, replace=False)
    return PairingPlan(tuple(universe[i] for i in sorted(int(i) for i in picked)))


def battle_key(doc_id: str, model_a: str, model_b: str) -> str:
    """Digest of the document and the unordered model pair."""
    low, high = sorted((model_a, model_b))
    return hashlib.sha256(json.dumps([doc_id, low, high]).encode("utf-8")).hexdigest()


# =========================
# Battles
# =========================
def combine_trials(trial1: TrialVerdict, trial2: TrialVerdict) -> float:
    """trial1 shows A first, trial2 shows B first. Score for A."""
    pick1 = {TrialVerdict.FIRST: "A", TrialVerdict.SECOND: "B"}.get(trial1)
    pick2 = {TrialVerdict.FIRST: "B", TrialVerdict.SECOND: "A"}.get(trial2)
    if pick1 == pick2 == "A":
        return 1.0
    if pick1 == pick2 == "B":
        return 0.0
    return 0.5


@dataclass(frozen=True)
class BattleRecord:
    key: str
    doc_id: str
    model_a: str
    model_b: str
    status: str = STATUS_OK
    benchmark: Optional[str] = None
    trial1: Optional[TrialVerdict] = None
    trial2: Optional[TrialVerdict] = None
    score_a: Optional[float] = None
    raw: Tuple[Optional[str], Optional[str]] = (None, None)
    explanations: Tuple[Optional[str], Optional[str]] = (None, None)
    candidates: Tuple[Optional[str], Optional[str]] = (None, None)  # transcription texts, A then B
    transcripts: Tuple[str, str] = ("", "")  # sha256 of each candidate's text
    template_id: Optional[str] = None
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == STATUS_OK

    def problems(self) -> List[str]:
        if self.status not in (STATUS_OK, STATUS_FAILED):
            return [f"unknown status {self.status!r}"]
        if self.model_a == self.model_b:
            return ["model_a equals model_b"]
        if self.key != battle_key(self.doc_id, self.model_a, self.model_b):
            return ["battle key does not match document and models"]
        for text, digest in zip(self.candidates, self.transcripts):
            if text is not None and digest and hashlib.sha256(text.encode("utf-8")).hexdigest() != digest:
                return ["candidate text does not match its recorded digest"]
        if not self.ok:
            return []
        if self.trial1 is None or self.trial2 is None:
            return ["completed battle is missing a verdict"]
        if self.score_a != combine_trials(self.trial1, self.trial2):
            return [f"score_a {self.score_a} disagrees with verdicts {self.trial1.value}/{self.trial2.value}"]
        return []

    def outcome(self) -> elo.BattleOutcome:
        return elo.BattleOutcome(self.model_a, self.model_b, self.score_a)

    def swapped(self) -> "BattleRecord":
        """Same battle with the A/B labels exchanged."""
        return BattleRecord(
            key=self.key, doc_id=self.doc_id, model_a=self.model_b, model_b=self.model_a,
            status=self.status, benchmark=self.benchmark,
            trial1=self.trial2, trial2=self.trial1,
            score_a=None if self.score_a is None else 1.0 - self.score_a,
            raw=self.raw[::-1], explanations=self.explanations[::-1],
            candidates=self.candidates[::-1], transcripts=self.transcripts[::-1],
            template_id=self.template_id, error=self.error,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "key": self.key,
            "doc_id": self.doc_id,
            "benchmark": self.benchmark,
            "model_a": self.model_a,
            "model_b": self.model_b,
            "status": self.status,
            "trial1": None if self.trial1 is None else self.trial1.value,
            "trial2": None if self.trial2 is None else self.trial2.value,
            "score_a": self.score_a,
            "raw": list(self.raw),
            "explanations": list(self.explanations),
            "candidates": list(self.candidates),
            "transcripts": list(self.transcripts),
            "template_id": self.template_id,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BattleRecord":
        """Raises DataError on missing fields or values of the wrong type."""
        try:
            def verdict(v: Any) -> Optional[TrialVerdict]:
                return None if v is None else TrialVerdict(v)

            score = d.get("score_a")
            candidates = tuple(d.get("candidates") or (None, None))
            if len(candidates) != 2 or any(c is not None and not isinstance(c, str) for c in candidates):
                raise ValueError("candidates must be two strings")
            if score is not None and (isinstance(score, bool) or not isinstance(score, (int, float))):
                raise ValueError("score_a must be a number")
            record = cls(
                key=str(d["key"]),
                doc_id=str(d["doc_id"]),
                model_a=str(d["model_a"]),
                model_b=str(d["model_b"]),
                status=str(d["status"]),
                benchmark=d.get("benchmark"),
                trial1=verdict(d.get("trial1")),
                trial2=verdict(d.get("trial2")),
                score_a=None if score is None else float(score),
                raw=tuple(d.get("raw") or (None, None)),
                explanations=tuple(d.get("explanations") or (None, None)),
                candidates=candidates,
                transcripts=tuple(d.get("transcripts") or ("", "")),
                template_id=d.get("template_id"),
                error=d.get("error"),
            )
        except KeyError as e:
            raise DataError(f"battle record missing field {e}") from None
        except (TypeError, ValueError) as e:
            raise DataError(f"bad battle record: {e}") from None
        problems = record.problems()
        if problems:
            raise DataError(f"inconsistent battle record: {problems[0]}")
        return record


async def run_battle(task: ArenaTask, judge: Judge, store: TranscriptStore, template_id: str) -> BattleRecord:
    """Two judge calls, A first then B first. Raises TaskError if inputs are missing."""
    a = store.load(task.model_a, task.document.doc_id)
    b = store.load(task.model_b, task.document.doc_id)
    image, mime = task.document.load_image()
    request = JudgeRequest(image=image, first=a.text, second=b.text, template_id=template_id, image_mime=mime)
    base = dict(
        key=task.key, doc_id=task.document.doc_id, benchmark=task.document.benchmark,
        model_a=task.model_a, model_b=task.model_b,
        candidates=(a.text, b.text), transcripts=(a.digest, b.digest), template_id=template_id,
    )
    responses: List[JudgeResponse] = []
    try:
        for req in (request, request.swapped()):
            responses.append(await judge.judge(req))
    except JudgeError as e:
        logger.warning("battle %s failed on trial %d: %s", task.key[:12], len(responses) + 1, e)
        raw = ([r.raw for r in responses] + [e.raw, None])[:2]
        return BattleRecord(status=STATUS_FAILED, raw=tuple(raw), error=f"{type(e).__name__}: {e}", **base)

    first, second = responses
    return BattleRecord(
        status=STATUS_OK,
        trial1=first.verdict,
        trial2=second.verdict,
        score_a=combine_trials(first.verdict, second.verdict),
        raw=(first.raw, second.raw),
        explanations=(first.explanation, second.explanation),
        **base,
    )


@dataclass
class ArenaSummary:
    planned: int = 0
    new: int = 0
    skipped: int = 0
    failed: int = 0
    task_errors: List[Tuple[ArenaTask, str]] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.failed == 0 and not self.task_errors

    def lines(self) -> List[str]:
        out = [
            f"{self.new} new battles, {self.skipped} already complete, {self.failed} failed, "
            f"{len(self.task_errors)} skipped (of {self.planned} planned)"
        ]
        for task, reason in self.task_errors:
            out.append(f"  skip {task.document.doc_id} {task.model_a} vs {task.model_b}: {reason}")
        return out


async def run_arena(
    plan: PairingPlan,
    judge: Judge,
    log,
    store: TranscriptStore,
    *,
    template_id: str,
    jobs: int = 1,
    progress: bool = False,
) -> ArenaSummary:
    """Run every task the log does not already hold as ok, appending as battles finish."""
    done = log.completed_keys()
    todo = [t for t in plan.tasks if t.key not in done]
    summary = ArenaSummary(planned=len(plan), skipped=len(plan) - len(todo))
    logger.info("%d tasks planned, %d already complete", len(plan), summary.skipped)

    slots = asyncio.Semaphore(max(1, jobs))
    bar = tqdm(total=len(todo), desc="battles", disable=not progress)

    async def one(task: ArenaTask) -> None:
        async with slots:
            try:
                record = await run_battle(task, judge, store, template_id)
            except TaskError as e:
                summary.task_errors.append((task, str(e)))
                logger.error("task %s %s vs %s: %s", task.document.doc_id, task.model_a, task.model_b, e)
            else:
                log.append(record)
                if record.ok:
                    summary.new += 1
                else:
                    summary.failed += 1
            bar.update(1)

    try:
        await asyncio.gather(*(one(t) for t in todo))
    finally:
        bar.close()
    summary.task_errors.sort(key=lambda te: te[0].key)
    return summary


# =========================
# Leaderboard
# =========================
@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    model: str
    mean: float
    std: float
    low: float
    high: float
    battles: int
    wins: int
    ties: int
    losses: int

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class JudgeDiagnostics:
    consistent: int
    inconsistent: int  # both trials decisive but for different candidates
    ties: int          # at least one trial called a tie
    first_preference_rate: Optional[float]  # share of decisive trials picking the first slot

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class Leaderboard:
    rows: Tuple[LeaderboardRow, ...]
    diagnostics: JudgeDiagnostics
    iterations: int
    seed: int
    config: elo.EloConfig
    benchmark: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema": "mocr-leaderboard/1",
            "benchmark": self.benchmark,
            "iterations": self.iterations,
            "seed": self.seed,
            "elo": dict(self.config.__dict__),
            "diagnostics": self.diagnostics.to_dict(),
            "models": [r.to_dict() for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def format_table(self) -> str:
        width = max([len("model")] + [len(r.model) for r in self.rows])
        header = (f"{'#':>3}  {'model':<{width}}  {'elo':>7}  {'std':>6}  {'2.5%':>7}  {'97.5%':>7}"
                  f"  {'battles':>7}  {'W':>5}  {'T':>5}  {'L':>5}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r.rank:>3}  {r.model:<{width}}  {r.mean:>7.1f}  {r.std:>6.1f}  {r.low:>7.1f}  {r.high:>7.1f}"
                f"  {r.battles:>7}  {r.wins:>5}  {r.ties:>5}  {r.losses:>5}"
            )
        d = self.diagnostics
        rate = "n/a" if d.first_preference_rate is None else f"{d.first_preference_rate:.3f}"
        lines.append(
            f"judge: {d.consistent} consistent, {d.inconsistent} inconsistent, {d.ties} ties, "
            f"first-position preference {rate}"
        )
        return "\n".join(lines) + "\n"


def completed_records(records: Iterable[BattleRecord]) -> List[BattleRecord]:
    """Latest ok record per battle key, sorted by key so log order never matters."""
    latest: Dict[str, BattleRecord] = {}
    for r in records:
        if r.ok:
            latest[r.key] = r
    return [latest[k] for k in sorted(latest)]


def _diagnostics(records: Sequence[BattleRecord]) -> JudgeDiagnostics:
    consistent = sum(1 for r in records if r.score_a != 0.5)
    ties = sum(1 for r in records if TrialVerdict.TIE in (r.trial1, r.trial2))
    trials = [t for r in records for t in (r.trial1, r.trial2) if t != TrialVerdict.TIE]
    firsts = sum(1 for t in trials if t == TrialVerdict.FIRST)
    return JudgeDiagnostics(
        consistent=consistent,
        inconsistent=len(records) - consistent - ties,
        ties=ties,
        first_preference_rate=(firsts / len(trials)) if trials else None,
    )


def leaderboard(
    records: Iterable[BattleRecord],
    config: elo.EloConfig = elo.EloConfig(),
    iterations: int = 1000,
    seed: int = 0,
    *,
    benchmark: Optional[str] = None,
    progress: bool = False,
) -> Leaderboard:
    battles = completed_records(records)
    if not battles:
        raise NoBattlesError("no completed battles" + (f" for benchmark '{benchmark}'" if benchmark else ""))
    result = elo.bootstrap([r.outcome() for r in battles], config, iterations, seed, progress=progress)

    tally: Dict[str, List[int]] = {m: [0, 0, 0] for m in result.stats}
    for r in battles:
        a_slot = {1.0: 0, 0.5: 1, 0.0: 2}[r.score_a]
        tally[r.model_a][a_slot] += 1
        tally[r.model_b][2 - a_slot] += 1

    rows = tuple(
        LeaderboardRow(
            rank=i, model=m, mean=s.mean, std=s.std, low=s.low, high=s.high,
            battles=sum(tally[m]), wins=tally[m][0], ties=tally[m][1], losses=tally[m][2],
        )
        for i, (m, s) in enumerate(result.ranked(), start=1)
    )
    return Leaderboard(rows, _diagnostics(battles), iterations, seed, config, benchmark)


def leaderboard_by_benchmark(
    records: Iterable[BattleRecord],
    config: elo.EloConfig = elo.EloConfig(),
    iterations: int = 1000,
    seed: int = 0,
) -> Dict[str, Leaderboard]:
    groups: Dict[str, List[BattleRecord]] = {}
    for r in completed_records(records):
        if r.benchmark:
            groups.setdefault(r.benchmark, []).append(r)
    return {
        name: leaderboard(group, config, iterations, seed, benchmark=name)
        for name, group in sorted(groups.items())
    }
