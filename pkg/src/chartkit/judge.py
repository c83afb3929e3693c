"""LLM-judge prompting, score parsing, and per-candidate aggregation.

A judge call rates two anonymous candidate outputs on fixed 1-5 axes and must
answer in a keyed JSON object. Candidates are shown in a randomized order and
re-mapped back after parsing, so neither position nor identity can leak into
the scores.
"""

from __future__ import annotations

import ast
import enum
import json
import random
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .genclient import RetryPolicy, TokenBucket, Transport, send_envelope
from .metrics import EmptyInput

CANDIDATE_A = "candidate_a"
CANDIDATE_B = "candidate_b"
CANDIDATES = (CANDIDATE_A, CANDIDATE_B)

_TEMPLATE_DIR = Path(__file__).resolve().parent / "data" / "templates"
_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)

_SLOT_KEYS = ("summary 1", "summary 2")


class JudgeKind(str, enum.Enum):
    SUMMARY_RUBRIC = "SummaryRubric"
    OPEN_CQA_RUBRIC = "OpenCQARubric"


AXES: Mapping[JudgeKind, tuple[str, ...]] = {
    JudgeKind.SUMMARY_RUBRIC: ("Informativeness", "Factual Correctness", "Structure"),
    JudgeKind.OPEN_CQA_RUBRIC: ("Informativeness", "Factual Correctness", "Relevance"),
}

_TEMPLATE_FILES = {
    JudgeKind.SUMMARY_RUBRIC: "judge_summary.txt",
    JudgeKind.OPEN_CQA_RUBRIC: "judge_open_cqa.txt",
}

_SECTION_LABELS = {
    JudgeKind.SUMMARY_RUBRIC: "Summary",
    JudgeKind.OPEN_CQA_RUBRIC: "Answer",
}


class EmptyCandidate(Exception):
    """A judge task needs two non-empty candidate outputs."""


class JudgeFormatError(Exception):
    """Judge output is not the required JSON shape; raw text retained."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class ScoreOutOfRange(Exception):
    """A rubric score fell outside the integer 1-5 scale."""


@dataclass(frozen=True)
class JudgeTask:
    """One pairwise rating task with hidden model identities.

    ``presentation_order`` 0 shows candidate A first; 1 shows B first.
    """

    kind: JudgeKind
    output_a: str
    output_b: str
    presentation_order: int
    item_id: str = ""

    def __post_init__(self) -> None:
        if not self.output_a.strip() or not self.output_b.strip():
            raise EmptyCandidate(f"item {self.item_id!r}: both candidate outputs must be non-empty")
        if self.presentation_order not in (0, 1):
            raise ValueError("presentation_order must be 0 or 1")

    @property
    def axes(self) -> tuple[str, ...]:
        return AXES[self.kind]

    def presented(self) -> tuple[str, str]:
        if self.presentation_order == 0:
            return self.output_a, self.output_b
        return self.output_b, self.output_a


def make_tasks(
    kind: JudgeKind,
    pairs: Sequence[tuple[str, str, str]],
    seed: int,
) -> list[JudgeTask]:
    """Build tasks from (item_id, output_a, output_b) with seeded ordering."""
    rng = random.Random(seed)
    return [
        JudgeTask(
            kind=kind,
            output_a=a,
            output_b=b,
            presentation_order=rng.getrandbits(1),
            item_id=item_id,
        )
        for item_id, a, b in pairs
    ]


def build_judge_prompt(task: JudgeTask, template_dir: Path | None = None) -> str:
    """Render the rubric template with the two outputs in presentation order."""
    path = (template_dir or _TEMPLATE_DIR) / _TEMPLATE_FILES[task.kind]
    template = path.read_text(encoding="utf-8")
    first, second = task.presented()
    label = _SECTION_LABELS[task.kind]
    return f"{template}\n\n{label} 1:\n{first}\n\n{label} 2:\n{second}"


def _loads_tolerant(text: str) -> object:
    """JSON first; fall back to a literal parse for single-quoted output."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        raise JudgeFormatError("not parseable as JSON or a literal dict", text) from None


def _coerce_score(value: object, axis: str, raw: str) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise JudgeFormatError(f"score for {axis!r} is not a number", raw)
    if isinstance(value, float) and not value.is_integer():
        raise JudgeFormatError(f"score for {axis!r} is not an integer", raw)
    score = int(value)
    if not 1 <= score <= 5:
        raise ScoreOutOfRange(f"score {score} for {axis!r} outside 1..5")
    return score


@dataclass(frozen=True)
class JudgeScores:
    """Parsed, de-randomized axis scores for both candidates."""

    kind: JudgeKind
    per_candidate: dict[str, dict[str, int]]
    raw_json: str
    item_id: str = ""


def parse_judge_scores(
    raw: str,
    kind: JudgeKind,
    presentation_order: int = 0,
    item_id: str = "",
) -> JudgeScores:
    """Parse the judge's JSON reply and undo the presentation shuffle.

    The reply keys slots by display position ("summary 1"/"summary 2");
    ``presentation_order`` recorded at prompt-build time maps the slots back
    to candidates.
    """
    text = raw.strip()
    fence = _FENCE_RE.search(text)
    if fence:
        text = fence.group(1).strip()
    payload = _loads_tolerant(text)
    if not isinstance(payload, dict):
        raise JudgeFormatError("judge reply is not a JSON object", raw)
    normalized = {str(k).strip().casefold(): v for k, v in payload.items()}
    slots: list[dict[str, int]] = []
    for slot_key in _SLOT_KEYS:
        block = normalized.get(slot_key)
        if not isinstance(block, dict):
            raise JudgeFormatError(f"missing or malformed {slot_key!r} block", raw)
        block_normalized = {str(k).strip().casefold(): v for k, v in block.items()}
        scores: dict[str, int] = {}
        for axis in AXES[kind]:
            if axis.casefold() not in block_normalized:
                raise JudgeFormatError(f"{slot_key!r} missing axis {axis!r}", raw)
            scores[axis] = _coerce_score(block_normalized[axis.casefold()], axis, raw)
        slots.append(scores)
    first, second = slots
    if presentation_order == 0:
        per_candidate = {CANDIDATE_A: first, CANDIDATE_B: second}
    else:
        per_candidate = {CANDIDATE_A: second, CANDIDATE_B: first}
    return JudgeScores(kind=kind, per_candidate=per_candidate, raw_json=raw, item_id=item_id)


def aggregate(scores: Sequence[JudgeScores]) -> dict[str, dict[str, float]]:
    """Arithmetic mean per candidate per axis (unrounded)."""
    if not scores:
        raise EmptyInput("no judge scores to aggregate")
    sums: dict[str, dict[str, float]] = {c: {} for c in CANDIDATES}
    counts: dict[str, dict[str, int]] = {c: {} for c in CANDIDATES}
    for js in scores:
        for candidate, axis_scores in js.per_candidate.items():
            for axis, value in axis_scores.items():
                sums[candidate][axis] = sums[candidate].get(axis, 0.0) + value
                counts[candidate][axis] = counts[candidate].get(axis, 0) + 1
    return {
        candidate: {axis: sums[candidate][axis] / counts[candidate][axis] for axis in sums[candidate]}
        for candidate in CANDIDATES
    }


def judge_report(scores: Sequence[JudgeScores], kind: JudgeKind, n_excluded: int) -> dict:
    means = aggregate(scores) if scores else {c: {} for c in CANDIDATES}
    return {
        "kind": kind.value,
        "axes": list(AXES[kind]),
        "n_scored": len(scores),
        "n_excluded": n_excluded,
        "means": {
            candidate: {axis: round(value, 2) for axis, value in sorted(axis_means.items())}
            for candidate, axis_means in means.items()
        },
    }


def transcript_entry(task: JudgeTask, raw: str) -> dict:
    return {
        "item_id": task.item_id,
        "kind": task.kind.value,
        "presentation_order": task.presentation_order,
        "raw": raw,
    }


def scores_from_transcript(entries: Iterable[Mapping]) -> tuple[list[JudgeScores], int]:
    """Parse recorded judge replies; malformed entries count as exclusions."""
    scores: list[JudgeScores] = []
    excluded = 0
    for entry in entries:
        try:
            scores.append(
                parse_judge_scores(
                    entry["raw"],
                    JudgeKind(entry["kind"]),
                    int(entry["presentation_order"]),
                    item_id=str(entry.get("item_id", "")),
                )
            )
        except (JudgeFormatError, ScoreOutOfRange):
            excluded += 1
    return scores, excluded


def run_judge(
    tasks: Sequence[JudgeTask],
    transport: Transport,
    model_name: str,
    policy: RetryPolicy | None = None,
    limiter: TokenBucket | None = None,
) -> tuple[list[dict], list[JudgeScores], int]:
    """Call the judge model for each task; one re-ask on malformed output.

    Returns the raw transcript entries alongside parsed scores and the count
    of tasks excluded after the retry also failed to parse.
    """
    policy = policy or RetryPolicy()
    entries: list[dict] = []
    scores: list[JudgeScores] = []
    excluded = 0
    for task in tasks:
        prompt = build_judge_prompt(task)
        parsed: JudgeScores | None = None
        raw_text = ""
        for _ in range(2):  # malformed output gets exactly one re-ask
            request_id = f"judge-{task.item_id}"
            envelope = {
                "request_id": request_id,
                "model": model_name,
                "prompt": prompt,
                "image_b64": "",
            }
            resp = send_envelope(request_id, envelope, policy, transport, limiter=limiter)
            raw_text = resp.text or ""
            try:
                parsed = parse_judge_scores(raw_text, task.kind, task.presentation_order, task.item_id)
                break
            except (JudgeFormatError, ScoreOutOfRange):
                parsed = None
        entries.append(transcript_entry(task, raw_text))
        if parsed is None:
            excluded += 1
        else:
            scores.append(parsed)
    return entries, scores, excluded
