"""Parsing of raw model responses into structured instruction records.

Repair of malformed JSON is deliberately limited to two mechanical fixes
(markdown fence stripping and trailing-comma removal); anything else fails
hard and keeps the raw text for audit, because silently over-repairing
generated data would poison the training set downstream.
"""

from __future__ import annotations

import enum
import hashlib
import json
import re
from dataclasses import dataclass
from typing import Any, Mapping

from .genclient import RawResponse, TaskKind

# The open-ended "task type" field is free-form; it is bucketed into these
# categories by exact (case-insensitive) match, everything else -> Others.
OPEN_TASK_CATEGORIES = (
    "Trend Analysis",
    "Data Comparison",
    "Data Interpretation",
    "Data Visualization",
    "Others",
)

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n(.*?)```", re.DOTALL)
_TRAILING_COMMA_RE = re.compile(r",(\s*[}\]])")

_UNIT_SUFFIXES = ("years", "people", "million", "billion")


class UnparseableResponse(Exception):
    """Response text is not JSON even after the repair ladder."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class SchemaViolation(Exception):
    """Parsed JSON lacks the fields the task kind requires."""

    def __init__(self, message: str, raw_text: str):
        super().__init__(message)
        self.raw_text = raw_text


class RepairApplied(str, enum.Enum):
    NONE = "None"
    FENCE_STRIPPED = "FenceStripped"
    TRAILING_COMMA_FIXED = "TrailingCommaFixed"
    BOTH = "Both"


@dataclass(frozen=True)
class GeneratorInfo:
    """Provenance of a generated record."""

    model_name: str
    template_version: str
    timestamp: str

    def to_json(self) -> dict:
        return {
            "model_name": self.model_name,
            "template_version": self.template_version,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "GeneratorInfo":
        return cls(obj["model_name"], obj["template_version"], obj["timestamp"])


@dataclass(frozen=True)
class InstructionRecord:
    """One synthesized (input, output) instruction pair.

    Program-aided records carry both the program and its final answer, with
    the program doubling as the training target; all other kinds carry
    neither. Open-ended records carry their bucketed task type.
    """

    record_id: str
    chart_id: str
    task_kind: TaskKind
    input_text: str
    output_text: str
    generator: GeneratorInfo
    program_text: str | None = None
    final_answer: str | None = None
    open_task_type: str | None = None

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "chart_id": self.chart_id,
            "task_kind": self.task_kind.value,
            "input_text": self.input_text,
            "output_text": self.output_text,
            "program_text": self.program_text,
            "final_answer": self.final_answer,
            "open_task_type": self.open_task_type,
            "generator": self.generator.to_json(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "InstructionRecord":
        rec = cls(
            record_id=obj["record_id"],
            chart_id=obj["chart_id"],
            task_kind=TaskKind(obj["task_kind"]),
            input_text=obj["input_text"],
            output_text=obj["output_text"],
            program_text=obj.get("program_text"),
            final_answer=obj.get("final_answer"),
            open_task_type=obj.get("open_task_type"),
            generator=GeneratorInfo.from_json(obj["generator"]),
        )
        issues = schema_issues(rec)
        if issues:
            raise SchemaViolation("; ".join(issues), json.dumps(dict(obj)))
        return rec


def schema_issues(rec: InstructionRecord) -> list[str]:
    """Return every task-kind invariant the record violates (empty if none)."""
    issues = []
    if not rec.input_text:
        issues.append("input_text is empty")
    if not rec.output_text:
        issues.append("output_text is empty")
    is_pad = rec.task_kind is TaskKind.PROGRAM_AIDED_DESIGN
    if is_pad:
        if not rec.program_text:
            issues.append("program-aided record missing program_text")
        if not rec.final_answer:
            issues.append("program-aided record missing final_answer")
    else:
        if rec.program_text is not None:
            issues.append(f"{rec.task_kind.value} record must not carry program_text")
        if rec.final_answer is not None:
            issues.append(f"{rec.task_kind.value} record must not carry final_answer")
    if rec.task_kind is TaskKind.OPEN_ENDED:
        if rec.open_task_type not in OPEN_TASK_CATEGORIES:
            issues.append("open-ended record missing a bucketed open_task_type")
    elif rec.open_task_type is not None:
        issues.append(f"{rec.task_kind.value} record must not carry open_task_type")
    return issues


@dataclass(frozen=True)
class ParseOutcome:
    records: list[InstructionRecord]
    repair_applied: RepairApplied


def _record_id(chart_id: str, kind: TaskKind, index: int, input_text: str) -> str:
    joined = "\x1f".join([chart_id, kind.value, str(index), input_text])
    return hashlib.sha256(joined.encode("utf-8")).hexdigest()[:16]


def _fix_trailing_commas(text: str) -> str:
    return _TRAILING_COMMA_RE.sub(r"\1", text)


def _extract_payload(text: str) -> tuple[Any, RepairApplied]:
    fence = _FENCE_RE.search(text)
    candidates: list[tuple[str, RepairApplied]] = [(text, RepairApplied.NONE)]
    if fence:
        candidates.append((fence.group(1), RepairApplied.FENCE_STRIPPED))
    candidates.append((_fix_trailing_commas(text), RepairApplied.TRAILING_COMMA_FIXED))
    if fence:
        candidates.append((_fix_trailing_commas(fence.group(1)), RepairApplied.BOTH))
    for candidate, repair in candidates:
        try:
            return json.loads(candidate), repair
        except json.JSONDecodeError:
            continue
    raise UnparseableResponse("no JSON payload found after repair ladder", text)


def _as_answer_text(value: Any) -> str:
    """Coerce a JSON answer value to its canonical string form."""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "Yes" if value else "No"
    if isinstance(value, (int, float)):
        return str(value)
    if isinstance(value, list):
        return "[" + ", ".join(_as_answer_text(v) for v in value) + "]"
    return json.dumps(value)


def bucket_open_task_type(raw: str) -> str:
    label = raw.strip().casefold()
    for category in OPEN_TASK_CATEGORIES[:-1]:
        if label == category.casefold():
            return category
    return "Others"


def _require(item: Mapping, key: str, raw_text: str) -> Any:
    if key not in item or item[key] in (None, ""):
        raise SchemaViolation(f"missing required field {key!r}", raw_text)
    return item[key]


def parse_response(
    raw: RawResponse,
    kind: TaskKind,
    chart_id: str,
    generator: GeneratorInfo,
) -> ParseOutcome:
    """Parse one raw response into instruction records.

    Record ids are deterministic in (chart, kind, index, input text), so the
    same transcript always parses to the same records.
    """
    if raw.text is None:
        raise ValueError(f"response {raw.request_id} has no text to parse")
    payload, repair = _extract_payload(raw.text)
    if isinstance(payload, Mapping):
        payload = [payload]
    if not isinstance(payload, list):
        raise SchemaViolation(f"expected a JSON array, got {type(payload).__name__}", raw.text)

    records: list[InstructionRecord] = []
    for index, item in enumerate(payload):
        if not isinstance(item, Mapping):
            raise SchemaViolation(f"element {index} is not an object", raw.text)
        input_text = str(_require(item, "input", raw.text))
        program_text = final_answer = open_task_type = None
        if kind is TaskKind.PROGRAM_AIDED_DESIGN:
            program_text = str(_require(item, "program of thought", raw.text))
            final_answer = _as_answer_text(_require(item, "final answer", raw.text))
            output_text = program_text
        elif kind is TaskKind.OPEN_ENDED:
            open_task_type = bucket_open_task_type(str(_require(item, "task type", raw.text)))
            output_text = _as_answer_text(_require(item, "expected output", raw.text))
        else:
            output_text = _as_answer_text(_require(item, "expected output", raw.text))
        rec = InstructionRecord(
            record_id=_record_id(chart_id, kind, index, input_text),
            chart_id=chart_id,
            task_kind=kind,
            input_text=input_text,
            output_text=output_text,
            program_text=program_text,
            final_answer=final_answer,
            open_task_type=open_task_type,
            generator=generator,
        )
        issues = schema_issues(rec)
        if issues:
            raise SchemaViolation("; ".join(issues), raw.text)
        records.append(rec)
    return ParseOutcome(records=records, repair_applied=repair)


def _strip_units(s: str) -> str:
    if s.startswith("$"):
        s = s[1:].lstrip()
    if s.endswith("%"):
        s = s[:-1].rstrip()
    lowered = s.casefold()
    for unit in _UNIT_SUFFIXES:
        if lowered == unit:
            return ""
        if lowered.endswith(" " + unit):
            return s[: -(len(unit) + 1)].rstrip()
    return s


def _normalize_scalar(s: str) -> str:
    while True:
        before = s
        s = s.strip().rstrip(".").strip()
        s = _strip_units(s)
        if s == before:
            break
    if s.casefold() in ("yes", "no"):
        s = s.casefold()
    return s


def normalize_final_answer(text: str) -> str:
    """Canonicalize a final answer for comparison.

    Trims whitespace and trailing periods, strips percent/currency signs and
    a small fixed list of unit words, case-folds yes/no, and renders lists in
    bracketed comma form. Idempotent by construction (applied to a fixed
    point).
    """
    s = text.strip()
    if len(s) >= 2 and s.startswith("[") and s.endswith("]"):
        elements = [_normalize_scalar(e) for e in s[1:-1].split(",")]
        return "[" + ", ".join(elements) + "]"
    return _normalize_scalar(s)
