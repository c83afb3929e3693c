"""Validation of instruction records and the audit-sampling workflow.

Schema checks apply to every record; program-aided records additionally get
executed in the sandbox and their printed answer checked against the stored
final answer. The audit sheet supports the manual quality review: a seeded
sample is written out for human labeling and the label fractions summarized.
"""

from __future__ import annotations

import concurrent.futures
import csv
import enum
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .genclient import TaskKind
from .instructions import InstructionRecord, normalize_final_answer, schema_issues
from .metrics import MetricConfig, relaxed_match
from .sandbox import ProgramRun, SandboxConfig, extract_answer, run_program

AUDIT_LABELS = ("Correct", "PartiallyCorrect", "Incorrect")


class SampleTooLarge(Exception):
    """Requested audit sample exceeds the dataset size."""


class ExecStatus(str, enum.Enum):
    NOT_APPLICABLE = "NotApplicable"
    PASS = "Pass"
    EXECUTION_ERROR = "ExecutionError"
    TIMEOUT = "Timeout"
    ANSWER_MISMATCH = "AnswerMismatch"


class Verdict(str, enum.Enum):
    VALID = "Valid"
    INVALID = "Invalid"


_OK_STATUSES = (ExecStatus.NOT_APPLICABLE, ExecStatus.PASS)


@dataclass(frozen=True)
class ValidationReport:
    record_id: str
    schema_ok: bool
    exec_status: ExecStatus
    stdout: str
    stderr: str
    wall_ms: float
    verdict: Verdict

    def to_json(self) -> dict:
        return {
            "record_id": self.record_id,
            "schema_ok": self.schema_ok,
            "exec_status": self.exec_status.value,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "wall_ms": self.wall_ms,
            "verdict": self.verdict.value,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ValidationReport":
        return cls(
            record_id=obj["record_id"],
            schema_ok=obj["schema_ok"],
            exec_status=ExecStatus(obj["exec_status"]),
            stdout=obj["stdout"],
            stderr=obj["stderr"],
            wall_ms=obj["wall_ms"],
            verdict=Verdict(obj["verdict"]),
        )


def _build_report(record_id: str, schema_ok: bool, status: ExecStatus, run: ProgramRun | None) -> ValidationReport:
    verdict = Verdict.VALID if schema_ok and status in _OK_STATUSES else Verdict.INVALID
    return ValidationReport(
        record_id=record_id,
        schema_ok=schema_ok,
        exec_status=status,
        stdout=run.stdout if run else "",
        stderr=run.stderr if run else "",
        wall_ms=run.wall_ms if run else 0.0,
        verdict=verdict,
    )


def validate_record(
    rec: InstructionRecord,
    cfg: SandboxConfig | None = None,
    metric_cfg: MetricConfig | None = None,
) -> ValidationReport:
    """Validate one record: schema always, execution for program-aided kinds.

    The executed program's last non-empty stdout line, normalized, must pass
    the relaxed match against the record's final answer.
    """
    schema_ok = not schema_issues(rec)
    if rec.task_kind is not TaskKind.PROGRAM_AIDED_DESIGN or not rec.program_text:
        return _build_report(rec.record_id, schema_ok, ExecStatus.NOT_APPLICABLE, None)
    run = run_program(rec.program_text, cfg or SandboxConfig())
    if run.timed_out:
        return _build_report(rec.record_id, schema_ok, ExecStatus.TIMEOUT, run)
    if run.exit_code != 0:
        return _build_report(rec.record_id, schema_ok, ExecStatus.EXECUTION_ERROR, run)
    answer = extract_answer(run.stdout)
    if answer is None or rec.final_answer is None:
        return _build_report(rec.record_id, schema_ok, ExecStatus.ANSWER_MISMATCH, run)
    matched = relaxed_match(
        normalize_final_answer(answer), rec.final_answer, metric_cfg or MetricConfig()
    )
    status = ExecStatus.PASS if matched else ExecStatus.ANSWER_MISMATCH
    return _build_report(rec.record_id, schema_ok, status, run)


def validate_many(
    records: Sequence[InstructionRecord],
    cfg: SandboxConfig | None = None,
    metric_cfg: MetricConfig | None = None,
    jobs: int = 1,
) -> list[ValidationReport]:
    """Validate records with a bounded pool; output ordered by record_id."""
    if jobs <= 1:
        reports = [validate_record(r, cfg, metric_cfg) for r in records]
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(lambda r: validate_record(r, cfg, metric_cfg), records))
    return sorted(reports, key=lambda rep: rep.record_id)


@dataclass
class AuditSheet:
    """A fillable sheet over a seeded sample of records.

    The sample is a deterministic function of the record-id set, the sample
    size, and the seed, so two auditors generate the same sheet.
    """

    sample: list[str]
    n: int
    seed: int
    labels: dict[str, str] = field(default_factory=dict)

    def label(self, record_id: str, label: str) -> None:
        if label not in AUDIT_LABELS:
            raise ValueError(f"label must be one of {AUDIT_LABELS}, got {label!r}")
        if record_id not in self.sample:
            raise KeyError(f"{record_id} is not in this sheet's sample")
        self.labels[record_id] = label

    def summary(self) -> dict[str, float]:
        """Fractions of each label over the labeled rows; sums to 1."""
        labeled = [l for l in self.labels.values()]
        if not labeled:
            return {label: 0.0 for label in AUDIT_LABELS}
        return {label: labeled.count(label) / len(labeled) for label in AUDIT_LABELS}


def audit_sample(
    dataset: Sequence[InstructionRecord], n: int, seed: int
) -> AuditSheet:
    """Draw a deterministic uniform sample without replacement for auditing."""
    if n > len(dataset):
        raise SampleTooLarge(f"asked for {n} of {len(dataset)} records")
    ordered_ids = sorted(rec.record_id for rec in dataset)
    rng = random.Random(seed)
    return AuditSheet(sample=rng.sample(ordered_ids, n), n=n, seed=seed)


def write_audit_csv(
    sheet: AuditSheet, records: Iterable[InstructionRecord], path: str | Path
) -> None:
    by_id = {rec.record_id: rec for rec in records}
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["record_id", "task_kind", "input_text", "output_text", "label"])
        for record_id in sheet.sample:
            rec = by_id[record_id]
            writer.writerow(
                [record_id, rec.task_kind.value, rec.input_text, rec.output_text,
                 sheet.labels.get(record_id, "")]
            )


def read_audit_labels(path: str | Path) -> dict[str, str]:
    """Read back filled labels from an audit CSV; blank rows are skipped."""
    labels: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            label = (row.get("label") or "").strip()
            if not label:
                continue
            if label not in AUDIT_LABELS:
                raise ValueError(f"unknown audit label {label!r} for {row['record_id']}")
            labels[row["record_id"]] = label
    return labels
