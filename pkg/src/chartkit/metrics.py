"""Scoring of chart-model predictions.

Four scorers share one comparison primitive, ``relaxed_match``: numeric
answers pass within a relative tolerance of the gold value, everything else
must match exactly after light normalization. The tolerance default of 5%
follows the convention of the factoid chart-QA benchmarks this targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from . import mdtable
from .instructions import normalize_final_answer
from .sandbox import SandboxConfig, extract_answer, run_program


class EmptyInput(Exception):
    """A scorer was handed zero items."""


class UnknownGoldLabel(Exception):
    """A gold fact-checking label falls outside the configured label set."""


@dataclass(frozen=True)
class MetricConfig:
    """Numeric tolerance and normalization knobs shared by the scorers.

    ``epsilon`` is the relative tolerance on numeric answers: a prediction p
    is accepted for gold g when ``|p - g| <= epsilon * |g|``. A gold of
    exactly zero admits only an exact zero, since relative tolerance is
    undefined there.
    """

    epsilon: float = 0.05
    case_fold: bool = True

    def __post_init__(self) -> None:
        if not 0.0 <= self.epsilon < 1.0:
            raise ValueError(f"epsilon must be in [0, 1), got {self.epsilon}")


@dataclass(frozen=True)
class PredictionItem:
    item_id: str
    predicted: str
    gold: str
    split_tag: str | None = None
    program_text: str | None = None

    def __post_init__(self) -> None:
        if not self.gold:
            raise ValueError(f"item {self.item_id}: gold must be non-empty")

    @classmethod
    def from_json(cls, obj: Mapping) -> "PredictionItem":
        return cls(
            item_id=str(obj["item_id"]),
            predicted=str(obj.get("predicted", "")),
            gold=str(obj["gold"]),
            split_tag=obj.get("split_tag"),
            program_text=obj.get("program_text"),
        )


@dataclass(frozen=True)
class ItemVerdict:
    item_id: str
    correct: bool


@dataclass(frozen=True)
class MetricResult:
    """Aggregate score with its per-item breakdown.

    ``overall`` and the ``per_split`` entries are percentages; ``avg`` in
    per_split is the unweighted mean of the aug and human splits when both
    are present. Values are kept unrounded; rendering rounds to 2 d.p.
    """

    metric_name: str
    overall: float
    per_split: dict[str, float]
    per_item: list[ItemVerdict]

    def to_json(self) -> dict:
        return {
            "metric_name": self.metric_name,
            "overall": round(self.overall, 2),
            "per_split": {k: round(v, 2) for k, v in sorted(self.per_split.items())},
            "n_items": len(self.per_item),
            "per_item": [{"item_id": v.item_id, "correct": v.correct} for v in self.per_item],
        }


def _normalize(text: str, case_fold: bool) -> str:
    s = text.strip()
    if case_fold:
        s = s.casefold()
    s = s.rstrip(".").strip()
    if s.startswith("$"):
        s = s[1:].strip()
    while s.endswith("%"):
        s = s[:-1].strip()
    return s


def _to_float(s: str) -> float | None:
    # Non-finite parses ("nan", "inf") compare as plain strings; anything else
    # would break reflexivity (nan != nan).
    try:
        value = float(s)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _is_bracketed(s: str) -> bool:
    return len(s) >= 2 and s.startswith("[") and s.endswith("]")


def _scalar_match(pred: str, gold: str, epsilon: float) -> bool:
    p, g = _to_float(pred), _to_float(gold)
    if p is not None and g is not None:
        if g == 0.0:
            return p == 0.0
        return abs(p - g) <= epsilon * abs(g)
    return pred == gold


def relaxed_match(predicted: str, gold: str, cfg: MetricConfig | None = None) -> bool:
    """Relaxed comparison of a predicted answer string against the gold.

    Both sides are trimmed, case-folded, and stripped of trailing periods,
    a leading currency sign, and a trailing percent sign. Numbers compare
    within ``cfg.epsilon`` relative to the gold; bracketed lists compare
    element-wise (a bare scalar against a list is treated as a one-element
    list); everything else needs exact equality after normalization. The
    numeric branch is intentionally asymmetric: tolerance is relative to
    the gold side.
    """
    cfg = cfg or MetricConfig()
    p = _normalize(predicted, cfg.case_fold)
    g = _normalize(gold, cfg.case_fold)
    if _is_bracketed(p) or _is_bracketed(g):
        p_items = [e.strip() for e in p[1:-1].split(",")] if _is_bracketed(p) else [p]
        g_items = [e.strip() for e in g[1:-1].split(",")] if _is_bracketed(g) else [g]
        if len(p_items) != len(g_items):
            return False
        return all(_scalar_match(pi, gi, cfg.epsilon) for pi, gi in zip(p_items, g_items))
    return _scalar_match(p, g, cfg.epsilon)


def _result_from_verdicts(
    name: str, verdicts: list[ItemVerdict], tags: list[str | None]
) -> MetricResult:
    overall = 100.0 * sum(v.correct for v in verdicts) / len(verdicts)
    per_split: dict[str, float] = {}
    by_tag: dict[str, list[bool]] = {}
    for v, tag in zip(verdicts, tags):
        if tag is not None:
            by_tag.setdefault(tag, []).append(v.correct)
    for tag, flags in by_tag.items():
        per_split[tag] = 100.0 * sum(flags) / len(flags)
    if "aug" in per_split and "human" in per_split:
        per_split["avg"] = (per_split["aug"] + per_split["human"]) / 2.0
    return MetricResult(name, overall, per_split, verdicts)


def score_qa(items: Sequence[PredictionItem], cfg: MetricConfig | None = None) -> MetricResult:
    """Relaxed accuracy over QA items, reported per split plus their mean."""
    if not items:
        raise EmptyInput("score_qa needs at least one item")
    cfg = cfg or MetricConfig()
    verdicts = [ItemVerdict(it.item_id, relaxed_match(it.predicted, it.gold, cfg)) for it in items]
    return _result_from_verdicts("relaxed_accuracy", verdicts, [it.split_tag for it in items])


def score_fact_check(
    items: Sequence[PredictionItem],
    label_set: Iterable[str] = ("supports", "refutes"),
) -> MetricResult:
    """Exact label accuracy after case-folding."""
    if not items:
        raise EmptyInput("score_fact_check needs at least one item")
    labels = {l.strip().casefold() for l in label_set}
    verdicts = []
    for it in items:
        gold = it.gold.strip().casefold()
        if gold not in labels:
            raise UnknownGoldLabel(f"item {it.item_id}: gold label {it.gold!r} not in {sorted(labels)}")
        verdicts.append(ItemVerdict(it.item_id, it.predicted.strip().casefold() == gold))
    return _result_from_verdicts("label_accuracy", verdicts, [it.split_tag for it in items])


def score_pot(
    items: Sequence[PredictionItem],
    cfg: MetricConfig | None = None,
    sandbox: SandboxConfig | None = None,
) -> MetricResult:
    """Execute each item's program and score its printed answer.

    Programs that fail to run, time out, or print nothing count as incorrect
    rather than raising; only a broken sandbox environment propagates.
    """
    if not items:
        raise EmptyInput("score_pot needs at least one item")
    cfg = cfg or MetricConfig()
    sandbox = sandbox or SandboxConfig()
    verdicts = []
    for it in items:
        correct = False
        if it.program_text:
            run = run_program(it.program_text, sandbox)
            answer = extract_answer(run.stdout) if run.exit_code == 0 and not run.timed_out else None
            if answer is not None:
                correct = relaxed_match(normalize_final_answer(answer), it.gold, cfg)
        verdicts.append(ItemVerdict(it.item_id, correct))
    return _result_from_verdicts("pot_accuracy", verdicts, [it.split_tag for it in items])


@dataclass(frozen=True)
class TableScore:
    """Cell-level F1 between a predicted and a gold markdown table."""

    f1: float
    parse_failed: bool
    matched: int = 0
    predicted_cells: int = 0
    gold_cells: int = 0


def markdown_table_f1(
    predicted_md: str, gold_md: str, cfg: MetricConfig | None = None
) -> TableScore:
    """Positional cell-match F1 over (row, column) aligned table grids.

    Cells pair up by position; a pair counts as matched when relaxed_match
    accepts it. F1 = 2*matched / (predicted cells + gold cells). An
    unparseable side scores 0 with the parse_failed flag set.
    """
    cfg = cfg or MetricConfig()
    pred = mdtable.parse_table(predicted_md)
    gold = mdtable.parse_table(gold_md)
    if pred is None or gold is None:
        return TableScore(f1=0.0, parse_failed=True)
    matched = 0
    for prow, grow in zip(pred, gold):
        for pcell, gcell in zip(prow, grow):
            if relaxed_match(pcell, gcell, cfg):
                matched += 1
    n_pred = mdtable.cell_count(pred)
    n_gold = mdtable.cell_count(gold)
    denom = n_pred + n_gold
    f1 = (2.0 * matched / denom) if denom else 0.0
    return TableScore(
        f1=f1,
        parse_failed=False,
        matched=matched,
        predicted_cells=n_pred,
        gold_cells=n_gold,
    )
