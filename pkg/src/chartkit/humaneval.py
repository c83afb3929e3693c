"""Blinded human-rating study: assignment scheduling, rating persistence,
and agreement/significance statistics.

Model identities stay out of everything an annotator can see: items carry
anonymous candidate keys, and each served assignment shows the two outputs in
a per-(annotator, item) seeded order as plain positional responses.
"""

from __future__ import annotations

import enum
import itertools
import json
import math
import random
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Hashable, Iterable, Mapping, Sequence

from .jsonl import dumps_line, read_jsonl

CANDIDATE_A = "candidate_a"
CANDIDATE_B = "candidate_b"
CANDIDATES = (CANDIDATE_A, CANDIDATE_B)

# Rating axes mirror the summary judging rubric.
STUDY_AXES = ("Informativeness", "Factual Correctness", "Structure")

_EXACT_ENUMERATION_LIMIT = 20  # pooled size above which the normal approximation kicks in


class DegenerateMarginals(Exception):
    """Chance agreement is 1; kappa is undefined."""


class UnknownAnnotator(Exception):
    """Annotator id not enrolled in the study."""


class DuplicateRating(Exception):
    """This (item, annotator) pair already has a stored rating."""


class IncompleteScores(Exception):
    """A rating is missing axes or has scores outside 1..5."""


@dataclass(frozen=True)
class AgreementStats:
    """Observed agreement, chance agreement, and Cohen's kappa."""

    p_o: float
    p_e: float
    kappa: float

    def to_json(self) -> dict:
        return {"p_o": self.p_o, "p_e": self.p_e, "kappa": self.kappa}


def cohen_kappa(ratings_a: Sequence[Hashable], ratings_b: Sequence[Hashable]) -> AgreementStats:
    """Chance-corrected agreement between two aligned label sequences.

    p_o is the fraction of positions where the labels agree; p_e is the
    agreement expected from the two raters' marginal label distributions;
    kappa = (p_o - p_e) / (1 - p_e).
    """
    if len(ratings_a) != len(ratings_b):
        raise ValueError("rating sequences must be aligned")
    n = len(ratings_a)
    if n == 0:
        raise ValueError("rating sequences must be non-empty")
    p_o = sum(a == b for a, b in zip(ratings_a, ratings_b)) / n
    marg_a = Counter(ratings_a)
    marg_b = Counter(ratings_b)
    p_e = sum((marg_a[c] / n) * (marg_b[c] / n) for c in set(marg_a) | set(marg_b))
    if p_e >= 1.0:
        raise DegenerateMarginals("both raters used a single identical label")
    return AgreementStats(p_o=p_o, p_e=p_e, kappa=(p_o - p_e) / (1.0 - p_e))


class RankMethod(str, enum.Enum):
    EXACT = "Exact"
    NORMAL_APPROX = "NormalApprox"


@dataclass(frozen=True)
class RankTest:
    """Mann-Whitney U for the first sample with its two-sided p-value."""

    u: float
    p_value: float
    method: RankMethod

    def to_json(self) -> dict:
        return {"u": self.u, "p_value": self.p_value, "method": self.method.value}


def _double_u(sample_x: Sequence[float], sample_y: Sequence[float]) -> int:
    """2*U_X by direct pair counting; ties contribute 1 (i.e. one half each)."""
    twice = 0
    for x in sample_x:
        for y in sample_y:
            if x > y:
                twice += 2
            elif x == y:
                twice += 1
    return twice


def _midranks_doubled(pooled: Sequence[float]) -> list[int]:
    """Twice the midrank of each pooled value (integers even under ties)."""
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    doubled = [0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j < len(order) and pooled[order[j]] == pooled[order[i]]:
            j += 1
        # ranks are 1-based; tied block shares the average rank
        rank2 = (i + 1) + (j + 1 - 1)  # 2 * (first_rank + last_rank) / 2
        for k in range(i, j):
            doubled[order[k]] = rank2
        i = j
    return doubled


def _exact_two_sided_p(sample_x: Sequence[float], sample_y: Sequence[float], double_u_obs: int) -> float:
    """Enumerate every assignment of the pooled values to group X.

    Works on doubled rank sums so ties never leave integer arithmetic; the
    two-sided p-value is the fraction of assignments at least as far from the
    null mean as the observed U.
    """
    n1, n2 = len(sample_x), len(sample_y)
    pooled = list(sample_x) + list(sample_y)
    doubled = _midranks_doubled(pooled)
    dev_obs = abs(double_u_obs - n1 * n2)
    offset = n1 * (n1 + 1)  # 2U = 2R - n1(n1+1)
    count = 0
    total = 0
    for combo in itertools.combinations(range(len(pooled)), n1):
        double_u = sum(doubled[i] for i in combo) - offset
        if abs(double_u - n1 * n2) >= dev_obs:
            count += 1
        total += 1
    return count / total


def _normal_two_sided_p(
    sample_x: Sequence[float], sample_y: Sequence[float], u: float
) -> float:
    n1, n2 = len(sample_x), len(sample_y)
    n = n1 + n2
    mean = n1 * n2 / 2.0
    tie_term = sum(t**3 - t for t in Counter(list(sample_x) + list(sample_y)).values())
    variance = (n1 * n2 / 12.0) * ((n + 1) - tie_term / (n * (n - 1)))
    if variance <= 0.0:
        return 1.0  # every pooled value tied
    z = (abs(u - mean) - 0.5) / math.sqrt(variance)  # continuity correction
    z = max(z, 0.0)
    return min(1.0, math.erfc(z / math.sqrt(2.0)))


def mann_whitney_u(sample_x: Sequence[float], sample_y: Sequence[float]) -> RankTest:
    """Two-sided Mann-Whitney U test.

    U counts cross-sample pairs won by X, ties counting one half. Small
    pooled samples get the exact permutation p-value; larger ones a normal
    approximation with tie-corrected variance and continuity correction.
    """
    if not sample_x or not sample_y:
        raise ValueError("both samples must be non-empty")
    double_u = _double_u(sample_x, sample_y)
    u = double_u / 2.0
    if len(sample_x) + len(sample_y) <= _EXACT_ENUMERATION_LIMIT:
        return RankTest(u=u, p_value=_exact_two_sided_p(sample_x, sample_y, double_u), method=RankMethod.EXACT)
    return RankTest(u=u, p_value=_normal_two_sided_p(sample_x, sample_y, u), method=RankMethod.NORMAL_APPROX)


# --------------------------------------------------------------------------
# Study, assignments, and the rating store
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StudyItem:
    item_id: str
    chart_image: str
    candidates: dict[str, str]  # candidate key -> output text

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "chart_image": self.chart_image,
            "candidates": self.candidates,
        }


@dataclass(frozen=True)
class AnnotationItem:
    """One blinded assignment: positional responses, no candidate keys."""

    item_id: str
    chart_image: str
    responses: tuple[str, str]
    axes: tuple[str, ...]
    position: int
    total: int


@dataclass(frozen=True)
class AnnotationRecord:
    """One stored rating event, de-randomized to candidate keys."""

    item_id: str
    annotator_id: str
    scores: dict[str, dict[str, int]]  # candidate -> axis -> score
    timestamp: str

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "annotator_id": self.annotator_id,
            "scores": self.scores,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AnnotationRecord":
        return cls(
            item_id=obj["item_id"],
            annotator_id=obj["annotator_id"],
            scores={c: dict(v) for c, v in obj["scores"].items()},
            timestamp=obj["timestamp"],
        )


def check_scores(scores: Mapping[str, Mapping[str, object]], axes: Sequence[str]) -> None:
    """Every candidate needs every axis with an integer score in 1..5."""
    for candidate in CANDIDATES:
        block = scores.get(candidate)
        if block is None:
            raise IncompleteScores(f"missing scores for {candidate}")
        for axis in axes:
            value = block.get(axis)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise IncompleteScores(f"{candidate}/{axis}: score must be an integer in 1..5")


class Study:
    """A loaded study directory: enrolled annotators, items, scheduling.

    Per-annotator item order and per-(annotator, item) presentation order are
    deterministic functions of the study seed, so a restarted service hands
    out identical assignments.
    """

    def __init__(self, seed: int, annotators: Sequence[str], items: Sequence[StudyItem]):
        if len(set(i.item_id for i in items)) != len(items):
            raise ValueError("duplicate item ids in study")
        self.seed = seed
        self.annotators = tuple(annotators)
        self.items = tuple(sorted(items, key=lambda i: i.item_id))
        self._by_id = {item.item_id: item for item in self.items}
        self.axes = STUDY_AXES

    @classmethod
    def load(cls, study_dir: str | Path) -> "Study":
        study_dir = Path(study_dir)
        with open(study_dir / "config.json", "r", encoding="utf-8") as f:
            config = json.load(f)
        items = [
            StudyItem(
                item_id=obj["item_id"],
                chart_image=obj["chart_image"],
                candidates={c: obj["candidates"][c] for c in CANDIDATES},
            )
            for obj in read_jsonl(study_dir / "items.jsonl")
        ]
        return cls(seed=int(config["seed"]), annotators=config["annotators"], items=items)

    def item(self, item_id: str) -> StudyItem:
        return self._by_id[item_id]

    def require_annotator(self, annotator_id: str) -> None:
        if annotator_id not in self.annotators:
            raise UnknownAnnotator(f"annotator {annotator_id!r} is not enrolled")

    def order_for(self, annotator_id: str) -> list[str]:
        self.require_annotator(annotator_id)
        ids = [item.item_id for item in self.items]
        rng = random.Random(f"{self.seed}:{annotator_id}")
        rng.shuffle(ids)
        return ids

    def presentation_order(self, annotator_id: str, item_id: str) -> int:
        rng = random.Random(f"{self.seed}:{annotator_id}:{item_id}")
        return rng.getrandbits(1)


class RatingStore:
    """Append-only rating log with serialized writes.

    Every mutation goes through one lock and lands as one JSONL line before
    the in-memory index updates, so a crash can lose at most the rating being
    written and never corrupts earlier ones.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._records: dict[tuple[str, str], AnnotationRecord] = {}
        if self.path.exists():
            for obj in read_jsonl(self.path):
                rec = AnnotationRecord.from_json(obj)
                self._records[(rec.item_id, rec.annotator_id)] = rec

    def __len__(self) -> int:
        return len(self._records)

    def has(self, item_id: str, annotator_id: str) -> bool:
        return (item_id, annotator_id) in self._records

    def rated_items(self, annotator_id: str) -> set[str]:
        return {item for item, annot in self._records if annot == annotator_id}

    def records(self) -> list[AnnotationRecord]:
        return [self._records[k] for k in sorted(self._records)]

    def submit(self, rec: AnnotationRecord, axes: Sequence[str] = STUDY_AXES) -> None:
        check_scores(rec.scores, axes)
        with self._lock:
            key = (rec.item_id, rec.annotator_id)
            if key in self._records:
                raise DuplicateRating(f"{rec.annotator_id} already rated {rec.item_id}")
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(dumps_line(rec.to_json()))
                f.write("\n")
            self._records[key] = rec


def next_assignment(study: Study, store: RatingStore, annotator_id: str) -> AnnotationItem | None:
    """The annotator's next unrated item, or None once the study is done."""
    order = study.order_for(annotator_id)
    rated = store.rated_items(annotator_id)
    for position, item_id in enumerate(order):
        if item_id in rated:
            continue
        item = study.item(item_id)
        bit = study.presentation_order(annotator_id, item_id)
        first, second = (CANDIDATE_A, CANDIDATE_B) if bit == 0 else (CANDIDATE_B, CANDIDATE_A)
        return AnnotationItem(
            item_id=item_id,
            chart_image=item.chart_image,
            responses=(item.candidates[first], item.candidates[second]),
            axes=study.axes,
            position=len(rated),
            total=len(order),
        )
    return None


def submit_positional_rating(
    study: Study,
    store: RatingStore,
    annotator_id: str,
    item_id: str,
    positional_scores: Mapping[str, Mapping[str, int]],
    timestamp: str,
) -> AnnotationRecord:
    """Store a rating given in display positions, mapped back to candidates."""
    study.require_annotator(annotator_id)
    if item_id not in {i.item_id for i in study.items}:
        raise KeyError(f"unknown item {item_id!r}")
    first_block = positional_scores.get("response_1")
    second_block = positional_scores.get("response_2")
    if first_block is None or second_block is None:
        raise IncompleteScores("scores must cover response_1 and response_2")
    bit = study.presentation_order(annotator_id, item_id)
    if bit == 0:
        scores = {CANDIDATE_A: dict(first_block), CANDIDATE_B: dict(second_block)}
    else:
        scores = {CANDIDATE_A: dict(second_block), CANDIDATE_B: dict(first_block)}
    rec = AnnotationRecord(
        item_id=item_id, annotator_id=annotator_id, scores=scores, timestamp=timestamp
    )
    store.submit(rec, study.axes)
    return rec


def study_stats(study: Study, store: RatingStore) -> dict:
    """Per-candidate means, inter-annotator kappa, and per-axis rank tests."""
    records = store.records()
    stats: dict = {
        "n_items": len(study.items),
        "n_annotators": len(study.annotators),
        "n_ratings": len(records),
        "complete": len(records) == len(study.items) * len(study.annotators),
        "axes": list(study.axes),
        "means": {},
        "kappa": None,
        "mann_whitney": {},
    }
    if not records:
        return stats

    for candidate in CANDIDATES:
        stats["means"][candidate] = {}
        for axis in study.axes:
            values = [r.scores[candidate][axis] for r in records]
            stats["means"][candidate][axis] = sum(values) / len(values)

    if len(study.annotators) >= 2:
        first, second = study.annotators[:2]
        by_key = {(r.item_id, r.annotator_id): r for r in records}
        pooled_a: list[int] = []
        pooled_b: list[int] = []
        per_axis: dict[str, tuple[list[int], list[int]]] = {axis: ([], []) for axis in study.axes}
        for item in study.items:
            rec_a = by_key.get((item.item_id, first))
            rec_b = by_key.get((item.item_id, second))
            if rec_a is None or rec_b is None:
                continue
            for candidate in CANDIDATES:
                for axis in study.axes:
                    pooled_a.append(rec_a.scores[candidate][axis])
                    pooled_b.append(rec_b.scores[candidate][axis])
                    per_axis[axis][0].append(rec_a.scores[candidate][axis])
                    per_axis[axis][1].append(rec_b.scores[candidate][axis])
        if pooled_a:
            kappa_block: dict = {}
            try:
                kappa_block["pooled"] = cohen_kappa(pooled_a, pooled_b).to_json()
            except DegenerateMarginals:
                kappa_block["pooled"] = None
            kappa_block["per_axis"] = {}
            for axis, (seq_a, seq_b) in per_axis.items():
                try:
                    kappa_block["per_axis"][axis] = cohen_kappa(seq_a, seq_b).to_json()
                except DegenerateMarginals:
                    kappa_block["per_axis"][axis] = None
            stats["kappa"] = kappa_block

    for axis in study.axes:
        xs = [r.scores[CANDIDATE_A][axis] for r in records]
        ys = [r.scores[CANDIDATE_B][axis] for r in records]
        stats["mann_whitney"][axis] = mann_whitney_u(xs, ys).to_json()
    return stats


def write_study(
    study_dir: str | Path,
    items: Iterable[StudyItem],
    annotators: Sequence[str],
    seed: int,
    model_names: Mapping[str, str] | None = None,
) -> None:
    """Materialize a study directory.

    Model names, when given, go to a separate models.json that the serving
    side never reads; the annotator-facing files carry only candidate keys.
    """
    study_dir = Path(study_dir)
    study_dir.mkdir(parents=True, exist_ok=True)
    (study_dir / "charts").mkdir(exist_ok=True)
    with open(study_dir / "config.json", "w", encoding="utf-8") as f:
        json.dump({"seed": seed, "annotators": list(annotators)}, f, indent=2, sort_keys=True)
        f.write("\n")
    with open(study_dir / "items.jsonl", "w", encoding="utf-8") as f:
        for item in items:
            f.write(dumps_line(item.to_json()))
            f.write("\n")
    if model_names is not None:
        with open(study_dir / "models.json", "w", encoding="utf-8") as f:
            json.dump(dict(model_names), f, indent=2, sort_keys=True)
            f.write("\n")
