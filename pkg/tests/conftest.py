from __future__ import annotations

import io
import json
import random
import sys
from pathlib import Path

import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from chartkit import genclient, humaneval
from chartkit.genclient import GenerationRequest, RawResponse, TaskKind, transcript_entry

FIXTURE_DIR = Path(__file__).parent / "fixtures"
FIXED_TIMESTAMP = "2024-07-01T00:00:00Z"

JUDGE_MODEL_NAMES = {"candidate_a": "alpha-chart-3b", "candidate_b": "beta-chart-13b"}


def tiny_png(tag: str, size: tuple[int, int] = (32, 24)) -> bytes:
    """Deterministic small PNG whose bytes depend only on the tag."""
    rng = random.Random(f"png:{tag}")
    img = Image.new("RGB", size, (rng.randrange(256), rng.randrange(256), rng.randrange(256)))
    pixels = img.load()
    for _ in range(8):
        x, y = rng.randrange(size[0]), rng.randrange(size[1])
        pixels[x, y] = (rng.randrange(256), rng.randrange(256), rng.randrange(256))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def write_chart_dir(directory: Path, n: int, tag: str = "chart") -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        path = directory / f"{tag}-{i:03d}.png"
        path.write_bytes(tiny_png(f"{tag}-{i}"))
        paths.append(path)
    return paths


# ------------------------------------------------------------- transcripts


def _pad_payload(chart_id: str, n_items: int) -> list[dict]:
    rng = random.Random(f"pad:{chart_id}")
    items = []
    for i in range(n_items):
        a, b = rng.randrange(1, 50), rng.randrange(1, 50)
        items.append(
            {
                "input": f"What is the sum of the first two bars in chart {chart_id} (q{i})?",
                "program of thought": f"values = [{a}, {b}]\nprint(values[0] + values[1])",
                "final answer": str(a + b),
            }
        )
    return items


def _open_payload(chart_id: str, n_items: int) -> list[dict]:
    types = ["Trend Analysis", "Data Comparison", "Chart Critique", "Data Visualization"]
    return [
        {
            "task type": types[i % len(types)],
            "input": f"Describe aspect {i} of chart {chart_id}.",
            "expected output": f"Aspect {i} of the chart shows a steady rise.",
        }
        for i in range(n_items)
    ]


def _plain_payload(chart_id: str, kind: TaskKind, n_items: int) -> list[dict]:
    return [
        {
            "input": f"{kind.value} question {i} about chart {chart_id}?",
            "expected output": f"{kind.value} answer {i} for {chart_id}.",
        }
        for i in range(n_items)
    ]


def response_payload(chart_id: str, kind: TaskKind, n_items: int = 2) -> list[dict]:
    if kind is TaskKind.PROGRAM_AIDED_DESIGN:
        return _pad_payload(chart_id, n_items)
    if kind is TaskKind.OPEN_ENDED:
        return _open_payload(chart_id, n_items)
    return _plain_payload(chart_id, kind, n_items)


def build_transcript(
    manifest,
    kinds: tuple[TaskKind, ...] = (TaskKind.COT, TaskKind.PROGRAM_AIDED_DESIGN),
    items_per_task: int = 2,
    model: str = "gemini-1.5-flash",
) -> list[dict]:
    """Synthetic but fully deterministic generation transcript for a corpus."""
    entries = []
    for rec in manifest.records:
        for kind in kinds:
            req = GenerationRequest.create(rec.chart_id, kind, rec.image_path, model)
            text = json.dumps(response_payload(rec.chart_id, kind, items_per_task))
            resp = RawResponse(req.request_id, text, 12.0, 1, 200)
            entries.append(transcript_entry(req, resp, FIXED_TIMESTAMP))
    return entries


# ------------------------------------------------------------------ judge


def pew_row_scores(index: int) -> tuple[dict, dict]:
    """Axis scores for item ``index`` of the 100-item judge fixture.

    Candidate A means come out to (4.09, 4.36, 3.85) and candidate B to
    (3.38, 3.09, 3.65) over the full fixture.
    """
    a = {
        "Informativeness": 5 if index < 9 else 4,
        "Factual Correctness": 5 if index < 36 else 4,
        "Structure": 4 if index < 85 else 3,
    }
    b = {
        "Informativeness": 4 if index < 38 else 3,
        "Factual Correctness": 4 if index < 9 else 3,
        "Structure": 4 if index < 65 else 3,
    }
    return a, b


def build_judge_transcript(n_items: int = 100, seed: int = 17) -> list[dict]:
    """Replay transcript whose de-randomized means hit the engineered values."""
    rng = random.Random(seed)
    entries = []
    for i in range(n_items):
        a_scores, b_scores = pew_row_scores(i)
        bit = rng.getrandbits(1)
        first, second = (a_scores, b_scores) if bit == 0 else (b_scores, a_scores)
        raw = json.dumps({"summary 1": first, "summary 2": second}, indent=1)
        if i % 10 == 3:
            raw = f"```json\n{raw}\n```"
        entries.append(
            {
                "item_id": f"web-{i:03d}",
                "kind": "SummaryRubric",
                "presentation_order": bit,
                "raw": raw,
            }
        )
    return entries


# ------------------------------------------------------------------ study


def make_study_dir(base: Path, n_items: int = 10, seed: int = 11) -> Path:
    """A 2-annotator fixture study with charts and anonymous candidates."""
    study_dir = base / "study"
    items = []
    for i in range(n_items):
        items.append(
            humaneval.StudyItem(
                item_id=f"item-{i:03d}",
                chart_image=f"chart-{i:03d}.png",
                candidates={
                    "candidate_a": f"The series climbs steadily and peaks near point {i}.",
                    "candidate_b": f"Values fall after point {i}, ending below the start.",
                },
            )
        )
    humaneval.write_study(
        study_dir,
        items,
        annotators=["anno-1", "anno-2"],
        seed=seed,
        model_names=JUDGE_MODEL_NAMES,
    )
    for i in range(n_items):
        (study_dir / "charts" / f"chart-{i:03d}.png").write_bytes(tiny_png(f"study-{i}"))
    return study_dir


def deterministic_scores(annotator: str, item_id: str) -> dict[str, dict[str, int]]:
    """Plausible 1-5 ratings, fixed per (annotator, item), with disagreement."""
    scores = {}
    for candidate in ("candidate_a", "candidate_b"):
        block = {}
        for axis in humaneval.STUDY_AXES:
            rng = random.Random(f"score:{annotator}:{item_id}:{candidate}:{axis}")
            base = 4 if candidate == "candidate_a" else 3
            block[axis] = min(5, max(1, base + rng.choice([-1, 0, 0, 1])))
        scores[candidate] = block
    return scores


@pytest.fixture
def chart_dir(tmp_path: Path) -> Path:
    directory = tmp_path / "charts"
    write_chart_dir(directory, 6)
    return directory


@pytest.fixture
def study_dir(tmp_path: Path) -> Path:
    return make_study_dir(tmp_path)
