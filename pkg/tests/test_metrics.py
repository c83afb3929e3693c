from __future__ import annotations

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chartkit.metrics import (
    EmptyInput,
    MetricConfig,
    PredictionItem,
    UnknownGoldLabel,
    markdown_table_f1,
    relaxed_match,
    score_fact_check,
    score_pot,
    score_qa,
)
from chartkit.sandbox import SandboxConfig

from reference import relaxed_reference


def item(i, predicted, gold, tag=None, program=None):
    return PredictionItem(f"i{i}", predicted, gold, split_tag=tag, program_text=program)


class TestRelaxedMatch:
    @pytest.mark.parametrize(
        "pred,gold,expected",
        [
            ("104", "100", True),
            ("106", "100", False),
            ("105", "100", True),
            ("95", "100", True),
            ("100", "95", False),  # tolerance is relative to gold
            ("Yes.", "yes", True),
            ("17%", "17", True),
            ("$40", "40", True),
            ("0", "0", True),
            ("0.001", "0", False),
            ("0", "0.00", True),
            ("[1.04, 2]", "[1, 2]", True),
            ("[1, 2, 3]", "[1, 2]", False),
            ("[5]", "5", True),
            ("paris", "Paris", True),
            ("blue", "red", False),
            ("3,000", "3000", False),  # thousands separators are not parsed
        ],
    )
    def test_examples(self, pred, gold, expected):
        assert relaxed_match(pred, gold) is expected

    def test_epsilon_is_configurable(self):
        assert relaxed_match("110", "100", MetricConfig(epsilon=0.1))
        assert not relaxed_match("110", "100", MetricConfig(epsilon=0.05))

    def test_epsilon_bounds(self):
        with pytest.raises(ValueError):
            MetricConfig(epsilon=1.0)
        with pytest.raises(ValueError):
            MetricConfig(epsilon=-0.1)

    @given(st.text(max_size=25))
    def test_reflexive(self, text):
        assert relaxed_match(text, text or "x") or text == ""

    @given(st.text(min_size=1, max_size=20), st.text(min_size=1, max_size=20))
    def test_string_branch_symmetric(self, a, b):
        cfg = MetricConfig()
        try:
            float(a.strip().rstrip("."))
            float(b.strip().rstrip("."))
            numeric = True
        except ValueError:
            numeric = False
        if not numeric and "[" not in a + b:
            assert relaxed_match(a, b, cfg) == relaxed_match(b, a, cfg)

    @settings(max_examples=500)
    @given(
        pred=st.one_of(
            st.text(max_size=15),
            st.floats(-1e6, 1e6).map(lambda f: f"{f:.3f}"),
            st.integers(-10_000, 10_000).map(str),
        ),
        gold=st.one_of(
            st.text(min_size=1, max_size=15),
            st.floats(-1e6, 1e6).map(lambda f: f"{f:.3f}"),
            st.integers(-10_000, 10_000).map(str),
        ),
    )
    def test_agrees_with_reference(self, pred, gold):
        assert relaxed_match(pred, gold) == relaxed_reference(pred, gold)


class TestScoreQa:
    def test_table_shaped_splits(self):
        items = [item(i, "1" if i < 9 else "2", "1", tag="aug") for i in range(10)]
        items += [item(10 + i, "1" if i < 7 else "2", "1", tag="human") for i in range(10)]
        result = score_qa(items)
        assert result.per_split["aug"] == pytest.approx(90.0)
        assert result.per_split["human"] == pytest.approx(70.0)
        assert result.per_split["avg"] == pytest.approx(80.0)
        assert result.overall == pytest.approx(80.0)

    def test_all_correct(self):
        items = [item(i, "7", "7", tag="aug") for i in range(4)]
        items += [item(9 + i, "7", "7", tag="human") for i in range(4)]
        result = score_qa(items)
        assert result.overall == 100.0
        assert set(result.per_split) == {"aug", "human", "avg"}
        assert all(v == 100.0 for v in result.per_split.values())

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            score_qa([])

    def test_permutation_invariant(self):
        rng = random.Random(5)
        items = [item(i, str(rng.randrange(4)), "2", tag=rng.choice(["aug", "human"])) for i in range(60)]
        base = score_qa(items)
        shuffled = items[:]
        rng.shuffle(shuffled)
        again = score_qa(shuffled)
        assert again.overall == pytest.approx(base.overall)
        assert again.per_split == pytest.approx(base.per_split)

    def test_untagged_items_count_toward_overall_only(self):
        items = [item(0, "1", "1"), item(1, "2", "1", tag="aug")]
        result = score_qa(items)
        assert result.overall == pytest.approx(50.0)
        assert result.per_split == {"aug": 0.0}


class TestScoreFactCheck:
    def test_two_of_three(self):
        items = [
            item(0, "supports", "supports"),
            item(1, "refutes", "supports"),
            item(2, "Supports", "supports"),
        ]
        result = score_fact_check(items)
        assert round(result.overall, 2) == 66.67

    def test_case_insensitive_labels(self):
        result = score_fact_check([item(0, "Supports", "supports")])
        assert result.overall == 100.0

    def test_unknown_gold_label(self):
        with pytest.raises(UnknownGoldLabel):
            score_fact_check([item(0, "supports", "maybe")])

    def test_custom_label_set(self):
        items = [item(0, "entailed", "entailed")]
        assert score_fact_check(items, ("entailed", "contradicted")).overall == 100.0


class TestScorePot:
    def test_printed_answer_scored(self, tmp_path):
        sandbox = SandboxConfig(workdir=str(tmp_path))
        items = [
            item(0, "", "42", program="print(42)"),
            item(1, "", "40", program="print(41)"),  # 2.5% off, within 5%
            item(2, "", "7", program="print(undeclared)"),  # error -> incorrect
            item(3, "", "7", program=None),  # nothing to run -> incorrect
        ]
        result = score_pot(items, sandbox=sandbox)
        verdicts = {v.item_id: v.correct for v in result.per_item}
        assert verdicts == {"i0": True, "i1": True, "i2": False, "i3": False}

    def test_matches_score_qa_on_printed_answers(self, tmp_path):
        sandbox = SandboxConfig(workdir=str(tmp_path))
        rng = random.Random(2)
        pot_items, qa_items = [], []
        for i in range(6):
            value = rng.randrange(100)
            gold = str(value if i % 2 else value + 1)
            pot_items.append(item(i, "", gold, program=f"print({value})"))
            qa_items.append(item(i, str(value), gold))
        pot = score_pot(pot_items, sandbox=sandbox)
        qa = score_qa(qa_items)
        assert [v.correct for v in pot.per_item] == [v.correct for v in qa.per_item]


GOLD_TABLE = """| City | Value |
| --- | --- |
| Oslo | 10 |
"""

PRED_MISSING_ROW = """| City | Value |
| --- | --- |
"""


class TestMarkdownTableF1:
    def test_identical_tables(self):
        assert markdown_table_f1(GOLD_TABLE, GOLD_TABLE).f1 == 1.0

    def test_missing_row(self):
        score = markdown_table_f1(PRED_MISSING_ROW, GOLD_TABLE)
        assert round(score.f1, 3) == 0.667
        assert (score.matched, score.predicted_cells, score.gold_cells) == (2, 2, 4)

    def test_not_a_table(self):
        score = markdown_table_f1("no pipes here", GOLD_TABLE)
        assert score.f1 == 0.0
        assert score.parse_failed

    def test_numeric_cells_use_relaxed_match(self):
        pred = GOLD_TABLE.replace("| Oslo | 10 |", "| Oslo | 10.4 |")
        assert markdown_table_f1(pred, GOLD_TABLE).f1 == 1.0
        pred = GOLD_TABLE.replace("| Oslo | 10 |", "| Oslo | 11 |")
        assert markdown_table_f1(pred, GOLD_TABLE).f1 < 1.0

    def test_fenced_table_parses(self):
        fenced = f"Sure:\n```\n{GOLD_TABLE}```\n"
        assert markdown_table_f1(fenced, GOLD_TABLE).f1 == 1.0

    @given(
        rows=st.integers(1, 4),
        cols=st.integers(1, 4),
        seed=st.integers(0, 10_000),
    )
    def test_self_match_is_one(self, rows, cols, seed):
        rng = random.Random(seed)
        header = "| " + " | ".join(f"h{c}" for c in range(cols)) + " |"
        sep = "| " + " | ".join("---" for _ in range(cols)) + " |"
        body = [
            "| " + " | ".join(str(rng.randrange(100)) for _ in range(cols)) + " |"
            for _ in range(rows)
        ]
        table = "\n".join([header, sep, *body])
        assert markdown_table_f1(table, table).f1 == 1.0
