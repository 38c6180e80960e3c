import csv
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablerl.rewards import (
    MatchConfig,
    RewardBreakdown,
    accuracy_reward,
    answers_match,
    extract_answer,
    format_reward,
    normalize_answer,
    total_reward,
)

GOLDEN = Path(__file__).parent / "data" / "golden_rewards.csv"


def golden_rows():
    with open(GOLDEN, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("row", golden_rows(), ids=lambda r: r["raw"][:40])
def test_golden_vectors(row):
    assert format_reward(row["raw"]) == int(row["expected_format"])
    assert accuracy_reward(row["raw"], [row["gold"]]) == int(row["expected_accuracy"])


def test_golden_file_has_enough_coverage():
    assert len(golden_rows()) >= 40


class TestFormatReward:
    def test_canonical(self):
        assert format_reward("<think>x</think><answer>y</answer>") == 1

    def test_order_violation(self):
        assert format_reward("<answer>y</answer><think>x</think>") == 0

    # exhaustive malformed-variant table: every tag presence/order/extras
    # combination other than the canonical one scores 0
    _T, _TC, _A, _AC = "<think>x</think>", "</think>", "<answer>y</answer>", "</answer>"
    MALFORMED = [
        "",
        "x",
        "<think>x</think>",
        "<answer>y</answer>",
        "<think>x",
        "<answer>y",
        "x</think><answer>y</answer>",
        "<think>x<answer>y</answer>",
        "<answer>y</answer><think>x</think>",
        "<think>x</think><think>z</think><answer>y</answer>",
        "<think>x</think><answer>y</answer><answer>z</answer>",
        "<think>x</think><answer>y</answer><think>z</think>",
        "pre<think>x</think><answer>y</answer>",
        "<think>x</think>mid<answer>y</answer>",
        "<think>x</think><answer>y</answer>post",
        "<think></think><answer>y</answer>",
        "<think>   </think><answer>y</answer>",
        "<think>x</think><answer>y",
        "<answer>y</answer>",
    ]

    @pytest.mark.parametrize("text", MALFORMED)
    def test_malformed_variants_all_zero(self, text):
        assert format_reward(text) == 0

    def test_whitespace_outside_blocks_allowed(self):
        assert format_reward("  <think>x</think>\n<answer>y</answer>\n") == 1


class TestExtractAnswer:
    def test_trimmed(self):
        assert extract_answer("<think>a</think><answer> 42 </answer>") == "42"

    def test_absent(self):
        assert extract_answer("no tags") is None

    def test_last_block_wins(self):
        text = "<answer>1</answer><answer>2</answer>"
        assert extract_answer(text) == "2"

    def test_extraction_independent_of_format(self):
        # scoring stays possible even when the format reward is 0
        assert extract_answer("junk <answer>42</answer> junk") == "42"


class TestNormalize:
    def test_comma_number(self):
        assert answers_match("1,234.50", "1234.5")

    def test_synonym_fold(self):
        assert answers_match("Yes.", "true")
        assert answers_match("no", "refuted")
        assert not answers_match("yes", "false")

    def test_multi_answer_order_insensitive(self):
        assert answers_match("b | a", "a|b")
        assert not answers_match("a|a", "a|b")

    def test_duplicate_parts_are_multiset(self):
        assert not answers_match("a|a|b", "a|b|b")

    def test_numeric_tolerance_relative(self):
        cfg = MatchConfig(numeric_rel_tol=1e-3)
        assert answers_match("1000.5", "1000", cfg)
        assert not answers_match("1002", "1000", cfg)

    def test_gold_zero_uses_absolute_tolerance(self):
        assert answers_match("0.0000005", "0")
        assert not answers_match("0.1", "0")

    def test_normalize_is_canonical(self):
        assert normalize_answer("42") == normalize_answer(" 42.0 ")


class TestTotalReward:
    def test_perfect_response(self):
        br = total_reward("<think>x</think><answer>42</answer>", ["42"])
        assert br == RewardBreakdown(format=1, accuracy=1, total=2.0)

    def test_correct_answer_without_tags(self):
        br = total_reward("42", ["42"])
        assert br.accuracy == 0 and br.format == 0 and br.total == 0.0

    def test_wrong_answer_perfect_tags(self):
        br = total_reward("<think>x</think><answer>41</answer>", ["42"])
        assert br == RewardBreakdown(format=1, accuracy=0, total=1.0)

    def test_weights_scale_components(self):
        br = total_reward("<think>x</think><answer>42</answer>", ["42"],
                          weights=(2.0, 0.5))
        assert br.total == 2.5

    def test_negative_weights_rejected(self):
        with pytest.raises(ValueError):
            total_reward("x", ["y"], weights=(-1.0, 1.0))

    def test_monotone_in_components(self):
        # given non-negative weights, flipping a component up never lowers total
        wrong = total_reward("<think>x</think><answer>1</answer>", ["2"]).total
        right = total_reward("<think>x</think><answer>2</answer>", ["2"]).total
        assert right >= wrong


@given(st.text(max_size=80))
@settings(max_examples=200, deadline=None)
def test_rewards_are_pure_and_binary(text):
    assert format_reward(text) in (0, 1)
    assert accuracy_reward(text, ["42"]) in (0, 1)
    assert format_reward(text) == format_reward(text)


@given(st.lists(st.sampled_from(["a", "b", "42", "c d"]), min_size=1, max_size=4))
@settings(max_examples=100, deadline=None)
def test_accuracy_invariant_under_part_reordering(parts):
    import random

    gold = "|".join(parts)
    shuffled = list(parts)
    random.Random(0).shuffle(shuffled)
    pred = f"<think>t</think><answer>{'|'.join(shuffled)}</answer>"
    assert accuracy_reward(pred, [gold]) == 1


@given(st.sampled_from(["Paris", "TRUE", "Alice Smith", "EQUAL"]))
def test_accuracy_case_insensitive(word):
    pred = f"<think>t</think><answer>{word.lower()}</answer>"
    assert accuracy_reward(pred, [word]) == 1
