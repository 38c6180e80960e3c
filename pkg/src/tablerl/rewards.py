"""Rule-based rewards: tag-format compliance and answer accuracy.

The format reward is a strict 0/1 check that a response is exactly one
``<think>...</think>`` block followed by one ``<answer>...</answer>`` block.
The accuracy reward compares the extracted answer against gold under a
configurable normalization (case folding, punctuation stripping, numeric
tolerance, multi-part reordering, true/false synonym classes). Both are pure
functions; the composite is a weighted sum.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import List, Optional, Tuple

_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_CANONICAL_RE = re.compile(
    r"\s*<think>(.+?)</think>\s*<answer>(.*?)</answer>\s*\Z", re.DOTALL
)

ENTAIL_SYNONYMS = {"yes", "true", "entail", "entailed", "supported", "correct"}
CONTRADICT_SYNONYMS = {"no", "false", "contradict", "refuted", "incorrect"}


@dataclass(frozen=True)
class MatchConfig:
    numeric_rel_tol: float = 1e-6
    strip_chars: str = ",$%€£\"'.!?;:()"
    case_insensitive: bool = True
    multi_answer_separator: str = "|"

    def __post_init__(self):
        if self.numeric_rel_tol < 0:
            raise ValueError("numeric_rel_tol must be >= 0")


@dataclass(frozen=True)
class RewardBreakdown:
    format: int
    accuracy: int
    total: float


def format_reward(text: str) -> int:
    """1 iff text is exactly <think>R</think><answer>A</answer> (whitespace
    outside the blocks allowed, think non-empty), else 0."""
    if text.count("<think>") != 1 or text.count("</think>") != 1:
        return 0
    if text.count("<answer>") != 1 or text.count("</answer>") != 1:
        return 0
    m = _CANONICAL_RE.fullmatch(text)
    if m is None:
        return 0
    if not m.group(1).strip():
        return 0
    return 1


def extract_answer(text: str) -> Optional[str]:
    """Inner text of the last <answer> block, trimmed; None when absent."""
    matches = _ANSWER_RE.findall(text)
    if not matches:
        return None
    return matches[-1].strip()


# canonical parts are tagged tuples so numbers, text, and fact-verification
# classes never collide
_NUM = "num"
_TEXT = "text"
_CLASS = "class"


def _canonical_part(part: str, config: MatchConfig):
    s = part.strip()
    if config.case_insensitive:
        s = s.lower()
    stripped = s.strip(config.strip_chars + " \t")
    # strip configured chars from the interior too (thousands commas, $ signs)
    inner = "".join(ch for ch in stripped if ch not in ",$%€£")
    if stripped in ENTAIL_SYNONYMS:
        return (_CLASS, "entail")
    if stripped in CONTRADICT_SYNONYMS:
        return (_CLASS, "contradict")
    if stripped == "neutral":
        return (_CLASS, "neutral")
    try:
        return (_NUM, Decimal(inner))
    except InvalidOperation:
        return (_TEXT, stripped)


def normalize_answer(raw: str, config: MatchConfig = MatchConfig()) -> tuple:
    """Canonical form: a sorted multiset of tagged parts, split on the
    configured separator."""
    parts = raw.split(config.multi_answer_separator)
    canon = [_canonical_part(p, config) for p in parts]
    return tuple(sorted(canon, key=lambda t: (t[0], str(t[1]))))


def _parts_match(a, b, config: MatchConfig) -> bool:
    if a[0] != b[0]:
        return False
    if a[0] != _NUM:
        return a[1] == b[1]
    x, y = float(a[1]), float(b[1])
    tol = config.numeric_rel_tol
    if y == 0.0:
        return abs(x) <= tol
    return abs(x - y) <= tol * abs(y)


def _multisets_match(pred: tuple, gold: tuple, config: MatchConfig) -> bool:
    if len(pred) != len(gold):
        return False
    remaining = list(gold)
    for p in pred:
        for i, g in enumerate(remaining):
            if _parts_match(p, g, config):
                del remaining[i]
                break
        else:
            return False
    return True


def answers_match(pred_raw: str, gold_raw: str, config: MatchConfig = MatchConfig()) -> bool:
    return _multisets_match(
        normalize_answer(pred_raw, config), normalize_answer(gold_raw, config), config
    )


def accuracy_reward(text: str, golds: List[str], config: MatchConfig = MatchConfig()) -> int:
    """1 iff the last <answer> block matches any gold; no block -> 0."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred = extract_answer(text)
    if pred is None:
        return 0
    return int(any(answers_match(pred, g, config) for g in golds))


def total_reward(
    text: str,
    golds: List[str],
    weights: Tuple[float, float] = (1.0, 1.0),
    config: MatchConfig = MatchConfig(),
) -> RewardBreakdown:
    """Weighted sum of the two components: total = w_acc*acc + w_fmt*fmt."""
    w_acc, w_fmt = weights
    if w_acc < 0 or w_fmt < 0:
        raise ValueError("reward weights must be non-negative")
    fmt = format_reward(text)
    acc = accuracy_reward(text, golds, config)
    return RewardBreakdown(format=fmt, accuracy=acc, total=w_acc * acc + w_fmt * fmt)
