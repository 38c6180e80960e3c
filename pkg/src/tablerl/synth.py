"""Synthetic table-QA tasks with brute-force oracle answers.

Each task is a small random table (one text key column plus numeric columns),
a templated natural-language question, a gold answer, and a finite candidate
set (gold plus distractors). Questions are generated from fixed templates, so
``oracle_answer`` can recover the asked-about headers/keys from the question
text alone and recompute the answer by scanning the table, independently of
any generation-time state.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from .determinism import derive_seed
from .rewards import MatchConfig, answers_match
from .tables import Cell, Instance, Table, canonical_decimal_str


class QuestionKind(str, Enum):
    lookup = "lookup"
    column_sum = "column_sum"
    column_mean = "column_mean"
    column_max = "column_max"
    column_min = "column_min"
    count_where = "count_where"
    compare_two_cells = "compare_two_cells"
    fact_verify = "fact_verify"


AGGREGATE_KINDS = {
    QuestionKind.column_sum: "sum",
    QuestionKind.column_mean: "mean",
    QuestionKind.column_max: "maximum",
    QuestionKind.column_min: "minimum",
}

KEY_HEADER = "name"
_NUMERIC_HEADERS = [
    "score", "count", "price", "rating", "total",
    "units", "points", "weight", "size", "level",
]
_KEYS = [
    "alice", "bob", "carol", "dave", "erin", "frank", "grace", "heidi",
    "ivan", "judy", "mallory", "niaj", "olivia", "peggy", "rupert", "sybil",
]

MAX_CANDIDATES = 16
_DISTRACTOR_TARGET = 5


@dataclass(eq=False)  # identity-hashed so feature caches can key on tasks
class SyntheticTask:
    """A benchmark instance plus its finite candidate-answer set."""

    instance: Instance
    kind: QuestionKind
    candidates: List[str]
    gold_index: int

    def __post_init__(self):
        if not (2 <= len(self.candidates) <= MAX_CANDIDATES):
            raise ValueError("need between 2 and 16 candidates")
        if not (0 <= self.gold_index < len(self.candidates)):
            raise ValueError("gold_index out of range")


# --- question templates (oracle_answer parses these back) ----------------

_TEMPLATES = {
    QuestionKind.lookup: "What is the {col} of {key}?",
    QuestionKind.column_sum: "What is the sum of the {col} column?",
    QuestionKind.column_mean: "What is the mean of the {col} column?",
    QuestionKind.column_max: "What is the maximum value in the {col} column?",
    QuestionKind.column_min: "What is the minimum value in the {col} column?",
    QuestionKind.count_where: "How many rows have a {col} greater than {threshold}?",
    QuestionKind.compare_two_cells: "Which has the larger {col}: {key_a} or {key_b}?",
    QuestionKind.fact_verify: "The {col} of {key} is {value}.",
}

_PATTERNS = {
    QuestionKind.lookup: re.compile(r"What is the (\w+) of (\w+)\?"),
    QuestionKind.column_sum: re.compile(r"What is the sum of the (\w+) column\?"),
    QuestionKind.column_mean: re.compile(r"What is the mean of the (\w+) column\?"),
    QuestionKind.column_max: re.compile(r"What is the maximum value in the (\w+) column\?"),
    QuestionKind.column_min: re.compile(r"What is the minimum value in the (\w+) column\?"),
    QuestionKind.count_where: re.compile(r"How many rows have a (\w+) greater than (\d+)\?"),
    QuestionKind.compare_two_cells: re.compile(r"Which has the larger (\w+): (\w+) or (\w+)\?"),
    QuestionKind.fact_verify: re.compile(r"The (\w+) of (\w+) is ([\d.]+)\."),
}


def _mean_str(values: List[Decimal]) -> str:
    # rendered to <=2 decimal places, trailing zeros stripped; the matcher
    # compares numerically so formatting never decides correctness
    mean = sum(values) / Decimal(len(values))
    return canonical_decimal_str(mean.quantize(Decimal("0.01")))


def _column_index(table: Table, header: str) -> int:
    return list(table.headers).index(header)


def _row_index(table: Table, key: str) -> int:
    for i, row in enumerate(table.rows):
        if row[0].value == key:
            return i
    raise ValueError(f"key {key!r} not in table")


def _numeric_column(table: Table, header: str) -> List[Decimal]:
    j = _column_index(table, header)
    return [row[j].value for row in table.rows]


def oracle_answer(task: SyntheticTask) -> str:
    """Recompute the gold answer by brute-force scan of the table, using only
    the question text and the table (no generation-time state)."""
    q = task.instance.question
    table = task.instance.table
    kind = task.kind
    m = _PATTERNS[kind].fullmatch(q)
    if m is None:
        raise ValueError(f"question does not match the {kind.value} template: {q!r}")

    if kind == QuestionKind.lookup:
        col, key = m.groups()
        cell = table.rows[_row_index(table, key)][_column_index(table, col)]
        return cell.render()
    if kind in (QuestionKind.column_sum, QuestionKind.column_max, QuestionKind.column_min):
        values = _numeric_column(table, m.group(1))
        agg = {
            QuestionKind.column_sum: sum,
            QuestionKind.column_max: max,
            QuestionKind.column_min: min,
        }[kind](values)
        return canonical_decimal_str(Decimal(agg))
    if kind == QuestionKind.column_mean:
        return _mean_str(_numeric_column(table, m.group(1)))
    if kind == QuestionKind.count_where:
        col, threshold = m.groups()
        values = _numeric_column(table, col)
        return str(sum(1 for v in values if v > Decimal(threshold)))
    if kind == QuestionKind.compare_two_cells:
        col, key_a, key_b = m.groups()
        j = _column_index(table, col)
        va = table.rows[_row_index(table, key_a)][j].value
        vb = table.rows[_row_index(table, key_b)][j].value
        if va == vb:
            return "equal"  # tie rule
        return key_a if va > vb else key_b
    if kind == QuestionKind.fact_verify:
        col, key, value = m.groups()
        cell = table.rows[_row_index(table, key)][_column_index(table, col)]
        return "true" if cell.value == Decimal(value) else "false"
    raise AssertionError(f"unhandled kind {kind}")


def _random_table(rng: random.Random, n_rows: int, n_cols: int) -> Table:
    headers = [KEY_HEADER] + rng.sample(_NUMERIC_HEADERS, n_cols - 1)
    keys = rng.sample(_KEYS, n_rows)
    rows = []
    for key in keys:
        row = [Cell(key)] + [Cell(Decimal(rng.randint(0, 99))) for _ in range(n_cols - 1)]
        rows.append(row)
    return Table(headers=headers, rows=rows)


def _distractors(
    rng: random.Random,
    gold: str,
    table: Table,
    col: str,
    kind: QuestionKind,
    match_config: MatchConfig,
) -> List[str]:
    pool: List[str] = []
    j = _column_index(table, col)
    # other cells in the queried column
    for row in table.rows:
        pool.append(row[j].render())
    # aggregates of the other numeric columns
    for h in table.headers[1:]:
        if h == col:
            continue
        values = _numeric_column(table, h)
        pool.append(canonical_decimal_str(Decimal(sum(values))))
        pool.append(canonical_decimal_str(Decimal(max(values))))
    # gold +/- small perturbations when gold is numeric
    try:
        g = Decimal(gold)
        for delta in (1, -1, 2, 10, -3):
            pool.append(canonical_decimal_str(g + delta))
    except Exception:
        pool.append(gold + "x")
    rng.shuffle(pool)

    chosen: List[str] = []
    taken = [gold]
    for cand in pool:
        if len(chosen) >= _DISTRACTOR_TARGET:
            break
        if any(answers_match(cand, t, match_config) for t in taken):
            continue
        chosen.append(cand)
        taken.append(cand)
    return chosen


def generate_task(
    seed: int,
    kind: QuestionKind,
    n_rows: int = 5,
    n_cols: int = 4,
    dataset: str = "synthetic",
    task_id: Optional[str] = None,
    match_config: MatchConfig = MatchConfig(),
) -> SyntheticTask:
    """Deterministically generate one task; gold comes from oracle_answer."""
    if not (2 <= n_rows <= 10 and 2 <= n_cols <= 6):
        raise ValueError("n_rows in [2,10], n_cols in [2,6]")
    rng = random.Random(derive_seed("task", seed, kind.value))
    table = _random_table(rng, n_rows, n_cols)
    col = rng.choice(table.headers[1:])
    keys = [row[0].value for row in table.rows]

    if kind == QuestionKind.lookup:
        question = _TEMPLATES[kind].format(col=col, key=rng.choice(keys))
    elif kind in AGGREGATE_KINDS:
        question = _TEMPLATES[kind].format(col=col)
    elif kind == QuestionKind.count_where:
        question = _TEMPLATES[kind].format(col=col, threshold=rng.randint(10, 90))
    elif kind == QuestionKind.compare_two_cells:
        key_a, key_b = rng.sample(keys, 2)
        question = _TEMPLATES[kind].format(col=col, key_a=key_a, key_b=key_b)
    elif kind == QuestionKind.fact_verify:
        key = rng.choice(keys)
        true_value = table.rows[_row_index(table, key)][_column_index(table, col)].value
        if rng.random() < 0.5:
            value = true_value
        else:
            value = (true_value + rng.randint(1, 9)) % 100
        question = _TEMPLATES[kind].format(
            col=col, key=key, value=canonical_decimal_str(Decimal(value))
        )
    else:
        raise AssertionError(kind)

    task_type = "fact_verification" if kind == QuestionKind.fact_verify else "qa"
    tid = task_id or f"synth-{kind.value}-{seed}"
    probe = SyntheticTask(
        instance=Instance(
            id=tid, dataset=dataset, table=table, question=question,
            gold_answers=("pending",), task_type="qa",
        ),
        kind=kind, candidates=["pending", "x"], gold_index=0,
    )
    gold = oracle_answer(probe)

    if kind == QuestionKind.compare_two_cells:
        m = _PATTERNS[kind].fullmatch(question)
        candidates = list(dict.fromkeys([m.group(2), m.group(3), "equal"]))
    elif kind == QuestionKind.fact_verify:
        candidates = ["true", "false"]
    else:
        candidates = [gold] + _distractors(rng, gold, table, col, kind, match_config)
    rng.shuffle(candidates)
    gold_index = next(
        i for i, c in enumerate(candidates) if answers_match(c, gold, match_config)
    )

    instance = Instance(
        id=tid, dataset=dataset, table=table, question=question,
        gold_answers=(gold,), task_type=task_type,
    )
    return SyntheticTask(
        instance=instance, kind=kind, candidates=candidates, gold_index=gold_index
    )


def make_suite(
    seed: int,
    n: int,
    kind_mix: Optional[Dict[QuestionKind, float]] = None,
    dataset: str = "synthetic",
) -> List[SyntheticTask]:
    """n tasks with kinds sampled per weights; sub-seeds derived per task."""
    if kind_mix is None:
        kind_mix = {k: 1.0 for k in QuestionKind}
    kinds = sorted(kind_mix, key=lambda k: k.value)
    weights = [kind_mix[k] for k in kinds]
    if any(w < 0 for w in weights) or sum(weights) <= 0:
        raise ValueError("weights must be non-negative with positive sum")
    rng = random.Random(derive_seed("suite", seed))
    tasks = []
    for i in range(n):
        kind = rng.choices(kinds, weights=weights)[0]
        sub_seed = rng.randrange(2**31)
        tasks.append(
            generate_task(
                seed=sub_seed,
                kind=kind,
                n_rows=rng.randint(3, 8),
                n_cols=rng.randint(3, 5),
                dataset=dataset,
                task_id=f"{dataset}-{i:05d}-{kind.value}",
            )
        )
    return tasks


# --- suite export/import (instance JSONL + candidates sidecar) -----------


def save_candidates(tasks: List[SyntheticTask], path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(
                json.dumps(
                    {
                        "id": t.instance.id,
                        "candidates": t.candidates,
                        "gold_index": t.gold_index,
                        "kind": t.kind.value,
                    },
                    sort_keys=True,
                )
                + "\n"
            )
    return len(tasks)


def load_suite(instances_path, candidates_path) -> List[SyntheticTask]:
    from .tables import load_instances

    instances = {i.id: i for i in load_instances(instances_path)}
    tasks = []
    with open(candidates_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            inst = instances[obj["id"]]
            tasks.append(
                SyntheticTask(
                    instance=inst,
                    kind=QuestionKind(obj["kind"]),
                    candidates=list(obj["candidates"]),
                    gold_index=int(obj["gold_index"]),
                )
            )
    return tasks
