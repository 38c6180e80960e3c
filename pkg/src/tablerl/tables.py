"""Structured tables, markdown serialization, and benchmark instance I/O.

A table is a rectangular grid of cells under a single header row. Cells hold
text, an exact decimal number, or nothing. Numbers are kept as
``decimal.Decimal`` so markdown round-trips and answer matching stay exact.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterator, Optional, Sequence, Union

CellValue = Union[str, Decimal, None]

_NUMBER_RE = re.compile(r"-?\d+(\.\d+)?")


class MalformedTable(ValueError):
    """Markdown text that does not form a valid pipe table."""

    def __init__(self, line: int, reason: str):
        self.line = line
        self.reason = reason
        super().__init__(f"line {line}: {reason}")


class SchemaError(ValueError):
    """A JSONL instance line violating the canonical schema."""

    def __init__(self, line: int, field_name: str, reason: str = ""):
        self.line = line
        self.field = field_name
        msg = f"line {line}: bad field {field_name!r}"
        if reason:
            msg += f" ({reason})"
        super().__init__(msg)


class InsufficientData(ValueError):
    """Asked to sample more instances than exist."""


def canonical_decimal_str(x: Decimal) -> str:
    """Render a decimal without exponent notation, trailing zeros, or '-0'."""
    s = format(x, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


@dataclass(frozen=True)
class Cell:
    """One table cell: text, an exact decimal, or empty (value None)."""

    value: CellValue = None

    def __post_init__(self):
        if isinstance(self.value, (int, float)):
            object.__setattr__(self, "value", Decimal(str(self.value)))

    @classmethod
    def from_raw(cls, raw) -> "Cell":
        """Canonical constructor used by ingestion and markdown parsing.

        Numeric-looking strings become numbers; blank becomes empty; newlines
        in text collapse to single spaces (keeps one-row-per-line markdown
        valid). Text is stripped.
        """
        if raw is None:
            return cls(None)
        if isinstance(raw, Decimal):
            return cls(raw)
        if isinstance(raw, bool):
            return cls("true" if raw else "false")
        if isinstance(raw, (int, float)):
            return cls(Decimal(str(raw)))
        text = re.sub(r"\s*\n\s*", " ", str(raw)).strip()
        if text == "":
            return cls(None)
        if _NUMBER_RE.fullmatch(text):
            return cls(Decimal(text))
        return cls(text)

    @property
    def is_empty(self) -> bool:
        return self.value is None

    @property
    def is_number(self) -> bool:
        return isinstance(self.value, Decimal)

    def render(self) -> str:
        if self.value is None:
            return ""
        if isinstance(self.value, Decimal):
            return canonical_decimal_str(self.value)
        return self.value.replace("|", r"\|")

    def __eq__(self, other):
        if not isinstance(other, Cell):
            return NotImplemented
        a, b = self.value, other.value
        if isinstance(a, Decimal) and isinstance(b, Decimal):
            return a == b
        return a == b

    def __hash__(self):
        return hash(self.render())


@dataclass(frozen=True)
class Table:
    """Rectangular table: one header row plus data rows of Cells."""

    headers: tuple
    rows: tuple

    def __init__(self, headers: Sequence[str], rows: Sequence[Sequence[Cell]]):
        headers = tuple(str(h) for h in headers)
        if len(headers) < 1:
            raise ValueError("table needs at least one column")
        for h in headers:
            if not h.strip():
                raise ValueError("headers must be non-empty after trimming")
        frozen_rows = tuple(tuple(r) for r in rows)
        for i, row in enumerate(frozen_rows):
            if len(row) != len(headers):
                raise ValueError(
                    f"row {i} has {len(row)} cells, expected {len(headers)}"
                )
            for c in row:
                if not isinstance(c, Cell):
                    raise TypeError("rows must contain Cell objects")
        object.__setattr__(self, "headers", headers)
        object.__setattr__(self, "rows", frozen_rows)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.headers)

    def column(self, j: int) -> list:
        return [row[j] for row in self.rows]


TASK_TYPES = ("qa", "fact_verification")
_FV_ANSWER_SETS = ({"true", "false"}, {"entail", "contradict", "neutral"})


@dataclass(frozen=True)
class Instance:
    """One benchmark record: a table, a question, and gold answer(s)."""

    id: str
    dataset: str
    table: Table
    question: str
    gold_answers: tuple
    task_type: str = "qa"
    image_ref: Optional[str] = None  # opaque; never dereferenced here

    def __post_init__(self):
        object.__setattr__(self, "gold_answers", tuple(self.gold_answers))
        if not self.gold_answers:
            raise ValueError("gold_answers must be non-empty")
        if self.task_type not in TASK_TYPES:
            raise ValueError(f"unknown task_type {self.task_type!r}")
        if self.task_type == "fact_verification":
            golds = {g.strip().lower() for g in self.gold_answers}
            if not any(golds <= allowed for allowed in _FV_ANSWER_SETS):
                raise ValueError(
                    "fact_verification answers must come from "
                    "{true,false} or {entail,contradict,neutral}"
                )


# --- markdown serialization ---------------------------------------------


def render_markdown(table: Table) -> str:
    """Serialize as a pipe table: header, `---` separator, one line per row."""
    lines = [
        "| " + " | ".join(h.replace("|", r"\|") for h in table.headers) + " |",
        "| " + " | ".join("---" for _ in table.headers) + " |",
    ]
    for row in table.rows:
        lines.append("| " + " | ".join(c.render() for c in row) + " |")
    return "\n".join(lines)


_SEPARATOR_CELL_RE = re.compile(r":?-{3,}:?")


def _split_row(line: str, lineno: int) -> list:
    body = line.strip()
    if not body.startswith("|") or not body.endswith("|"):
        raise MalformedTable(lineno, "row must start and end with '|'")
    body = body[1:-1]
    cells, buf = [], []
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body) and body[i + 1] == "|":
            buf.append("|")
            i += 2
        elif ch == "|":
            cells.append("".join(buf).strip())
            buf = []
            i += 1
        else:
            buf.append(ch)
            i += 1
    cells.append("".join(buf).strip())
    return cells


def parse_markdown(text: str) -> Table:
    """Inverse of render_markdown. Alignment colons in the separator row are
    accepted; output tables always re-render in the canonical `---` form."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if len(lines) < 2:
        raise MalformedTable(1, "need at least a header and separator row")
    headers = [h.replace(r"\|", "|") for h in _split_row(lines[0], 1)]
    if not headers or any(not h for h in headers):
        raise MalformedTable(1, "zero columns or empty header")
    sep = _split_row(lines[1], 2)
    if len(sep) != len(headers) or not all(
        _SEPARATOR_CELL_RE.fullmatch(s) for s in sep
    ):
        raise MalformedTable(2, "missing or malformed separator row")
    rows = []
    for offset, line in enumerate(lines[2:], start=3):
        cells = _split_row(line, offset)
        if len(cells) != len(headers):
            raise MalformedTable(
                offset, f"ragged row: {len(cells)} cells, expected {len(headers)}"
            )
        rows.append([Cell.from_raw(c) for c in cells])
    return Table(headers=headers, rows=rows)


# --- instance JSONL I/O --------------------------------------------------


def _instance_from_obj(obj: dict, lineno: int) -> Instance:
    for key in ("id", "dataset", "table", "question", "gold_answers", "task_type"):
        if key not in obj:
            raise SchemaError(lineno, key, "missing")
    tbl = obj["table"]
    if not isinstance(tbl, dict) or "headers" not in tbl or "rows" not in tbl:
        raise SchemaError(lineno, "table", "expected {headers, rows}")
    try:
        table = Table(
            headers=tbl["headers"],
            rows=[[Cell.from_raw(v) for v in row] for row in tbl["rows"]],
        )
    except (ValueError, TypeError) as exc:
        raise SchemaError(lineno, "table", str(exc)) from exc
    try:
        return Instance(
            id=str(obj["id"]),
            dataset=str(obj["dataset"]),
            table=table,
            question=str(obj["question"]),
            gold_answers=tuple(str(g) for g in obj["gold_answers"]),
            task_type=obj["task_type"],
            image_ref=obj.get("image_ref"),
        )
    except ValueError as exc:
        raise SchemaError(lineno, "instance", str(exc)) from exc


def load_instances(path) -> list:
    """Load the canonical instance JSONL, one Instance per non-blank line."""
    instances = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line, parse_float=Decimal)
            except json.JSONDecodeError as exc:
                raise SchemaError(lineno, "json", str(exc)) from exc
            instances.append(_instance_from_obj(obj, lineno))
    return instances


def instance_to_obj(inst: Instance) -> dict:
    def cell_json(c: Cell):
        if c.value is None:
            return None
        if isinstance(c.value, Decimal):
            as_int = int(c.value)
            return as_int if c.value == as_int else float(c.value)
        return c.value

    return {
        "id": inst.id,
        "dataset": inst.dataset,
        "table": {
            "headers": list(inst.table.headers),
            "rows": [[cell_json(c) for c in row] for row in inst.table.rows],
        },
        "question": inst.question,
        "gold_answers": list(inst.gold_answers),
        "task_type": inst.task_type,
        "image_ref": inst.image_ref,
    }


def save_instances(instances, path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_to_obj(inst), sort_keys=True) + "\n")
    return len(instances)


def sample_instances(instances, n: int, seed: int) -> list:
    """Uniform sample without replacement, deterministic per seed."""
    if n > len(instances):
        raise InsufficientData(f"asked for {n} of {len(instances)} instances")
    rng = random.Random(seed)
    return rng.sample(list(instances), n)
