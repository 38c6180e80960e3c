"""LLM-as-judge evaluation with a rule-based fallback and report emission.

Each prediction is judged CORRECT/INCORRECT given the question and gold
answer(s), by an external judge model when one is supplied, otherwise by the
rule matcher. Accuracies aggregate per dataset; the summary Average is the
unweighted mean across datasets. Missing predictions count as incorrect.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .client import (
    ChatClient,
    ChatRequest,
    ClientError,
    GOLD_MARKER,
    JUDGE_EVAL_MARKER,
    PREDICTION_MARKER,
)
from .rewards import MatchConfig, accuracy_reward, answers_match, extract_answer
from .tables import Instance

EVAL_JUDGE_TEMPLATE_VERSION = "eval-judge-v1"

EVAL_JUDGE_PROMPT_TEMPLATE = """\
Decide whether the model's prediction answers the question correctly, given
the ground-truth answer. {judge_marker} on the last line.

QUESTION: {question}
{gold_marker} {gold}
{prediction_marker} {prediction}

[template {version}]"""


class UnknownInstance(KeyError):
    pass


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    response_text: str
    model_tag: str


@dataclass
class EvalReport:
    per_dataset: Dict[str, dict]
    average: float
    judge_mode: str  # "llm" | "rule"
    model_tag: str = "model"
    rule_fallbacks: int = 0


def judge_request(instance: Instance, prediction: Prediction,
                  model: str = "mock-judge") -> ChatRequest:
    """Judge prompt; embeds the extracted answer, or the whole response when
    no <answer> block exists."""
    extracted = extract_answer(prediction.response_text)
    shown = extracted if extracted is not None else prediction.response_text
    user = EVAL_JUDGE_PROMPT_TEMPLATE.format(
        question=instance.question,
        gold_marker=GOLD_MARKER,
        gold=" || ".join(instance.gold_answers),
        prediction_marker=PREDICTION_MARKER,
        prediction=shown,
        judge_marker=JUDGE_EVAL_MARKER,
        version=EVAL_JUDGE_TEMPLATE_VERSION,
    )
    return ChatRequest(model=model, user=user, temperature=0.0, max_tokens=64)


def _rule_verdict(instance: Instance, prediction: Prediction,
                  match_config: MatchConfig) -> bool:
    extracted = extract_answer(prediction.response_text)
    if extracted is not None:
        return any(answers_match(extracted, g, match_config)
                   for g in instance.gold_answers)
    # no tags at all: fall back to matching the raw response text
    return any(answers_match(prediction.response_text.strip(), g, match_config)
               for g in instance.gold_answers)


def judge_verdict(client: ChatClient, instance: Instance, prediction: Prediction,
                  match_config: MatchConfig = MatchConfig()) -> tuple:
    """Returns (correct: bool, used_fallback: bool). One retry on unparseable
    output, then the rule matcher decides."""
    for _ in range(2):
        try:
            reply = client.chat(judge_request(instance, prediction))
        except ClientError:
            continue
        lines = [ln.strip() for ln in reply.text.strip().splitlines() if ln.strip()]
        token = lines[-1].upper() if lines else ""
        if token in ("CORRECT", "INCORRECT"):
            return token == "CORRECT", False
    return _rule_verdict(instance, prediction, match_config), True


def evaluate(predictions: List[Prediction], instances: Dict[str, Instance],
             judge: Optional[ChatClient] = None,
             match_config: MatchConfig = MatchConfig()) -> EvalReport:
    """Per-dataset accuracy plus unweighted average; instances with no
    prediction count as incorrect."""
    by_id: Dict[str, Prediction] = {}
    model_tag = "model"
    for p in predictions:
        if p.instance_id not in instances:
            raise UnknownInstance(p.instance_id)
        by_id[p.instance_id] = p
        model_tag = p.model_tag

    datasets: Dict[str, List[Instance]] = {}
    for inst in instances.values():
        datasets.setdefault(inst.dataset, []).append(inst)

    fallbacks = 0
    per_dataset = {}
    for name in sorted(datasets):
        n = correct = 0
        for inst in sorted(datasets[name], key=lambda i: i.id):
            n += 1
            pred = by_id.get(inst.id)
            if pred is None:
                continue
            if judge is not None:
                ok, used_fallback = judge_verdict(judge, inst, pred, match_config)
                fallbacks += used_fallback
            else:
                ok = bool(accuracy_reward(pred.response_text,
                                          list(inst.gold_answers), match_config))
            correct += ok
        per_dataset[name] = {"n": n, "correct": correct, "accuracy": correct / n}

    average = sum(d["accuracy"] for d in per_dataset.values()) / len(per_dataset)
    return EvalReport(
        per_dataset=per_dataset,
        average=average,
        judge_mode="llm" if judge is not None else "rule",
        model_tag=model_tag,
        rule_fallbacks=fallbacks,
    )


# --- report emission -----------------------------------------------------


def _report_rows(reports: List[EvalReport]) -> tuple:
    datasets = sorted({d for r in reports for d in r.per_dataset})
    rows = []
    for r in reports:
        row = {"model_tag": r.model_tag, "judge_mode": r.judge_mode}
        for d in datasets:
            acc = r.per_dataset.get(d, {}).get("accuracy")
            row[d] = f"{100 * acc:.2f}" if acc is not None else "-"
        row["average"] = f"{100 * r.average:.2f}"
        rows.append(row)
    return datasets, rows


def render_report_markdown(reports: List[EvalReport]) -> str:
    datasets, rows = _report_rows(reports)
    cols = ["model_tag"] + datasets + ["average"]
    lines = [
        "| " + " | ".join(cols) + " |",
        "| " + " | ".join("---" for _ in cols) + " |",
    ]
    for row in rows:
        lines.append("| " + " | ".join(str(row[c]) for c in cols) + " |")
    return "\n".join(lines)


def write_report_csv(reports: List[EvalReport], path) -> None:
    datasets, rows = _report_rows(reports)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["model_tag"] + datasets + ["average", "judge_mode"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=cols)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row[c] for c in cols})


def emit_report(report: EvalReport, path_base) -> None:
    """Write <base>.md and <base>.csv with identical numbers."""
    base = Path(path_base)
    base.parent.mkdir(parents=True, exist_ok=True)
    base.with_suffix(".md").write_text(render_report_markdown([report]) + "\n")
    write_report_csv([report], base.with_suffix(".csv"))


def load_predictions(path) -> List[Prediction]:
    preds = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            preds.append(Prediction(
                instance_id=obj["instance_id"],
                response_text=obj["response_text"],
                model_tag=obj.get("model_tag", "model"),
            ))
    return preds
