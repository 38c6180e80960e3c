"""Reasoning-trace generation, reject sampling, and SFT dataset emission.

A generator model is prompted with the markdown table, the question, and the
gold answer, and asked for step-by-step reasoning ending in a final-answer
line. Traces are then filtered: answers inconsistent with gold, over-long
traces, and (optionally) traces an LLM judge flags as incoherent are dropped.
Kept traces become think/answer SFT targets with the gold answer in the
answer slot.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from .client import (
    ChatClient,
    ChatRequest,
    ClientError,
    FINAL_ANSWER_MARKER,
    GOLD_MARKER,
    JUDGE_TRACE_MARKER,
    PREDICTION_MARKER,
)
from .rewards import MatchConfig, answers_match
from .tables import Instance, render_markdown

TRACE_TEMPLATE_VERSION = "trace-v1"
JUDGE_TEMPLATE_VERSION = "trace-judge-v1"

# Reconstructed prompts (the originals are not public); versioned so golden
# files pin the exact wording.
TRACE_PROMPT_TEMPLATE = """\
You are given a table, a question about it, and the correct answer.
Produce step-by-step reasoning that logically connects the question to the
correct answer, referring to specific table cells. End your response with a
line of the form "FINAL ANSWER: <answer>".

TABLE:
{table_markdown}

QUESTION: {question}
{gold_marker} {gold}

[template {version}]"""

JUDGE_PROMPT_TEMPLATE = """\
Assess whether the reasoning trace below is coherent and actually supports
the gold answer. {judge_marker} on the last line.

QUESTION: {question}
{gold_marker} {gold}
{prediction_marker} {answer}
REASONING:
{reasoning}

[template {version}]"""

SYSTEM_PROMPT = (
    "You are a helpful assistant. For each question, first think through your "
    "reasoning, then provide an answer. Format your response as: "
    "<think>Your reasoning process</think><answer>Your final answer</answer>"
)


@dataclass(frozen=True)
class FilterConfig:
    max_tokens: int = 1500   # matches the SFT-time text length cap
    use_judge: bool = True
    judge_retries: int = 1


class VerdictReason(str, Enum):
    answer_mismatch = "answer_mismatch"
    over_length = "over_length"
    judge_incoherent = "judge_incoherent"
    malformed_output = "malformed_output"


@dataclass(frozen=True)
class FilterVerdict:
    outcome: str  # "kept" | "rejected"
    reason: Optional[VerdictReason] = None

    def __post_init__(self):
        if self.outcome not in ("kept", "rejected"):
            raise ValueError(f"bad outcome {self.outcome!r}")
        if (self.reason is not None) != (self.outcome == "rejected"):
            raise ValueError("reason present iff rejected")


KEPT = FilterVerdict("kept")


@dataclass(frozen=True)
class TraceRecord:
    instance_id: str
    question: str
    reasoning: str
    answer: str
    generator_model: str
    raw_response: str
    token_estimate: int
    malformed: bool = False


class JudgeUnavailable(ClientError):
    """Judge failed after retries; the verdict is deferred, never kept."""


def build_trace_prompt(instance: Instance, model: str = "mock-generator",
                       temperature: float = 0.6) -> ChatRequest:
    user = TRACE_PROMPT_TEMPLATE.format(
        table_markdown=render_markdown(instance.table),
        question=instance.question,
        gold_marker=GOLD_MARKER,
        gold=instance.gold_answers[0],
        version=TRACE_TEMPLATE_VERSION,
    )
    return ChatRequest(model=model, user=user, temperature=temperature,
                       max_tokens=4096)


def parse_trace_response(text: str) -> Tuple[str, str, bool]:
    """Split at the last FINAL ANSWER marker -> (reasoning, answer, malformed)."""
    idx = text.rfind(FINAL_ANSWER_MARKER)
    if idx < 0:
        return text.strip(), "", True
    reasoning = text[:idx].strip()
    answer = text[idx + len(FINAL_ANSWER_MARKER):].strip().splitlines()
    return reasoning, (answer[0].strip() if answer else ""), False


def generate_trace(client: ChatClient, instance: Instance,
                   model: str = "mock-generator",
                   temperature: float = 0.6) -> TraceRecord:
    request = build_trace_prompt(instance, model=model, temperature=temperature)
    response = client.chat(request)
    reasoning, answer, malformed = parse_trace_response(response.text)
    return TraceRecord(
        instance_id=instance.id,
        question=instance.question,
        reasoning=reasoning,
        answer=answer,
        generator_model=model,
        raw_response=response.text,
        token_estimate=max(1, len(reasoning.split())),
        malformed=malformed,
    )


def build_judge_prompt(record: TraceRecord, instance: Instance,
                       model: str = "mock-judge") -> ChatRequest:
    user = JUDGE_PROMPT_TEMPLATE.format(
        question=instance.question,
        gold_marker=GOLD_MARKER,
        gold=" || ".join(instance.gold_answers),
        prediction_marker=PREDICTION_MARKER,
        answer=record.answer,
        reasoning=record.reasoning,
        judge_marker=JUDGE_TRACE_MARKER,
        version=JUDGE_TEMPLATE_VERSION,
    )
    return ChatRequest(model=model, user=user, temperature=0.0, max_tokens=64)


def _judge_says_coherent(judge: ChatClient, record: TraceRecord,
                         instance: Instance, retries: int) -> bool:
    last_error: Optional[ClientError] = None
    for _ in range(retries + 1):
        try:
            reply = judge.chat(build_judge_prompt(record, instance))
        except ClientError as exc:
            last_error = exc
            continue
        lines = [ln.strip() for ln in reply.text.strip().splitlines() if ln.strip()]
        token = lines[-1].upper() if lines else ""
        if token in ("YES", "NO"):
            return token == "YES"
        last_error = ClientError(f"unparseable judge output: {reply.text[-80:]!r}")
    raise JudgeUnavailable(str(last_error))


def filter_trace(record: TraceRecord, instance: Instance,
                 judge: Optional[ChatClient] = None,
                 config: FilterConfig = FilterConfig(),
                 match_config: MatchConfig = MatchConfig()) -> FilterVerdict:
    """First failing check wins: malformed output, answer mismatch vs gold,
    over-length, then judge coherence (when a judge is supplied)."""
    if record.instance_id != instance.id:
        raise ValueError("record does not belong to instance")
    if record.malformed or not record.reasoning:
        return FilterVerdict("rejected", VerdictReason.malformed_output)
    if not any(answers_match(record.answer, g, match_config)
               for g in instance.gold_answers):
        return FilterVerdict("rejected", VerdictReason.answer_mismatch)
    if record.token_estimate > config.max_tokens:
        return FilterVerdict("rejected", VerdictReason.over_length)
    if judge is not None and config.use_judge:
        if not _judge_says_coherent(judge, record, instance, config.judge_retries):
            return FilterVerdict("rejected", VerdictReason.judge_incoherent)
    return KEPT


def sft_target(record: TraceRecord, instance: Instance) -> str:
    # the gold answer, not the generator's string, fills the answer slot
    return f"<think>{record.reasoning}</think><answer>{instance.gold_answers[0]}</answer>"


def sft_user_prompt(instance: Instance) -> str:
    return f"{render_markdown(instance.table)}\n\n{instance.question}"


def emit_sft_dataset(records: List[TraceRecord], instances: Dict[str, Instance],
                     path) -> int:
    """Write the SFT JSONL for kept records; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            instance = instances[record.instance_id]
            fh.write(json.dumps({
                "instance_id": record.instance_id,
                "system": SYSTEM_PROMPT,
                "user": sft_user_prompt(instance),
                "target": sft_target(record, instance),
            }, sort_keys=True) + "\n")
            n += 1
    return n


@dataclass
class PipelineResult:
    records: List[Tuple[TraceRecord, FilterVerdict]]
    deferred: List[TraceRecord]

    @property
    def kept(self) -> List[TraceRecord]:
        return [r for r, v in self.records if v.outcome == "kept"]

    def counts(self) -> Dict[str, int]:
        out = {"kept": 0, "deferred": len(self.deferred)}
        for _, verdict in self.records:
            if verdict.outcome == "kept":
                out["kept"] += 1
            else:
                key = verdict.reason.value
                out[key] = out.get(key, 0) + 1
        return out


def run_trace_pipeline(instances: List[Instance], client: ChatClient,
                       judge: Optional[ChatClient] = None,
                       config: FilterConfig = FilterConfig(),
                       match_config: MatchConfig = MatchConfig(),
                       model: str = "mock-generator",
                       temperature: float = 0.6) -> PipelineResult:
    """Generate and filter one trace per instance, merged in instance order.

    A judge that stays unreachable after retries defers the record (it is
    never silently kept).
    """
    records: List[Tuple[TraceRecord, FilterVerdict]] = []
    deferred: List[TraceRecord] = []
    for instance in instances:
        record = generate_trace(client, instance, model=model,
                                temperature=temperature)
        try:
            verdict = filter_trace(record, instance, judge=judge, config=config,
                                   match_config=match_config)
        except JudgeUnavailable:
            deferred.append(record)
            continue
        records.append((record, verdict))
    return PipelineResult(records=records, deferred=deferred)


def write_trace_jsonl(result: PipelineResult, path) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for record, verdict in result.records:
            fh.write(json.dumps({
                "instance_id": record.instance_id,
                "reasoning": record.reasoning,
                "answer": record.answer,
                "generator_model": record.generator_model,
                "verdict": verdict.outcome,
                "reason": verdict.reason.value if verdict.reason else None,
            }, sort_keys=True) + "\n")
            n += 1
    return n
