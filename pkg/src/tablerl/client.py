"""Chat-completion clients: an OpenAI-compatible HTTP client with retries and
a deterministic mock used by every hermetic test.

The mock recognizes the trace-generation and judge prompt templates by their
field markers, parses the gold answer / prediction out of the prompt, and
answers per configured behavior rates. All mock randomness derives from
(seed, request text), so transcripts are byte-identical across runs and
independent of call order.
"""

from __future__ import annotations

import os
import random
import time
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from threading import BoundedSemaphore
from typing import Optional, Protocol

import requests

from .determinism import derive_seed
from .rewards import MatchConfig, answers_match


@dataclass(frozen=True)
class ChatRequest:
    model: str
    user: str
    system: Optional[str] = None
    temperature: float = 0.6
    max_tokens: int = 2048

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClientConfig:
    endpoint_url: str = "http://localhost:8000/v1/chat/completions"
    api_key_env_var: str = "TABLERL_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    max_in_flight: int = 8

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


class ClientError(RuntimeError):
    pass


class Timeout(ClientError):
    pass


class HttpStatus(ClientError):
    def __init__(self, code: int, body: str = ""):
        self.code = code
        super().__init__(f"HTTP {code}: {body[:200]}")


class ExhaustedRetries(ClientError):
    pass


class ChatClient(Protocol):
    def chat(self, request: ChatRequest) -> ChatResponse: ...


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class HttpChatClient:
    """OpenAI-compatible /v1/chat/completions client with bounded concurrency
    and exponential backoff on transient failures."""

    def __init__(self, config: ClientConfig, session: Optional[requests.Session] = None,
                 backoff_base: float = 0.5):
        self.config = config
        self.session = session or requests.Session()
        self.backoff_base = backoff_base
        self._gate = BoundedSemaphore(config.max_in_flight)

    def chat(self, request: ChatRequest) -> ChatResponse:
        messages = []
        if request.system:
            messages.append({"role": "system", "content": request.system})
        messages.append({"role": "user", "content": request.user})
        body = {
            "model": request.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env_var)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"

        last_error: Optional[ClientError] = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                with self._gate:
                    resp = self.session.post(
                        self.config.endpoint_url, json=body, headers=headers,
                        timeout=self.config.timeout,
                    )
            except requests.Timeout as exc:
                last_error = Timeout(str(exc))
                continue
            except requests.RequestException as exc:
                last_error = ClientError(str(exc))
                continue
            if resp.status_code in _RETRYABLE_STATUS:
                last_error = HttpStatus(resp.status_code, resp.text)
                continue
            if resp.status_code != 200:
                raise HttpStatus(resp.status_code, resp.text)
            payload = resp.json()
            content = payload["choices"][0]["message"]["content"]
            return ChatResponse(text=content, usage=payload.get("usage", {}))
        raise ExhaustedRetries(
            f"gave up after {self.config.max_retries + 1} attempts: {last_error}"
        )


# --- prompt field markers shared with trace_pipeline / eval_harness ------

GOLD_MARKER = "GOLD ANSWER:"
PREDICTION_MARKER = "PREDICTION:"
JUDGE_EVAL_MARKER = 'Respond with exactly "CORRECT" or "INCORRECT"'
JUDGE_TRACE_MARKER = 'Respond with exactly "YES" or "NO"'
FINAL_ANSWER_MARKER = "FINAL ANSWER:"


@dataclass(frozen=True)
class MockBehavior:
    consistency_rate: float = 1.0   # P(generated trace ends in the gold answer)
    verbosity_rate: float = 0.0     # P(trace padded past the length filter)
    judge_agree_rate: float = 1.0   # P(judge verdict agrees with the rule matcher)
    verbosity_pad_tokens: int = 1600

    def __post_init__(self):
        for r in (self.consistency_rate, self.verbosity_rate, self.judge_agree_rate):
            if not (0.0 <= r <= 1.0):
                raise ValueError("behavior rates must be in [0, 1]")


def _parse_marker(text: str, marker: str) -> Optional[str]:
    for line in text.splitlines():
        if line.startswith(marker):
            return line[len(marker):].strip()
    return None


def _perturb(gold: str) -> str:
    try:
        return str(Decimal(gold) + 1)
    except InvalidOperation:
        return gold + "_wrong"


class MockChatClient:
    """Deterministic stand-in for both the trace generator and the judge."""

    def __init__(self, seed: int = 0, behavior: MockBehavior = MockBehavior(),
                 match_config: MatchConfig = MatchConfig()):
        self.seed = seed
        self.behavior = behavior
        self.match_config = match_config

    def _rng(self, request: ChatRequest) -> random.Random:
        return random.Random(derive_seed("mock", self.seed, request.user))

    def chat(self, request: ChatRequest) -> ChatResponse:
        if JUDGE_EVAL_MARKER in request.user or JUDGE_TRACE_MARKER in request.user:
            return self._judge(request)
        return self._generate(request)

    def _generate(self, request: ChatRequest) -> ChatResponse:
        gold = _parse_marker(request.user, GOLD_MARKER)
        if gold is None:
            raise ClientError("mock generator: prompt lacks a gold-answer field")
        rng = self._rng(request)
        answer = gold if rng.random() < self.behavior.consistency_rate else _perturb(gold)
        steps = [
            "Step 1: locate the cells the question refers to.",
            "Step 2: combine them as the question requires.",
            f"Step 3: this yields {answer}.",
        ]
        if rng.random() < self.behavior.verbosity_rate:
            steps.append("padding " * self.behavior.verbosity_pad_tokens)
        text = "\n".join(steps) + f"\n{FINAL_ANSWER_MARKER} {answer}"
        return ChatResponse(text=text, usage={"mock": True})

    def _judge(self, request: ChatRequest) -> ChatResponse:
        gold = _parse_marker(request.user, GOLD_MARKER)
        pred = _parse_marker(request.user, PREDICTION_MARKER)
        if gold is None or pred is None:
            raise ClientError("mock judge: prompt lacks gold/prediction fields")
        golds = [g.strip() for g in gold.split("||")]
        rule_ok = any(answers_match(pred, g, self.match_config) for g in golds)
        rng = self._rng(request)
        verdict = rule_ok if rng.random() < self.behavior.judge_agree_rate else not rule_ok
        if JUDGE_EVAL_MARKER in request.user:
            word = "CORRECT" if verdict else "INCORRECT"
        else:
            word = "YES" if verdict else "NO"
        return ChatResponse(text=f"Assessment complete.\n{word}", usage={"mock": True})


class FlakyClient:
    """Test helper: fails with the given errors before delegating."""

    def __init__(self, inner: ChatClient, errors: list):
        self.inner = inner
        self.errors = list(errors)

    def chat(self, request: ChatRequest) -> ChatResponse:
        if self.errors:
            raise self.errors.pop(0)
        return self.inner.chat(request)
