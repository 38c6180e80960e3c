"""Linear softmax policy over hashed (task, candidate) features.

The stand-in for a full generative model: it scores each candidate answer of a
synthetic task with a dot product over hashed indicator features, samples a
candidate from the softmax, and independently samples whether the rendered
response is well-formed via a single global format logit. Log-probabilities
and their gradients are analytic, which keeps GRPO exactly checkable against
finite differences.

Feature families (none may read the gold index):
  (a) candidate appears as a table cell; refined variant gated on the row key
      and column header both appearing in the question
  (b) candidate equals op(column) for op in {sum, mean, max, min, count},
      gated on the header and the op keyword appearing in the question
  (c) candidate type is consistent with the question kind (for comparison and
      fact-verification kinds this checks consistency against the table)
  (d) per-rank bias
"""

from __future__ import annotations

import json
import math
import random
import re
import weakref
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .determinism import stable_hash64
from .rewards import MatchConfig, answers_match
from .synth import (
    KEY_HEADER,
    QuestionKind,
    SyntheticTask,
    _mean_str,
)
from .tables import canonical_decimal_str

DEFAULT_DIM = 65536

CHECKPOINT_VERSION = 1

_MATCH = MatchConfig()

_WORD_RE = re.compile(r"[a-z]+")
_NUM_IN_Q_RE = re.compile(r"\d+(?:\.\d+)?")


def _bucket(name: str, dim: int) -> int:
    return stable_hash64("feat:" + name) % dim


# --- response rendering --------------------------------------------------


@dataclass(frozen=True)
class Response:
    candidate_index: int
    well_formed: bool
    text: str


def render_response(task: SyntheticTask, candidate_index: int, well_formed: bool) -> Response:
    """Deterministic think-then-answer rendering of one candidate.

    The malformed variant drops only the closing </answer> tag, so format and
    accuracy rewards both fail while the think block stays intact.
    """
    candidate = task.candidates[candidate_index]
    think = (
        f"The question asks: {task.instance.question} "
        f"Scanning the table, the supported answer is {candidate}."
    )
    text = f"<think>{think}</think><answer>{candidate}"
    if well_formed:
        text += "</answer>"
    return Response(candidate_index=candidate_index, well_formed=well_formed, text=text)


# --- featurization -------------------------------------------------------


def _question_words(question: str) -> set:
    return set(_WORD_RE.findall(question.lower()))


def _cand_eq(candidate: str, value: str) -> bool:
    return answers_match(candidate, value, _MATCH)


def _feature_names(task: SyntheticTask, candidate_index: int) -> List[str]:
    candidate = task.candidates[candidate_index]
    table = task.instance.table
    question = task.instance.question
    words = _question_words(question)
    numbers = _NUM_IN_Q_RE.findall(question)
    names: List[str] = [f"rank:{candidate_index}"]

    # (a) plain table membership
    cell_strs = [c.render() for row in table.rows for c in row]
    if any(_cand_eq(candidate, s) for s in cell_strs if s):
        names.append("in_table")

    # (a') membership at question-relevant coordinates
    for row in table.rows:
        key = row[0].render()
        if key.lower() not in words:
            continue
        for j, header in enumerate(table.headers):
            if j == 0 or header.lower() not in words:
                continue
            if _cand_eq(candidate, row[j].render()):
                names.append("cell_match")

    # (b) aggregates of question-relevant columns, gated on op keywords
    for j, header in enumerate(table.headers):
        if j == 0 or header.lower() not in words:
            continue
        values = [row[j].value for row in table.rows]
        if not all(isinstance(v, Decimal) for v in values):
            continue
        agg_checks = [
            ("sum", "sum" in words, canonical_decimal_str(Decimal(sum(values)))),
            ("mean", "mean" in words, _mean_str(values)),
            ("max", "maximum" in words, canonical_decimal_str(max(values))),
            ("min", "minimum" in words, canonical_decimal_str(min(values))),
        ]
        for op, keyword_present, agg_str in agg_checks:
            if keyword_present and _cand_eq(candidate, agg_str):
                names.append(f"agg:{op}:{header}")
        if "how" in words and "many" in words and numbers:
            threshold = Decimal(numbers[-1])
            count = sum(1 for v in values if v > threshold)
            if _cand_eq(candidate, str(count)):
                names.append(f"agg:count:{header}")

    # (c) kind consistency
    if task.kind == QuestionKind.compare_two_cells:
        winner = _compare_winner(task, words)
        if winner is not None and _cand_eq(candidate, winner):
            names.append("cmp_winner")
        if candidate in ("equal",) or candidate.lower() in words:
            names.append(f"kind:{task.kind.value}")
    elif task.kind == QuestionKind.fact_verify:
        verdict = _fact_verdict(task, words, numbers)
        if verdict is not None and _cand_eq(candidate, verdict):
            names.append("fact_consistent")
        if candidate.lower() in ("true", "false"):
            names.append(f"kind:{task.kind.value}")
    else:
        try:
            Decimal(candidate)
            names.append(f"kind:{task.kind.value}")
        except Exception:
            pass
    return names


def _compare_winner(task: SyntheticTask, words: set) -> Optional[str]:
    table = task.instance.table
    keyed = {
        row[0].render().lower(): row
        for row in table.rows
        if not row[0].is_number
    }
    hit_keys = [k for k in keyed if k in words]
    header_hits = [
        j for j, h in enumerate(table.headers) if j > 0 and h.lower() in words
    ]
    if len(hit_keys) != 2 or len(header_hits) != 1:
        return None
    j = header_hits[0]
    a, b = hit_keys
    va, vb = keyed[a][j].value, keyed[b][j].value
    if va == vb:
        return "equal"
    return a if va > vb else b


def _fact_verdict(task: SyntheticTask, words: set, numbers: List[str]) -> Optional[str]:
    table = task.instance.table
    if not numbers:
        return None
    claimed = Decimal(numbers[-1])
    hit_rows = [row for row in table.rows if row[0].render().lower() in words]
    header_hits = [
        j for j, h in enumerate(table.headers) if j > 0 and h.lower() in words
    ]
    if len(hit_rows) != 1 or len(header_hits) != 1:
        return None
    cell = hit_rows[0][header_hits[0]]
    return "true" if cell.value == claimed else "false"


_FEATURE_CACHE: "weakref.WeakKeyDictionary" = weakref.WeakKeyDictionary()


def featurize(task: SyntheticTask, candidate_index: int, dim: int = DEFAULT_DIM) -> Dict[int, float]:
    """Sparse hashed feature vector for one (task, candidate) pair."""
    cached = _FEATURE_CACHE.get(task)
    if cached is None:
        cached = {}
        _FEATURE_CACHE[task] = cached
    key = (candidate_index, dim)
    if key not in cached:
        vec: Dict[int, float] = {}
        for name in _feature_names(task, candidate_index):
            b = _bucket(name, dim)
            vec[b] = vec.get(b, 0.0) + 1.0
        cached[key] = vec
    return cached[key]


# --- the policy ----------------------------------------------------------


def _log_sigmoid(x: float) -> float:
    # numerically stable log(1/(1+exp(-x)))
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid(x: float) -> float:
    return math.exp(_log_sigmoid(x))


class LinearSoftmaxPolicy:
    """Dense weight vector over hashed features plus a global format logit."""

    def __init__(self, dim: int = DEFAULT_DIM, weights: Optional[np.ndarray] = None,
                 format_logit: float = 0.0):
        self.dim = dim
        self.weights = (
            np.zeros(dim, dtype=np.float64) if weights is None
            else np.asarray(weights, dtype=np.float64).copy()
        )
        if self.weights.shape != (dim,):
            raise ValueError("weights shape must be (dim,)")
        self.format_logit = float(format_logit)

    def copy(self) -> "LinearSoftmaxPolicy":
        return LinearSoftmaxPolicy(self.dim, self.weights, self.format_logit)

    # scoring ------------------------------------------------------------

    def scores(self, task: SyntheticTask) -> np.ndarray:
        out = np.empty(len(task.candidates))
        for k in range(len(task.candidates)):
            feats = featurize(task, k, self.dim)
            out[k] = sum(self.weights[b] * v for b, v in feats.items())
        return out

    def candidate_log_probs(self, task: SyntheticTask) -> np.ndarray:
        s = self.scores(task)
        s = s - s.max()
        return s - math.log(np.exp(s).sum())

    def logp(self, task: SyntheticTask, response: Response) -> float:
        """log pi(response | task): softmax over candidates times the
        Bernoulli format factor."""
        logp_cand = self.candidate_log_probs(task)[response.candidate_index]
        b = self.format_logit
        logp_fmt = _log_sigmoid(b) if response.well_formed else _log_sigmoid(-b)
        return float(logp_cand + logp_fmt)

    def grad_logp(self, task: SyntheticTask, response: Response) -> Tuple[Dict[int, float], float]:
        """Exact gradient of logp: (sparse weights part, format-logit part)."""
        probs = np.exp(self.candidate_log_probs(task))
        grad: Dict[int, float] = {}
        for b, v in featurize(task, response.candidate_index, self.dim).items():
            grad[b] = grad.get(b, 0.0) + v
        for k, p_k in enumerate(probs):
            for b, v in featurize(task, k, self.dim).items():
                grad[b] = grad.get(b, 0.0) - p_k * v
        sig = _sigmoid(self.format_logit)
        grad_b = (1.0 - sig) if response.well_formed else -sig
        return grad, grad_b

    # sampling and decoding ---------------------------------------------

    def sample_group(self, task: SyntheticTask, group_size: int,
                     rng: random.Random) -> List[Tuple[Response, float]]:
        """G i.i.d. (response, logp-at-sampling-time) pairs."""
        if group_size < 2:
            raise ValueError("group_size must be >= 2")
        log_probs = self.candidate_log_probs(task)
        probs = np.exp(log_probs)
        cum = np.cumsum(probs)
        sig = _sigmoid(self.format_logit)
        out = []
        for _ in range(group_size):
            k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
            k = min(k, len(probs) - 1)
            well_formed = rng.random() < sig
            resp = render_response(task, k, well_formed)
            logp_fmt = (
                _log_sigmoid(self.format_logit) if well_formed
                else _log_sigmoid(-self.format_logit)
            )
            out.append((resp, float(log_probs[k] + logp_fmt)))
        return out

    def greedy_response(self, task: SyntheticTask) -> Response:
        """Argmax candidate (ties to the lowest index); well-formed iff
        sigmoid(format_logit) >= 0.5."""
        k = int(np.argmax(self.scores(task)))
        return render_response(task, k, _sigmoid(self.format_logit) >= 0.5)

    # supervised fitting --------------------------------------------------

    def sft_fit(self, examples: List[Tuple[SyntheticTask, int]], lr: float = 1.0,
                epochs: int = 100) -> "LinearSoftmaxPolicy":
        """Full-batch gradient ascent on mean log p(gold, well_formed).

        Targets are always well-formed, so the format logit climbs toward
        compliance alongside the candidate weights.
        """
        if not examples:
            raise ValueError("examples must be non-empty")
        policy = self.copy()
        n = len(examples)
        for _ in range(epochs):
            grad_w = np.zeros(policy.dim)
            grad_b = 0.0
            for task, gold_index in examples:
                resp = render_response(task, gold_index, True)
                g, gb = policy.grad_logp(task, resp)
                for bkt, v in g.items():
                    grad_w[bkt] += v
                grad_b += gb
            policy.weights += lr * grad_w / n
            policy.format_logit += lr * grad_b / n
        return policy

    def sft_loss(self, examples: List[Tuple[SyntheticTask, int]]) -> float:
        """Mean negative log-likelihood of the well-formed gold responses."""
        total = 0.0
        for task, gold_index in examples:
            total -= self.logp(task, render_response(task, gold_index, True))
        return total / len(examples)

    # serialization --------------------------------------------------------

    def to_json(self) -> dict:
        nz = np.nonzero(self.weights)[0]
        return {
            "version": CHECKPOINT_VERSION,
            "dim": self.dim,
            "weights": [[int(i), float(self.weights[i])] for i in nz],
            "format_logit": self.format_logit,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LinearSoftmaxPolicy":
        if obj.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unknown checkpoint version {obj.get('version')!r}")
        policy = cls(dim=int(obj["dim"]), format_logit=float(obj["format_logit"]))
        for i, v in obj["weights"]:
            policy.weights[int(i)] = float(v)
        return policy

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "LinearSoftmaxPolicy":
        return cls.from_json(json.loads(Path(path).read_text()))
