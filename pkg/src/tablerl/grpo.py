"""Group-relative policy optimization on the toy policy.

Per question, a group of G responses is sampled from a frozen snapshot of the
current policy; rewards are normalized within the group into advantages; the
update maximizes the clipped-ratio surrogate minus a KL penalty against a
fixed reference policy. One gradient step per sampling round, plain gradient
ascent (no adaptive optimizer) so trajectories are bitwise reproducible.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .determinism import derive_seed
from .policy import LinearSoftmaxPolicy, Response
from .rewards import MatchConfig, total_reward
from .synth import SyntheticTask


class GroupTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class GrpoConfig:
    group_size: int = 16
    clip_eps: float = 0.2
    kl_beta: float = 0.04
    learning_rate: float = 1.0
    iterations: int = 500
    batch_size: int = 16
    std_epsilon: float = 1e-8
    seed: int = 0
    reward_weights: Tuple[float, float] = (1.0, 1.0)  # (w_acc, w_fmt)

    def __post_init__(self):
        if self.group_size < 2:
            raise GroupTooSmall("group_size must be >= 2")
        if not (0 < self.clip_eps < 1):
            raise ValueError("clip_eps must be in (0, 1)")
        if self.kl_beta < 0:
            raise ValueError("kl_beta must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")


@dataclass
class GroupItem:
    response: Response
    logp_old: float
    logp_ref: float
    reward: float


@dataclass
class Group:
    task_id: str
    task: SyntheticTask
    items: List[GroupItem]


def compute_advantages(rewards, std_epsilon: float = 1e-8) -> np.ndarray:
    """Group-normalized rewards: (r - mean) / population std; all zeros when
    the group is degenerate (std below epsilon)."""
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall("need at least 2 rewards")
    std = r.std()  # population std: divide by G
    if std < std_epsilon:
        return np.zeros_like(r)
    return (r - r.mean()) / std


def kl_estimate(logp_theta: float, logp_ref: float) -> float:
    """Nonnegative per-sample KL surrogate r - log r - 1, r = ref/theta."""
    log_r = logp_ref - logp_theta
    return math.exp(log_r) - log_r - 1.0


def surrogate_term(logp_theta: float, logp_old: float, advantage: float,
                   clip_eps: float) -> float:
    """min(rho*A, clip(rho, 1-eps, 1+eps)*A) with rho the likelihood ratio."""
    rho = math.exp(logp_theta - logp_old)
    clipped = min(max(rho, 1.0 - clip_eps), 1.0 + clip_eps)
    return min(rho * advantage, clipped * advantage)


def group_objective(group: Group, policy: LinearSoftmaxPolicy,
                    config: GrpoConfig) -> float:
    advantages = compute_advantages(
        [it.reward for it in group.items], config.std_epsilon
    )
    total = 0.0
    for item, adv in zip(group.items, advantages):
        lt = policy.logp(group.task, item.response)
        total += surrogate_term(lt, item.logp_old, adv, config.clip_eps)
        total -= config.kl_beta * kl_estimate(lt, item.logp_ref)
    return total / len(group.items)


def group_gradient(group: Group, policy: LinearSoftmaxPolicy,
                   config: GrpoConfig) -> Tuple[Dict[int, float], float]:
    """Exact gradient of group_objective w.r.t. (weights, format_logit).

    Per response the surrogate contributes rho*A*grad_logp when the unclipped
    branch attains the min and zero otherwise (the clip is constant in rho);
    the KL penalty contributes -beta*(1 - r)*grad_logp with r = ref/theta.
    """
    advantages = compute_advantages(
        [it.reward for it in group.items], config.std_epsilon
    )
    grad_w: Dict[int, float] = {}
    grad_b = 0.0
    g = len(group.items)
    for item, adv in zip(group.items, advantages):
        lt = policy.logp(group.task, item.response)
        rho = math.exp(lt - item.logp_old)
        clipped_rho = min(max(rho, 1.0 - config.clip_eps), 1.0 + config.clip_eps)
        coeff = 0.0
        if rho * adv <= clipped_rho * adv:
            coeff += rho * adv
        r = math.exp(item.logp_ref - lt)
        coeff -= config.kl_beta * (1.0 - r)
        if coeff == 0.0:
            continue
        gw, gb = policy.grad_logp(group.task, item.response)
        for bkt, v in gw.items():
            grad_w[bkt] = grad_w.get(bkt, 0.0) + coeff * v / g
        grad_b += coeff * gb / g
    return grad_w, grad_b


@dataclass
class StepStats:
    mean_reward: float
    mean_abs_advantage: float
    mean_kl: float
    clip_fraction: float
    format_rate: float
    accuracy_rate: float


def grpo_step(policy: LinearSoftmaxPolicy, tasks: List[SyntheticTask],
              config: GrpoConfig, rng: random.Random,
              ref_policy: Optional[LinearSoftmaxPolicy] = None,
              match_config: MatchConfig = MatchConfig()) -> StepStats:
    """One sampling round plus one ascent step, mutating `policy` in place."""
    if not tasks:
        raise ValueError("batch must be non-empty")
    old = policy.copy()
    ref = ref_policy if ref_policy is not None else old

    groups: List[Group] = []
    rewards_all, fmt_all, acc_all = [], [], []
    for task in tasks:
        sampled = old.sample_group(task, config.group_size, rng)
        items = []
        for resp, logp_old in sampled:
            br = total_reward(
                resp.text, list(task.instance.gold_answers),
                config.reward_weights, match_config,
            )
            items.append(GroupItem(
                response=resp,
                logp_old=logp_old,
                logp_ref=ref.logp(task, resp),
                reward=br.total,
            ))
            rewards_all.append(br.total)
            fmt_all.append(br.format)
            acc_all.append(br.accuracy)
        groups.append(Group(task_id=task.instance.id, task=task, items=items))

    grad_w = np.zeros(policy.dim)
    grad_b = 0.0
    abs_adv, kls, clipped = [], [], 0
    n_resp = 0
    for group in groups:
        gw, gb = group_gradient(group, policy, config)
        for bkt, v in gw.items():
            grad_w[bkt] += v / len(groups)
        grad_b += gb / len(groups)
        advantages = compute_advantages(
            [it.reward for it in group.items], config.std_epsilon
        )
        for item, adv in zip(group.items, advantages):
            lt = policy.logp(group.task, item.response)
            rho = math.exp(lt - item.logp_old)
            if not (1.0 - config.clip_eps <= rho <= 1.0 + config.clip_eps):
                clipped += 1
            abs_adv.append(abs(adv))
            kls.append(kl_estimate(lt, item.logp_ref))
            n_resp += 1

    policy.weights += config.learning_rate * grad_w
    policy.format_logit += config.learning_rate * grad_b

    return StepStats(
        mean_reward=float(np.mean(rewards_all)),
        mean_abs_advantage=float(np.mean(abs_adv)),
        mean_kl=float(np.mean(kls)),
        clip_fraction=clipped / n_resp,
        format_rate=float(np.mean(fmt_all)),
        accuracy_rate=float(np.mean(acc_all)),
    )


@dataclass
class TrainingReport:
    iterations: List[dict] = field(default_factory=list)
    final_heldout_accuracy: Optional[float] = None
    final_heldout_format_rate: Optional[float] = None

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.iterations:
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    def summary(self) -> dict:
        return {
            "iterations": len(self.iterations),
            "heldout_accuracy": self.final_heldout_accuracy,
            "heldout_format_rate": self.final_heldout_format_rate,
        }


def greedy_eval(policy: LinearSoftmaxPolicy, tasks: List[SyntheticTask],
                match_config: MatchConfig = MatchConfig()) -> Tuple[float, float]:
    """(accuracy, format rate) of greedy decoding under the rule matcher."""
    from .rewards import accuracy_reward, format_reward

    if not tasks:
        return 0.0, 0.0
    acc = fmt = 0
    for task in tasks:
        resp = policy.greedy_response(task)
        acc += accuracy_reward(resp.text, list(task.instance.gold_answers), match_config)
        fmt += format_reward(resp.text)
    return acc / len(tasks), fmt / len(tasks)


def train(policy: LinearSoftmaxPolicy, suite: List[SyntheticTask],
          config: GrpoConfig,
          heldout: Optional[List[SyntheticTask]] = None,
          match_config: MatchConfig = MatchConfig()) -> TrainingReport:
    """Run config.iterations GRPO steps over shuffled mini-batches.

    The reference policy is frozen at the incoming (e.g. post-SFT) policy.
    Mutates `policy` in place and returns the per-iteration report.
    """
    if not suite:
        raise ValueError("suite must be non-empty")
    ref = policy.copy()
    rng = random.Random(derive_seed("grpo-train", config.seed))
    report = TrainingReport()
    order: List[SyntheticTask] = []
    for it in range(config.iterations):
        if len(order) < config.batch_size:
            refill = list(suite)
            rng.shuffle(refill)
            order.extend(refill)
        batch = order[: config.batch_size]
        del order[: config.batch_size]
        stats = grpo_step(policy, batch, config, rng, ref_policy=ref,
                          match_config=match_config)
        report.iterations.append({
            "iter": it,
            "mean_reward": stats.mean_reward,
            "accuracy": stats.accuracy_rate,
            "format_rate": stats.format_rate,
            "kl": stats.mean_kl,
            "clip_frac": stats.clip_fraction,
        })
    eval_suite = heldout if heldout is not None else suite
    acc, fmt = greedy_eval(policy, eval_suite, match_config)
    report.final_heldout_accuracy = acc
    report.final_heldout_format_rate = fmt
    return report
