import math
import random

import numpy as np
import pytest

from tablerl import synth
from tablerl.grpo import (
    Group,
    GroupItem,
    GroupTooSmall,
    GrpoConfig,
    compute_advantages,
    grpo_step,
    group_gradient,
    group_objective,
    greedy_eval,
    kl_estimate,
    surrogate_term,
    train,
)
from tablerl.policy import LinearSoftmaxPolicy, featurize, render_response
from tablerl.rewards import total_reward


class TestComputeAdvantages:
    def test_hand_example(self):
        np.testing.assert_allclose(compute_advantages([1, 0, 0, 1]), [1, -1, -1, 1])

    def test_degenerate_all_equal(self):
        np.testing.assert_array_equal(compute_advantages([3.0] * 8), np.zeros(8))

    def test_two_point_symmetry(self):
        np.testing.assert_allclose(compute_advantages([2, 0]), [1, -1])

    def test_group_too_small(self):
        with pytest.raises(GroupTooSmall):
            compute_advantages([1.0])

    def test_normalized_mean_and_std(self):
        rng = random.Random(0)
        for _ in range(200):
            g = rng.choice([2, 4, 16])
            rewards = [rng.random() for _ in range(g)]
            if max(rewards) - min(rewards) < 1e-6:
                continue
            a = compute_advantages(rewards)
            assert abs(a.mean()) < 1e-9
            assert abs(a.std() - 1.0) < 1e-9

    def test_shift_and_scale_invariance(self):
        rewards = [0.0, 1.0, 2.0, 5.0]
        base = compute_advantages(rewards)
        shifted = compute_advantages([r + 17.0 for r in rewards])
        scaled = compute_advantages([3.5 * r for r in rewards])
        np.testing.assert_allclose(shifted, base, atol=1e-12)
        np.testing.assert_allclose(scaled, base, atol=1e-12)


class TestKlEstimate:
    def test_zero_iff_equal(self):
        assert kl_estimate(-1.3, -1.3) == 0.0
        assert kl_estimate(-1.0, -1.5) > 0.0

    def test_log_ratio_ln2_value(self):
        # r = 2 plugged into r - log r - 1
        assert kl_estimate(-2.0, -2.0 + math.log(2)) == pytest.approx(
            2 - math.log(2) - 1, abs=1e-12
        )

    def test_nonnegative_random_pairs(self):
        rng = random.Random(1)
        for _ in range(5000):
            lt, lr = rng.uniform(-10, 0), rng.uniform(-10, 0)
            assert kl_estimate(lt, lr) >= 0.0

    def test_matches_direct_formula(self):
        rng = random.Random(2)
        for _ in range(1000):
            lt, lr = rng.uniform(-8, 0), rng.uniform(-8, 0)
            r = math.exp(lr - lt)
            assert kl_estimate(lt, lr) == pytest.approx(r - math.log(r) - 1, abs=1e-12)


class TestSurrogateTerm:
    def test_ratio_one_gives_advantage(self):
        assert surrogate_term(-1.0, -1.0, 0.7, 0.2) == pytest.approx(0.7)

    def test_clipped_positive_branch(self):
        # rho = 1.5, A = 1, eps = 0.2 -> clip to 1.2
        lt = math.log(1.5)
        assert surrogate_term(lt, 0.0, 1.0, 0.2) == pytest.approx(1.2)

    def test_negative_advantage_min_rule(self):
        # rho = 0.5, A = -1 -> min(-0.5, -0.8) = -0.8
        lt = math.log(0.5)
        assert surrogate_term(lt, 0.0, -1.0, 0.2) == pytest.approx(-0.8)


def _build_group(policy, task, config, rng, rewards=None):
    sampled = policy.sample_group(task, config.group_size, rng)
    items = []
    for i, (resp, logp_old) in enumerate(sampled):
        if rewards is not None:
            reward = rewards[i]
        else:
            reward = total_reward(resp.text, list(task.instance.gold_answers)).total
        items.append(GroupItem(response=resp, logp_old=logp_old,
                               logp_ref=policy.logp(task, resp), reward=reward))
    return Group(task_id=task.instance.id, task=task, items=items)


class TestGroupObjective:
    def test_zero_at_identical_policies(self, small_suite):
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=8)
        group = _build_group(policy, task, config, random.Random(0),
                             rewards=[1, 0, 1, 0, 0, 1, 0, 0])
        assert group_objective(group, policy, config) == pytest.approx(0.0, abs=1e-12)

    def test_beta_zero_is_mean_surrogate(self, small_suite):
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=4, kl_beta=0.0)
        group = _build_group(policy, task, config, random.Random(1),
                             rewards=[2.0, 0.0, 1.0, 0.5])
        other = policy.copy()
        other.weights += 0.01
        advantages = compute_advantages([it.reward for it in group.items])
        expected = np.mean([
            surrogate_term(other.logp(task, it.response), it.logp_old, adv, 0.2)
            for it, adv in zip(group.items, advantages)
        ])
        assert group_objective(group, other, config) == pytest.approx(expected)

    def test_hand_built_two_response_group(self, small_suite):
        # spreadsheet-style evaluation of the clipped objective with KL
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=2, clip_eps=0.2, kl_beta=0.04)
        r0 = render_response(task, 0, True)
        r1 = render_response(task, 1 % len(task.candidates), False)
        lt0, lt1 = policy.logp(task, r0), policy.logp(task, r1)
        group = Group(task_id="g", task=task, items=[
            GroupItem(response=r0, logp_old=lt0 - 0.1, logp_ref=lt0 + 0.05, reward=2.0),
            GroupItem(response=r1, logp_old=lt1 + 0.3, logp_ref=lt1 - 0.2, reward=0.0),
        ])
        # advantages of [2, 0] are [1, -1]
        rho0, rho1 = math.exp(0.1), math.exp(-0.3)
        surr0 = min(rho0 * 1.0, min(max(rho0, 0.8), 1.2) * 1.0)
        surr1 = min(rho1 * -1.0, min(max(rho1, 0.8), 1.2) * -1.0)
        kl0 = math.exp(0.05) - 0.05 - 1
        kl1 = math.exp(-0.2) + 0.2 - 1
        expected = 0.5 * ((surr0 - 0.04 * kl0) + (surr1 - 0.04 * kl1))
        assert group_objective(group, policy, config) == pytest.approx(expected, abs=1e-12)


class TestGroupGradient:
    def _fd_check(self, group, policy, config, rel=1e-5):
        grad_w, grad_b = group_gradient(group, policy, config)
        h = 1e-6
        buckets = set()
        for k in range(len(group.task.candidates)):
            buckets |= set(featurize(group.task, k))
        for bucket in buckets:
            saved = policy.weights[bucket]
            policy.weights[bucket] = saved + h
            up = group_objective(group, policy, config)
            policy.weights[bucket] = saved - h
            down = group_objective(group, policy, config)
            policy.weights[bucket] = saved
            fd = (up - down) / (2 * h)
            assert fd == pytest.approx(grad_w.get(bucket, 0.0), rel=rel, abs=1e-7)
        saved = policy.format_logit
        policy.format_logit = saved + h
        up = group_objective(group, policy, config)
        policy.format_logit = saved - h
        down = group_objective(group, policy, config)
        policy.format_logit = saved
        assert (up - down) / (2 * h) == pytest.approx(grad_b, rel=rel, abs=1e-7)

    def test_matches_finite_differences(self, medium_suite):
        rng = random.Random(7)
        for trial in range(30):
            task = rng.choice(medium_suite)
            policy = LinearSoftmaxPolicy()
            for bucket in set().union(*(featurize(task, k)
                                        for k in range(len(task.candidates)))):
                policy.weights[bucket] = rng.gauss(0, 0.5)
            policy.format_logit = rng.gauss(0, 1)
            config = GrpoConfig(group_size=rng.choice([2, 4]),
                                kl_beta=rng.choice([0.0, 0.04, 0.2]))
            group = _build_group(LinearSoftmaxPolicy(), task, config,
                                 random.Random(trial))
            self._fd_check(group, policy, config)

    def test_clipped_worse_branch_contributes_zero(self, small_suite):
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=2, kl_beta=0.0)
        r0 = render_response(task, 0, True)
        r1 = render_response(task, 1, True)
        lt0, lt1 = policy.logp(task, r0), policy.logp(task, r1)
        # response 0: rho = e^0.5 > 1.2 with A > 0 -> clipped, zero gradient;
        # response 1: rho = 1 held on-policy
        group = Group(task_id="g", task=task, items=[
            GroupItem(response=r0, logp_old=lt0 - 0.5, logp_ref=lt0, reward=2.0),
            GroupItem(response=r1, logp_old=lt1, logp_ref=lt1, reward=0.0),
        ])
        grad_w, _ = group_gradient(group, policy, config)
        # only response 1 (unclipped, A = -1) contributes
        gw1, _ = policy.grad_logp(task, r1)
        for bucket, v in gw1.items():
            assert grad_w.get(bucket, 0.0) == pytest.approx(-v / 2)

    def test_kl_gradient_zero_at_reference(self, small_suite):
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=2, kl_beta=0.5)
        group = _build_group(policy, task, config, random.Random(3),
                             rewards=[1.0, 1.0])  # degenerate: zero advantages
        grad_w, grad_b = group_gradient(group, policy, config)
        # advantages zero and policy == ref -> gradient exactly zero
        assert grad_b == 0.0
        assert all(v == 0.0 for v in grad_w.values())


class TestGrpoStep:
    def test_bandit_probability_increases(self):
        task = synth.generate_task(5, synth.QuestionKind.column_sum, 4, 3)
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=16, learning_rate=0.5, seed=0)
        rng = random.Random(0)
        p_gold = [math.exp(policy.candidate_log_probs(task)[task.gold_index])]
        for _ in range(20):
            grpo_step(policy, [task], config, rng)
            p_gold.append(math.exp(policy.candidate_log_probs(task)[task.gold_index]))
        assert p_gold[-1] > p_gold[0]
        assert p_gold[-1] > 0.5

    def test_all_equal_rewards_zero_update(self, small_suite):
        task = small_suite[0]
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=4, reward_weights=(0.0, 0.0))
        before_w = policy.weights.copy()
        before_b = policy.format_logit
        grpo_step(policy, [task], config, random.Random(0))
        np.testing.assert_array_equal(policy.weights, before_w)
        assert policy.format_logit == before_b

    def test_deterministic_trajectories(self, small_suite):
        tasks = small_suite[:8]
        config = GrpoConfig(group_size=8, seed=0)
        states = []
        for _ in range(2):
            policy = LinearSoftmaxPolicy()
            rng = random.Random(99)
            for _ in range(5):
                grpo_step(policy, tasks, config, rng)
            states.append((policy.weights.copy(), policy.format_logit))
        np.testing.assert_array_equal(states[0][0], states[1][0])
        assert states[0][1] == states[1][1]

    def test_stats_ranges(self, small_suite):
        policy = LinearSoftmaxPolicy()
        config = GrpoConfig(group_size=8)
        stats = grpo_step(policy, small_suite[:4], config, random.Random(0))
        assert 0.0 <= stats.clip_fraction <= 1.0
        assert math.isfinite(stats.mean_kl)
        assert 0.0 <= stats.format_rate <= 1.0

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            grpo_step(LinearSoftmaxPolicy(), [], GrpoConfig(), random.Random(0))


class TestTrain:
    def test_zero_iterations_leaves_policy_unchanged(self, small_suite):
        policy = LinearSoftmaxPolicy()
        before = policy.weights.copy()
        report = train(policy, small_suite, GrpoConfig(iterations=0))
        np.testing.assert_array_equal(policy.weights, before)
        assert report.iterations == []
        assert report.final_heldout_accuracy is not None

    def test_same_seed_identical_reports(self, small_suite):
        reports = []
        for _ in range(2):
            policy = LinearSoftmaxPolicy()
            reports.append(train(policy, small_suite,
                                 GrpoConfig(iterations=10, seed=5)))
        assert reports[0].iterations == reports[1].iterations

    def test_report_fields(self, small_suite):
        policy = LinearSoftmaxPolicy()
        report = train(policy, small_suite, GrpoConfig(iterations=3, seed=1))
        assert len(report.iterations) == 3
        for row in report.iterations:
            assert set(row) == {"iter", "mean_reward", "accuracy", "format_rate",
                                "kl", "clip_frac"}


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"group_size": 1},
        {"clip_eps": 0.0},
        {"clip_eps": 1.5},
        {"kl_beta": -0.1},
        {"learning_rate": 0.0},
    ])
    def test_invalid_configs(self, kwargs):
        with pytest.raises(ValueError):
            GrpoConfig(**kwargs)
