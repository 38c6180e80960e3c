#!/usr/bin/env python3
"""Train the toy policy under each stage combination and tabulate held-out
accuracy: uniform baseline, SFT only, GRPO only, and SFT then GRPO.

Usage:
    python scripts/run_ablation.py --n-train 200 --n-heldout 100 --out out/ablation
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from tablerl.evalharness import EvalReport, render_report_markdown, write_report_csv
from tablerl.grpo import GrpoConfig, greedy_eval, train
from tablerl.policy import LinearSoftmaxPolicy
from tablerl.synth import make_suite


def run(args):
    train_suite = make_suite(seed=args.seed, n=args.n_train)
    heldout = make_suite(seed=args.seed + 1000, n=args.n_heldout, dataset="heldout")
    examples = [(t, t.gold_index) for t in train_suite]
    config = GrpoConfig(iterations=args.iterations, seed=args.seed)

    def fit(tag):
        policy = LinearSoftmaxPolicy()
        start = time.monotonic()
        if tag in ("sft", "both"):
            policy = policy.sft_fit(examples)
        if tag in ("grpo", "both"):
            train(policy, train_suite, config, heldout=heldout)
        return policy, time.monotonic() - start

    reports = []
    for tag in ("baseline", "sft", "grpo", "both"):
        policy, elapsed = fit(tag)
        acc, fmt = greedy_eval(policy, heldout)
        print(f"{tag:8s}  accuracy={acc:.3f}  format={fmt:.3f}  ({elapsed:.1f}s)")
        reports.append(EvalReport(
            per_dataset={"heldout": {"n": len(heldout),
                                     "correct": round(acc * len(heldout)),
                                     "accuracy": acc}},
            average=acc, judge_mode="rule", model_tag=tag,
        ))

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".md").write_text(render_report_markdown(reports) + "\n")
    write_report_csv(reports, out.with_suffix(".csv"))
    print(f"\nwrote {out.with_suffix('.md')} and {out.with_suffix('.csv')}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n-train", type=int, default=200)
    parser.add_argument("--n-heldout", type=int, default=100)
    parser.add_argument("--iterations", type=int, default=500)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/ablation")
    run(parser.parse_args())


if __name__ == "__main__":
    main()
