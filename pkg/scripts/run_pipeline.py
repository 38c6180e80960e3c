#!/usr/bin/env python3
"""Run the full pipeline end to end with mock clients: synthetic suite,
trace curation, SFT + GRPO training, and evaluation of the greedy policy.

Usage:
    python scripts/run_pipeline.py --out out/pipeline
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

PKG_ROOT = Path(__file__).resolve().parent.parent


def sh(*args):
    cmd = [sys.executable, "-m", "tablerl.cli", *args]
    print("+", " ".join(str(a) for a in cmd[2:]))
    env = {"PYTHONPATH": str(PKG_ROOT / "src")}
    subprocess.run(cmd, check=True, env=env)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="out/pipeline")
    args = parser.parse_args()
    out = Path(args.out)

    sh("gen-synthetic", "--n", str(args.n), "--seed", str(args.seed),
       "--out", str(out / "suite"))
    sh("gen-traces", "--instances", str(out / "suite" / "instances.jsonl"),
       "--out", str(out / "traces"))
    sh("train", "--stage", "both",
       "--instances", str(out / "suite" / "instances.jsonl"),
       "--candidates", str(out / "suite" / "candidates.jsonl"),
       "--out", str(out / "train"))

    # greedy predictions from the trained checkpoint
    sys.path.insert(0, str(PKG_ROOT / "src"))
    from tablerl.policy import LinearSoftmaxPolicy
    from tablerl.synth import load_suite

    suite = load_suite(out / "suite" / "instances.jsonl",
                       out / "suite" / "candidates.jsonl")
    policy = LinearSoftmaxPolicy.load(out / "train" / "checkpoint.json")
    preds = out / "predictions.jsonl"
    with open(preds, "w", encoding="utf-8") as fh:
        for task in suite:
            resp = policy.greedy_response(task)
            fh.write(json.dumps({
                "instance_id": task.instance.id,
                "response_text": resp.text,
                "model_tag": "sft+grpo",
            }, sort_keys=True) + "\n")

    sh("eval", "--predictions", str(preds),
       "--instances", str(out / "suite" / "instances.jsonl"),
       "--out", str(out / "eval" / "report"))
    print(f"\npipeline outputs under {out}")


if __name__ == "__main__":
    main()
