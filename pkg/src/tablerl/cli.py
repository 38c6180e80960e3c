"""Command-line entry point wiring the pipeline stages together.

Subcommands: gen-synthetic, gen-traces, train, eval, report, config.
Every stage writes a manifest (config hash, seeds, input/output digests)
alongside its outputs, and is byte-for-byte reproducible given the same
config, seed, and mock clients.

Exit codes: 0 success, 2 config/input error, 3 client error, 4 stage
postcondition failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import evalharness, grpo, synth, tables, traces
from .client import ChatClient, ClientError, HttpChatClient, ClientConfig, MockBehavior, MockChatClient
from .config import ClientSection, ConfigError, PipelineConfig, config_hash, describe_defaults, load_config
from .policy import LinearSoftmaxPolicy
from .synth import QuestionKind

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CLIENT = 3
EXIT_STAGE = 4


def _sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, config: PipelineConfig, seeds: dict,
                    inputs: List[Path], outputs: List[Path]) -> None:
    manifest = {
        "config_sha256": config_hash(config),
        "seeds": seeds,
        # keyed by basename so manifests compare equal across output dirs
        "inputs": {Path(p).name: _sha256_file(p) for p in inputs if Path(p).exists()},
        "outputs": {Path(p).name: _sha256_file(p) for p in outputs if Path(p).exists()},
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )


def _build_client(section: ClientSection) -> ChatClient:
    if section.kind == "mock":
        return MockChatClient(
            seed=section.seed,
            behavior=MockBehavior(
                consistency_rate=section.consistency_rate,
                verbosity_rate=section.verbosity_rate,
                judge_agree_rate=section.judge_agree_rate,
            ),
        )
    return HttpChatClient(ClientConfig(
        endpoint_url=section.endpoint_url,
        api_key_env_var=section.api_key_env_var,
        timeout=section.timeout,
        max_retries=section.max_retries,
        max_in_flight=section.max_in_flight,
    ))


# --- subcommands ---------------------------------------------------------


def cmd_gen_synthetic(args) -> int:
    config = load_config(args.config)
    out_dir = Path(args.out)
    if args.kinds:
        mix = {QuestionKind(k): 1.0 for k in args.kinds.split(",")}
    else:
        mix = None
    suite = synth.make_suite(seed=args.seed, n=args.n, kind_mix=mix)
    instances_path = out_dir / "instances.jsonl"
    candidates_path = out_dir / "candidates.jsonl"
    tables.save_instances([t.instance for t in suite], instances_path)
    synth.save_candidates(suite, candidates_path)
    _write_manifest(out_dir, config, {"seed": args.seed}, [],
                    [instances_path, candidates_path])
    print(f"wrote {len(suite)} tasks to {out_dir}")
    return EXIT_OK


def cmd_gen_traces(args) -> int:
    config = load_config(args.config)
    instances = tables.load_instances(args.instances)
    client = _build_client(config.generator)
    judge = _build_client(config.judge) if config.use_judge else None
    out_dir = Path(args.out)
    result = traces.run_trace_pipeline(
        instances, client, judge=judge, config=config.filter,
        match_config=config.match, model=config.generator.model,
        temperature=config.generator.temperature,
    )
    traces_path = out_dir / "traces.jsonl"
    sft_path = out_dir / "sft.jsonl"
    traces.write_trace_jsonl(result, traces_path)
    by_id = {i.id: i for i in instances}
    traces.emit_sft_dataset(result.kept, by_id, sft_path)
    counts = result.counts()
    for key in sorted(counts):
        print(f"{key}: {counts[key]}")
    _write_manifest(out_dir, config,
                    {"generator": config.generator.seed, "judge": config.judge.seed},
                    [Path(args.instances)], [traces_path, sft_path])
    if result.deferred:
        print(f"error: {len(result.deferred)} records deferred (judge unreachable)",
              file=sys.stderr)
        return EXIT_CLIENT
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config)
    instances_path = args.instances or config.paths.instances
    candidates_path = args.candidates or config.paths.candidates
    suite = synth.load_suite(instances_path, candidates_path)
    heldout = None
    if args.heldout_instances and args.heldout_candidates:
        heldout = synth.load_suite(args.heldout_instances, args.heldout_candidates)

    policy = (LinearSoftmaxPolicy.load(args.init) if args.init
              else LinearSoftmaxPolicy())
    out_dir = Path(args.out)
    grpo_config = config.grpo
    weights = (config.rewards.w_acc, config.rewards.w_fmt)
    grpo_config = grpo.GrpoConfig(**{
        **{f: getattr(grpo_config, f) for f in (
            "group_size", "clip_eps", "kl_beta", "learning_rate",
            "iterations", "batch_size", "std_epsilon", "seed")},
        "reward_weights": weights,
    })

    report = None
    if args.stage in ("sft", "both"):
        examples = [(t, t.gold_index) for t in suite]
        policy = policy.sft_fit(examples, lr=config.sft.lr, epochs=config.sft.epochs)
    if args.stage in ("grpo", "both"):
        report = grpo.train(policy, suite, grpo_config, heldout=heldout,
                            match_config=config.match)
    else:
        acc, fmt = grpo.greedy_eval(policy, heldout or suite, config.match)
        report = grpo.TrainingReport(final_heldout_accuracy=acc,
                                     final_heldout_format_rate=fmt)

    checkpoint_path = out_dir / "checkpoint.json"
    report_path = out_dir / "report.jsonl"
    summary_path = out_dir / "summary.json"
    policy.save(checkpoint_path)
    report.write_jsonl(report_path)
    summary_path.write_text(json.dumps(report.summary(), sort_keys=True) + "\n")
    _write_manifest(out_dir, config, {"grpo": grpo_config.seed},
                    [Path(instances_path), Path(candidates_path)],
                    [checkpoint_path, report_path, summary_path])
    print(f"stage={args.stage} heldout_accuracy={report.final_heldout_accuracy}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    predictions_path = Path(args.predictions)
    if not predictions_path.exists():
        print(f"error: predictions file not found: {predictions_path}",
              file=sys.stderr)
        return EXIT_CONFIG
    instances = {i.id: i for i in tables.load_instances(
        args.instances or config.paths.instances)}
    predictions = evalharness.load_predictions(predictions_path)
    judge = _build_client(config.judge) if args.judge == "llm" else None
    try:
        report = evalharness.evaluate(predictions, instances, judge=judge,
                                      match_config=config.match)
    except evalharness.UnknownInstance as exc:
        print(f"error: prediction for unknown instance {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base = Path(args.out)
    evalharness.emit_report(report, base)
    _write_manifest(base.parent, config, {},
                    [predictions_path],
                    [base.with_suffix(".md"), base.with_suffix(".csv")])
    print(f"average={report.average:.4f} judge_mode={report.judge_mode}")
    return EXIT_OK


def cmd_report(args) -> int:
    rows: List[dict] = []
    columns: List[str] = []
    for run in args.runs:
        with open(run, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for col in reader.fieldnames or []:
                if col not in columns:
                    columns.append(col)
            rows.extend(reader)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out.with_suffix(".csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow({c: row.get(c, "-") for c in columns})
    md = ["| " + " | ".join(columns) + " |",
          "| " + " | ".join("---" for _ in columns) + " |"]
    for row in rows:
        md.append("| " + " | ".join(str(row.get(c, "-")) for c in columns) + " |")
    out.with_suffix(".md").write_text("\n".join(md) + "\n")
    print(f"merged {len(rows)} runs into {out.with_suffix('.csv')}")
    return EXIT_OK


def cmd_config(args) -> int:
    if args.action == "show":
        config = load_config(args.config)
        defaults = describe_defaults()
        loaded = {}
        import dataclasses as _dc
        for key, _ in defaults:
            obj = config
            for part in key.split("."):
                obj = getattr(obj, part)
            loaded[key] = obj
        for key, _ in defaults:
            print(f"{key} = {loaded[key]!r}")
    return EXIT_OK


def _defaults_epilog() -> str:
    lines = ["config defaults:"]
    for key, value in describe_defaults():
        lines.append(f"  {key} = {value!r}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tablerl",
        description="Table-reasoning training pipeline: synthetic data, "
                    "trace curation, SFT + GRPO training, and evaluation.",
        epilog=_defaults_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic task suite")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--kinds", default=None,
                   help="comma-separated question kinds (default: all)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("gen-traces", help="generate + filter reasoning traces")
    p.add_argument("--config", default=None)
    p.add_argument("--instances", required=True, dest="instances")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_traces)

    p = sub.add_parser("train", help="run SFT and/or GRPO on a suite")
    p.add_argument("--config", default=None)
    p.add_argument("--stage", choices=["sft", "grpo", "both"], default="both")
    p.add_argument("--instances", default=None)
    p.add_argument("--candidates", default=None)
    p.add_argument("--heldout-instances", default=None)
    p.add_argument("--heldout-candidates", default=None)
    p.add_argument("--init", default=None, help="initial policy checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score predictions against instances")
    p.add_argument("--config", default=None)
    p.add_argument("--predictions", required=True)
    p.add_argument("--instances", default=None)
    p.add_argument("--judge", choices=["llm", "rule"], default="rule")
    p.add_argument("--out", required=True, help="report path base (no suffix)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="merge evaluation reports")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="inspect configuration")
    p.add_argument("action", choices=["show"])
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (tables.SchemaError, tables.MalformedTable, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ClientError as exc:
        print(f"client error: {exc}", file=sys.stderr)
        return EXIT_CLIENT


if __name__ == "__main__":
    sys.exit(main())
