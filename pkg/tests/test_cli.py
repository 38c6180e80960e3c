import json

import pytest

from tablerl import cli
from tablerl.cli import EXIT_CLIENT, EXIT_CONFIG, EXIT_OK, main
from tablerl.config import ConfigError, config_hash, describe_defaults, load_config


def _read_dir(out_dir):
    return {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


@pytest.fixture
def suite_dir(tmp_path):
    out = tmp_path / "suite"
    assert main(["gen-synthetic", "--n", "40", "--seed", "3",
                 "--out", str(out)]) == EXIT_OK
    return out


class TestGenSynthetic:
    def test_writes_suite_and_manifest(self, suite_dir):
        names = {p.name for p in suite_dir.iterdir()}
        assert names == {"instances.jsonl", "candidates.jsonl", "manifest.json"}
        lines = (suite_dir / "instances.jsonl").read_text().splitlines()
        assert len(lines) == 40

    def test_n_zero_writes_empty_files(self, tmp_path):
        out = tmp_path / "empty"
        assert main(["gen-synthetic", "--n", "0", "--out", str(out)]) == EXIT_OK
        assert (out / "instances.jsonl").read_text() == ""

    def test_kinds_filter(self, tmp_path):
        out = tmp_path / "k"
        assert main(["gen-synthetic", "--n", "12", "--kinds",
                     "lookup,column_sum", "--out", str(out)]) == EXIT_OK
        rows = [json.loads(l) for l in (out / "candidates.jsonl").read_text().splitlines()]
        assert {r["kind"] for r in rows} <= {"lookup", "column_sum"}

    def test_reruns_byte_identical(self, tmp_path):
        dirs = []
        for run in range(2):
            out = tmp_path / f"r{run}"
            main(["gen-synthetic", "--n", "25", "--seed", "8", "--out", str(out)])
            dirs.append(_read_dir(out))
        assert dirs[0] == dirs[1]

    def test_manifest_digests_match_files(self, suite_dir):
        manifest = json.loads((suite_dir / "manifest.json").read_text())
        for name, digest in manifest["outputs"].items():
            assert cli._sha256_file(suite_dir / name) == digest


class TestGenTraces:
    def test_happy_path(self, suite_dir, tmp_path, capsys):
        out = tmp_path / "traces"
        code = main(["gen-traces", "--instances", str(suite_dir / "instances.jsonl"),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert "kept: 40" in capsys.readouterr().out
        sft = [json.loads(l) for l in (out / "sft.jsonl").read_text().splitlines()]
        assert len(sft) == 40

    def test_missing_instances_exits_config(self, tmp_path):
        assert main(["gen-traces", "--instances", str(tmp_path / "nope.jsonl"),
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_reruns_byte_identical(self, suite_dir, tmp_path):
        dirs = []
        for run in range(2):
            out = tmp_path / f"t{run}"
            main(["gen-traces", "--instances", str(suite_dir / "instances.jsonl"),
                  "--out", str(out)])
            dirs.append(_read_dir(out))
        assert dirs[0] == dirs[1]


class TestTrain:
    def _train(self, suite_dir, out, extra=()):
        return main(["train", "--stage", "grpo",
                     "--instances", str(suite_dir / "instances.jsonl"),
                     "--candidates", str(suite_dir / "candidates.jsonl"),
                     "--out", str(out), *extra])

    def test_grpo_stage_with_config(self, suite_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[grpo]\niterations = 5\nbatch_size = 8\n")
        out = tmp_path / "train"
        assert self._train(suite_dir, out, ["--config", str(cfg)]) == EXIT_OK
        assert (out / "checkpoint.json").exists()
        assert len((out / "report.jsonl").read_text().splitlines()) == 5
        summary = json.loads((out / "summary.json").read_text())
        assert summary["iterations"] == 5
        assert 0.0 <= summary["heldout_accuracy"] <= 1.0

    def test_sft_stage_report_is_eval_only(self, suite_dir, tmp_path):
        out = tmp_path / "sft"
        code = main(["train", "--stage", "sft",
                     "--instances", str(suite_dir / "instances.jsonl"),
                     "--candidates", str(suite_dir / "candidates.jsonl"),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "report.jsonl").read_text() == ""
        summary = json.loads((out / "summary.json").read_text())
        assert summary["heldout_accuracy"] >= 0.9

    def test_init_resumes_from_checkpoint(self, suite_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[grpo]\niterations = 2\nbatch_size = 4\n")
        first = tmp_path / "first"
        self._train(suite_dir, first, ["--config", str(cfg)])
        second = tmp_path / "second"
        assert self._train(suite_dir, second,
                           ["--config", str(cfg),
                            "--init", str(first / "checkpoint.json")]) == EXIT_OK

    def test_reruns_byte_identical(self, suite_dir, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[grpo]\niterations = 3\nbatch_size = 4\n")
        dirs = []
        for run in range(2):
            out = tmp_path / f"g{run}"
            self._train(suite_dir, out, ["--config", str(cfg)])
            dirs.append(_read_dir(out))
        assert dirs[0] == dirs[1]


class TestEval:
    def _predictions(self, suite_dir, tmp_path, wrong_every=0):
        rows = []
        lines = (suite_dir / "instances.jsonl").read_text().splitlines()
        for k, line in enumerate(lines):
            obj = json.loads(line)
            answer = obj["gold_answers"][0]
            if wrong_every and k % wrong_every == 0:
                answer = f"{answer}_wrong"
            rows.append({"instance_id": obj["id"], "model_tag": "m",
                         "response_text": f"<think>t</think><answer>{answer}</answer>"})
        p = tmp_path / "preds.jsonl"
        p.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return p

    def test_rule_mode_all_correct(self, suite_dir, tmp_path, capsys):
        preds = self._predictions(suite_dir, tmp_path)
        out = tmp_path / "report"
        code = main(["eval", "--predictions", str(preds),
                     "--instances", str(suite_dir / "instances.jsonl"),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert "average=1.0000" in capsys.readouterr().out
        assert out.with_suffix(".md").exists()
        assert out.with_suffix(".csv").exists()

    def test_llm_judge_matches_rule_on_mock(self, suite_dir, tmp_path, capsys):
        preds = self._predictions(suite_dir, tmp_path, wrong_every=4)
        args = ["eval", "--predictions", str(preds),
                "--instances", str(suite_dir / "instances.jsonl")]
        main(args + ["--judge", "rule", "--out", str(tmp_path / "rule")])
        rule_line = capsys.readouterr().out.strip().splitlines()[-1]
        main(args + ["--judge", "llm", "--out", str(tmp_path / "llm")])
        llm_line = capsys.readouterr().out.strip().splitlines()[-1]
        assert rule_line.split()[0] == llm_line.split()[0]

    def test_missing_predictions_file_exit_2(self, suite_dir, tmp_path):
        assert main(["eval", "--predictions", str(tmp_path / "nope.jsonl"),
                     "--instances", str(suite_dir / "instances.jsonl"),
                     "--out", str(tmp_path / "r")]) == EXIT_CONFIG

    def test_unknown_instance_exit_2(self, suite_dir, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text(json.dumps({"instance_id": "ghost", "response_text": "x"}) + "\n")
        assert main(["eval", "--predictions", str(p),
                     "--instances", str(suite_dir / "instances.jsonl"),
                     "--out", str(tmp_path / "r")]) == EXIT_CONFIG


class TestReport:
    def test_merges_csvs(self, suite_dir, tmp_path, capsys):
        preds = TestEval()._predictions(suite_dir, tmp_path)
        for tag in ("a", "b"):
            main(["eval", "--predictions", str(preds),
                  "--instances", str(suite_dir / "instances.jsonl"),
                  "--out", str(tmp_path / tag)])
        out = tmp_path / "merged"
        code = main(["report", "--runs", str(tmp_path / "a.csv"),
                     str(tmp_path / "b.csv"), "--out", str(out)])
        assert code == EXIT_OK
        merged = out.with_suffix(".csv").read_text().splitlines()
        assert len(merged) == 3  # header + 2 runs
        assert out.with_suffix(".md").read_text().count("|") > 0


class TestConfig:
    def test_show_lists_every_default(self, capsys):
        assert main(["config", "show"]) == EXIT_OK
        out = capsys.readouterr().out
        for key, value in describe_defaults():
            assert f"{key} = {value!r}" in out

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[grpo]\nlerning_rate = 0.1\n")
        with pytest.raises(ConfigError):
            load_config(str(cfg))
        assert main(["config", "show", "--config", str(cfg)]) == EXIT_CONFIG

    def test_unknown_top_level_rejected(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("whatever = 1\n")
        with pytest.raises(ConfigError):
            load_config(str(cfg))

    def test_invalid_toml_exit_2(self, tmp_path):
        cfg = tmp_path / "broken.toml"
        cfg.write_text("[grpo\n")
        assert main(["config", "show", "--config", str(cfg)]) == EXIT_CONFIG

    def test_invalid_value_rejected(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("[grpo]\nclip_eps = 2.0\n")
        assert main(["config", "show", "--config", str(cfg)]) == EXIT_CONFIG

    def test_config_hash_sensitive_to_values(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[grpo]\niterations = 7\n")
        assert config_hash(load_config(str(cfg))) != config_hash(load_config(None))

    def test_help_epilog_lists_defaults(self, capsys):
        # doc-drift guard: --help must enumerate every config default
        with pytest.raises(SystemExit):
            main(["--help"])
        out = capsys.readouterr().out
        for key, _ in describe_defaults():
            assert key in out
