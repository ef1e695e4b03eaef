import json
import subprocess
import sys
from pathlib import Path

import pytest

from dynamics_collector import (
    ByteTokenizer,
    CollectConfig,
    CollectError,
    build_encoder,
    collect,
    load_text_dataset,
    rouge_l_f1,
    sentence_bleu,
)

WORDS = ["red", "blue", "green", "bright", "dark", "soft", "warm", "cold"]


def write_lm_pool(path: Path, n: int, prefix: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            w = WORDS[i % len(WORDS)]
            fh.write(json.dumps({"id": f"{prefix}_{i:03d}",
                                 "text": f"sample {i} is a {w} item number {i * 7 % 13}"}) + "\n")


def write_gen_pool(path: Path, n: int, prefix: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            w = WORDS[i % len(WORDS)]
            fh.write(json.dumps({"id": f"{prefix}_{i:03d}", "prompt": f"color {i}: ",
                                 "target": f"{w} tone"}) + "\n")


def fluence(*args: str) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "fluence.cli", *args],
        capture_output=True, text=True,
    )


@pytest.fixture(scope="module")
def pools(tmp_path_factory):
    root = tmp_path_factory.mktemp("pools")
    write_lm_pool(root / "train.jsonl", 200, "tr")
    write_lm_pool(root / "test.jsonl", 3, "te")
    write_gen_pool(root / "gtrain.jsonl", 30, "gtr")
    write_gen_pool(root / "gtest.jsonl", 3, "gte")
    return root


def base_cfg(pools: Path, out: Path, **over) -> CollectConfig:
    kw = dict(
        train_path=str(pools / "train.jsonl"),
        test_path=str(pools / "test.jsonl"),
        out_dir=str(out),
        per_run=16,
        num_steps=8,
        batch_size=4,
        learning_rate=5e-3,
        checkpoints=0,
        encoder="hash:32",
        max_seq_len=64,
        seed=1,
    )
    kw.update(over)
    return CollectConfig(**kw)


class TestUnits:
    def test_tokenizer_round_trip(self):
        tok = ByteTokenizer()
        text = "hello, bytes 123"
        assert tok.decode(tok.encode(text)) == text
        assert tok.vocab_size == 258

    def test_bleu_identity_and_disjoint(self):
        assert sentence_bleu("a b c d e", "a b c d e") > 90.0
        assert sentence_bleu("x y z", "a b c") < 15.0
        assert sentence_bleu("", "a b") == 0.0

    def test_rouge_l_known_case(self):
        # LCS("a b c d", "a c d") = 3: P=3/4, R=1 -> F1 = 6/7
        assert rouge_l_f1("a b c d", "a c d") == pytest.approx(6 / 7)
        assert rouge_l_f1("a b", "a b") == 1.0
        assert rouge_l_f1("x", "y") == 0.0

    def test_hash_encoder_deterministic_unit_norm(self):
        import numpy as np

        enc = build_encoder("hash:32")
        v1 = enc(["hello world", "another text"])
        v2 = enc(["hello world", "another text"])
        assert np.array_equal(v1, v2)
        assert np.allclose(np.linalg.norm(v1, axis=1), 1.0)

    def test_unknown_encoder_spec(self):
        with pytest.raises(CollectError, match="unknown encoder"):
            build_encoder("magic:7")

    def test_dataset_errors(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"}\n')
        with pytest.raises(CollectError, match="'text' or 'prompt'"):
            load_text_dataset(bad)
        bad.write_text('{"id": "a", "text": "x"}\n{"id": "a", "text": "y"}\n')
        with pytest.raises(CollectError, match="duplicate id"):
            load_text_dataset(bad)

    def test_model_load_failure(self, pools, tmp_path):
        cfg = base_cfg(pools, tmp_path / "o", model="definitely/not-a-model")
        with pytest.raises(CollectError, match="model load failure"):
            collect(cfg)

    def test_per_run_exceeds_pool(self, pools, tmp_path):
        with pytest.raises(CollectError, match="exceeds train pool"):
            collect(base_cfg(pools, tmp_path / "o", per_run=500))


class TestSmokeRun:
    def test_one_step_run_loads_in_fluence(self, pools, tmp_path):
        """Minimal valid run: one step, one test example, loadable across
        the package boundary."""
        single_test = tmp_path / "one_test.jsonl"
        write_lm_pool(single_test, 1, "solo")
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, test_path=str(single_test),
                       num_steps=1, per_run=4, checkpoints=1)
        written = collect(cfg)
        run_file = written["run"]
        obj = json.loads(run_file.read_text())
        assert len(obj["steps"]) == 1
        assert len(obj["trajectories"]) == 1
        res = fluence("evaluate", "--pred", str(run_file), "--truth", str(run_file),
                      "--order", "0", "--out", str(tmp_path / "rep.json"))
        assert res.returncode == 0, res.stderr
        rep = json.loads((tmp_path / "rep.json").read_text())
        assert rep["loss"]["mse"] == 0.0


class TestFullGeometry:
    def test_96_step_run_drives_fit(self, pools, tmp_path):
        """96 steps, batches of 4, 128-of-200 sampling; the exported files
        must fit a simulator end to end."""
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, per_run=128, num_steps=96, batch_size=4,
                       learning_rate=1e-3, seed=5)
        written = collect(cfg)
        obj = json.loads(written["run"].read_text())
        assert len(obj["steps"]) == 96
        assert all(len(s["batch"]) == 4 for s in obj["steps"])
        assert len({ex for s in obj["steps"] for ex in s["batch"]}) == 128
        model_out = tmp_path / "model.json"
        res = fluence("fit", "--runs", str(written["run"]), "--val", str(written["run"]),
                      "--embeddings", str(written["embeddings"]),
                      "--metric", "loss", "--proj-dim", "4", "--epochs", "3",
                      "--warmup", "5", "--patience", "0", "--lr", "1e-3",
                      "--seed", "1", "--out", str(model_out))
        assert res.returncode == 0, res.stderr
        assert model_out.is_file()


class TestDumps:
    def test_ten_checkpoint_dump_drives_tracin(self, pools, tmp_path):
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, per_run=16, num_steps=20, checkpoints=10,
                       learning_rate=1e-3, seed=3)
        written = collect(cfg)
        lines = written["dump"].read_text().splitlines()
        steps = [json.loads(l)["step"] for l in lines[1:]]
        assert len(steps) == 10
        assert steps == sorted(steps) and steps[0] == 0 and steps[-1] == 20
        res = fluence("baseline", "--method", "tracin",
                      "--eval", str(written["run"]), "--dumps", str(written["dump"].parent),
                      "--out", str(tmp_path / "tracin.json"))
        assert res.returncode == 0, res.stderr
        rep = json.loads((tmp_path / "tracin.json").read_text())
        assert rep["method"] == "tracin" and "loss" in rep

    def test_dump_has_self_pairs_for_ranking(self, pools, tmp_path):
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, num_steps=6, checkpoints=3, seed=3)
        written = collect(cfg)
        first = json.loads(written["dump"].read_text().splitlines()[1])
        self_pairs = [d for d in first["dots"] if d["train"] == d["test"]]
        assert len(self_pairs) == 16


class TestGenerationMetrics:
    def test_nlg_run_records_all_three_metrics(self, pools, tmp_path):
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, train_path=str(pools / "gtrain.jsonl"),
                       test_path=str(pools / "gtest.jsonl"),
                       num_steps=6, per_run=12, max_new_tokens=8, seed=2)
        written = collect(cfg)
        obj = json.loads(written["run"].read_text())
        metrics = {t["metric"] for t in obj["trajectories"]}
        assert metrics == {"loss", "bleu", "rouge_l"}
        for t in obj["trajectories"]:
            assert len(t["values"]) == 6
            if t["metric"] == "bleu":
                assert all(0.0 <= v <= 100.0 for v in t["values"])
            if t["metric"] == "rouge_l":
                assert all(0.0 <= v <= 1.0 for v in t["values"])
        res = fluence("evaluate", "--pred", str(written["run"]),
                      "--truth", str(written["run"]), "--order", "0",
                      "--out", str(tmp_path / "rep.json"))
        assert res.returncode == 0, res.stderr

    def test_eval_interval_emits_coarse_gen_run(self, pools, tmp_path):
        out = tmp_path / "o"
        cfg = base_cfg(pools, out, train_path=str(pools / "gtrain.jsonl"),
                       test_path=str(pools / "gtest.jsonl"),
                       num_steps=10, per_run=12, eval_interval=5,
                       max_new_tokens=8, seed=2)
        written = collect(cfg)
        loss_obj = json.loads(written["run"].read_text())
        assert {t["metric"] for t in loss_obj["trajectories"]} == {"loss"}
        gen_obj = json.loads(written["run_gen"].read_text())
        assert len(gen_obj["steps"]) == 2  # evaluated at steps 5 and 10
        assert {t["metric"] for t in gen_obj["trajectories"]} == {"bleu", "rouge_l"}
        res = fluence("evaluate", "--pred", str(written["run_gen"]),
                      "--truth", str(written["run_gen"]), "--order", "0",
                      "--out", str(tmp_path / "rep.json"))
        assert res.returncode == 0, res.stderr


class TestDeterminism:
    def test_same_seed_value_identical(self, pools, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            cfg = base_cfg(pools, out, num_steps=6, checkpoints=3, seed=9)
            collect(cfg)
            outs.append(out)
        for rel in ("runs/run_000.jsonl", "dumps/run_000.jsonl", "embeddings.jsonl"):
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel


class TestCli:
    def test_cli_end_to_end(self, pools, tmp_path):
        out = tmp_path / "o"
        res = subprocess.run(
            [sys.executable, "-m", "dynamics_collector.cli",
             "--train", str(pools / "train.jsonl"), "--test", str(pools / "test.jsonl"),
             "--out", str(out), "--run-id", "cli_run", "--per-run", "8",
             "--steps", "4", "--batch-size", "2", "--lr", "1e-3",
             "--checkpoints", "2", "--encoder", "hash:16", "--max-seq-len", "64",
             "--seed", "4"],
            capture_output=True, text=True,
        )
        assert res.returncode == 0, res.stderr
        assert (out / "runs" / "cli_run.jsonl").is_file()
        assert (out / "dumps" / "cli_run.jsonl").is_file()

    def test_cli_bad_dataset_exit_one(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"id": "a"}\n')
        res = subprocess.run(
            [sys.executable, "-m", "dynamics_collector.cli",
             "--train", str(bad), "--test", str(bad), "--out", str(tmp_path / "o")],
            capture_output=True, text=True,
        )
        assert res.returncode == 1
