"""CLI: subcommand round-trips, exit codes, config overrides."""

import json
from pathlib import Path

import pytest

from mftlab.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """gen-data -> train once; downstream commands reuse these artifacts."""
    ws = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(ws / "data"), "--seed", "3",
                 "--set", "n_train=24", "--set", "n_test=6", "--set", "n_test_ic=6"]) == 0
    dataset = ws / "data" / "dataset.jsonl"
    assert dataset.exists()
    assert main(["train", "--out", str(ws / "run"),
                 "--set", f"dataset={dataset}",
                 "--set", "epochs=1", "--set", "batch_size=8",
                 "--set", 'model={"vocab_size": 1078, "d_model": 16, "n_heads": 2, "d_ff": 32}',
                 ]) == 0
    return ws, dataset, ws / "run" / "ckpt.bin"


def test_gen_data_snapshot_and_vocab(workspace):
    ws, dataset, _ = workspace
    snap = json.loads((ws / "data" / "resolved_config.json").read_text())
    assert snap["seed"] == 3 and snap["n_train"] == 24
    vocab_obj = json.loads((ws / "data" / "vocab.json").read_text())
    assert len(vocab_obj["tokens"]) == 1078


def test_gen_data_rerun_byte_identical(workspace, tmp_path):
    ws, dataset, _ = workspace
    assert main(["gen-data", "--out", str(tmp_path / "again"), "--seed", "3",
                 "--set", "n_train=24", "--set", "n_test=6", "--set", "n_test_ic=6"]) == 0
    assert (tmp_path / "again" / "dataset.jsonl").read_bytes() == dataset.read_bytes()


def test_train_artifacts(workspace):
    ws, _, ckpt = workspace
    assert ckpt.exists()
    assert (ws / "run" / "metrics.jsonl").exists()
    assert (ws / "run" / "config.json").exists()
    assert (ws / "run" / "resolved_config.json").exists()


def test_eval_command(workspace):
    ws, dataset, ckpt = workspace
    out = ws / "eval"
    assert main(["eval", "--out", str(out), "--ckpt", str(ckpt),
                 "--dataset", str(dataset)]) == 0
    for split in ("test", "test_ic"):
        obj = json.loads((out / f"eval_{split}.json").read_text())
        assert obj["n"] == 6
        assert 0.0 <= obj["accuracy"] <= 1.0


def test_rft_merge_round_trip(workspace, capsys):
    ws, dataset, ckpt = workspace
    assert main(["rft", "--out", str(ws / "rft"), "--ckpt", str(ckpt),
                 "--dataset", str(dataset), "--set", "k=2",
                 "--set", "max_new=24"]) == 0
    stats = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert stats["kept"] + stats["rejected"] == stats["sampled"] == 2 * 24
    assert main(["merge", "--out", str(ws / "merged"),
                 "--original", str(dataset),
                 "--augmentation", str(ws / "rft" / "augmentation.jsonl")]) == 0
    n = sum(1 for _ in open(ws / "merged" / "merged.jsonl"))
    assert n == 36 + stats["kept"]


def test_probe_dep_command(workspace):
    ws, dataset, ckpt = workspace
    assert main(["probe-dep", "--out", str(ws / "dep"), "--ckpt", str(ckpt),
                 "--dataset", str(dataset), "--set", "n_samples=2",
                 "--set", "perturb_budget=2"]) == 0
    obj = json.loads((ws / "dep" / "histogram.json").read_text())
    assert set(obj) == {"edges", "question_rates", "chain_rates", "counts"}
    assert (ws / "dep" / "histogram.tsv").read_text().startswith("# distance_lo")


def test_probe_case_command(workspace):
    ws, _, ckpt = workspace
    assert main(["probe-case", "--out", str(ws / "case"), "--ckpt", str(ckpt),
                 "--set", 'question=Anna has 16 apples . Anna loses {p} apples . '
                          'How many apples does Anna have now ?',
                 "--set", "prefix=first 16 - {n} =",
                 "--set", "minuend=16", "--set", "premise=4"]) == 0
    obj = json.loads((ws / "case" / "case_probe.json").read_text())
    assert obj["n_probes"] == 9


def test_compare_command(workspace, capsys):
    ws, _, _ = workspace
    assert main(["compare", "--out", str(ws / "cmp"),
                 "--baseline", f"sft={ws / 'eval'}",
                 "--runs", f"mft={ws / 'eval'}"]) == 0
    text = capsys.readouterr().out
    assert text.splitlines()[0].split() == \
        ["method", "clean_acc", "ic_acc", "delta_clean", "delta_ic"]
    summary = json.loads((ws / "cmp" / "summary.json").read_text())
    assert summary["methods"]["mft"]["delta_clean"] == 0.0


def test_inspect_noise_full_mask(workspace, capsys, vocab):
    ws, dataset, _ = workspace
    assert main(["inspect-noise", "--dataset", str(dataset),
                 "--set", "family=MaskedLM",
                 "--set", "position_policy=AllTargetTokens",
                 "--set", "p=1.0", "--set", "m=1.0", "--set", "r=0.0",
                 "--set", "n=1"]) == 0
    out = capsys.readouterr().out
    lines = out.splitlines()
    orig = [l for l in lines if l.startswith("orig:")][0]
    noised = [l for l in lines if l.startswith("noised:")][0]
    assert "[MASK]" not in orig and "[MASK]" in noised
    # question region identical between orig and noised
    q_end = orig.index(" ? ")
    assert noised[:q_end].replace("noised:", "orig:  ") == orig[:q_end]


def test_exit_codes(workspace, tmp_path):
    ws, dataset, ckpt = workspace
    # unknown config key -> usage error 1
    assert main(["gen-data", "--out", str(tmp_path / "x"),
                 "--set", "bogus_key=1"]) == 1
    # malformed --set -> usage error 1
    assert main(["gen-data", "--out", str(tmp_path / "y"), "--set", "novalue"]) == 1
    # missing dataset -> usage error 1
    assert main(["train", "--out", str(tmp_path / "z")]) == 1
    # nonexistent checkpoint -> runtime error 2
    assert main(["eval", "--out", str(tmp_path / "e"),
                 "--ckpt", str(tmp_path / "missing.bin"),
                 "--dataset", str(dataset)]) == 2
    # non-checkpoint file -> runtime error 2
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"garbage")
    assert main(["eval", "--out", str(tmp_path / "e2"),
                 "--ckpt", str(bad), "--dataset", str(dataset)]) == 2
    # unknown subcommand / bad args -> argparse exit mapped to 1
    assert main(["frobnicate"]) == 1
    assert main(["--help"]) == 0
