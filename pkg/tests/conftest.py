"""Shared fixtures: vocabulary, a small deterministic dataset, tiny model.

Also collects the acceptance-criteria pass/fail lines and echoes them in the
terminal summary so a plain `pytest -v` run shows one line per criterion."""

import pytest

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

from mftlab import build_vocab
from mftlab.model import ModelConfig, init_params
from mftlab.synthdata import DataConfig, gen_dataset, read_jsonl


@pytest.fixture(scope="session")
def vocab():
    return build_vocab()


@pytest.fixture(scope="session")
def small_dataset(vocab, tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.jsonl"
    gen_dataset(DataConfig(n_train=60, n_test=20, n_test_ic=20, seed=11), vocab, path)
    return path


@pytest.fixture(scope="session")
def small_train(small_dataset):
    return read_jsonl(small_dataset, split="train")


@pytest.fixture(scope="session")
def small_test(small_dataset):
    return read_jsonl(small_dataset, split="test")


@pytest.fixture(scope="session")
def tiny_cfg(vocab):
    # full depth (2 layers) but a narrow width so forward passes stay cheap
    return ModelConfig(vocab_size=len(vocab.tokens), d_model=32, n_layers=2,
                       n_heads=2, d_ff=64, max_seq_len=160)


@pytest.fixture(scope="session")
def tiny_params(tiny_cfg):
    return init_params(tiny_cfg)
