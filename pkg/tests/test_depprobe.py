"""Dependency probe: oracles with constant and echo models, bucketing,
causality constraints, and the premise-consistency case probe."""

import numpy as np
import pytest

from mftlab.depprobe import (CaseTemplate, DependencyHistogram,
                             DependencyRecord, dependency_histogram,
                             histogram_to_files, perturb_substitutes,
                             premise_consistency_probe, probe_pair)
from mftlab.errors import BadPositions, NotNumeric, TemplateError
from mftlab.model import ModelConfig, ModelParams, init_params, param_shapes
from mftlab.rngutil import make_rng
from mftlab.tensor import Tensor
from mftlab.tokenizer import numeric_id, numeric_value


def _numeric_positions(rec, vocab):
    from mftlab.tokenizer import is_numeric_token
    return [i for i, t in enumerate(rec.encoded.ids) if is_numeric_token(t, vocab)]


def _constant_model(cfg):
    """Zero weights everywhere: logits are constant in the input, so no
    perturbation can ever flip a prediction."""
    params = init_params(cfg)
    for name in param_shapes(cfg):
        base = name.rsplit(".", 1)[-1]
        if not base.endswith("_g"):
            params[name].data[:] = 0.0
    return params


def _echo_model(cfg):
    """tok_emb = one-hot-ish copy routed straight to the output: the logits
    at row i are dominated by token i, so the prediction at dst flips
    whenever the token at dst-1 changes."""
    assert cfg.d_model >= cfg.vocab_size
    params = _constant_model(cfg)
    params["tok_emb"].data[:, :] = 0.0
    for t in range(cfg.vocab_size):
        params["tok_emb"].data[t, t] = 50.0
    params["pos_emb"].data[:] = 0.0
    w = np.zeros((cfg.d_model, cfg.vocab_size))
    w[:cfg.vocab_size, :] = np.eye(cfg.vocab_size) * 50.0
    params["w_out"].data[:] = w
    return params


def test_bucketing():
    hist = DependencyHistogram()
    assert hist.bucket(1) == 0
    assert hist.bucket(2) == 1
    assert hist.bucket(3) == 1
    assert hist.bucket(4) == 2
    assert hist.bucket(127) == 6
    assert hist.bucket(128) == 7
    assert hist.bucket(10**6) == 7  # overflow bucket


def test_histogram_rates_and_serialization(tmp_path):
    hist = DependencyHistogram()
    hist.add(DependencyRecord("a", 1, 2, "question", 1, True, 9))
    hist.add(DependencyRecord("a", 1, 3, "question", 2, False, 9))
    hist.add(DependencyRecord("a", 5, 7, "chain", 2, True, 9))
    assert hist.rates("question")[0] == 1.0
    assert hist.rates("question")[1] == 0.0
    assert hist.rates("question")[2] is None  # empty bucket omitted
    assert hist.total_rate("question") == 0.5
    assert hist.total_rate("chain") == 1.0
    obj = hist.to_json()
    assert obj["question_rates"][2] is None
    tsv = hist.to_tsv()
    assert tsv.splitlines()[0].startswith("# distance_lo")
    histogram_to_files(hist, tmp_path / "h.json", tmp_path / "h.tsv")
    assert (tmp_path / "h.json").exists() and (tmp_path / "h.tsv").exists()


def test_constant_model_never_flips(tiny_cfg, small_test, vocab):
    params = _constant_model(tiny_cfg)
    hist, recs = dependency_histogram(params, small_test[:4], vocab,
                                      perturb_budget=3, seed=0)
    assert len(recs) > 0
    assert all(not r.flipped for r in recs)
    assert hist.total_rate("question") == 0.0
    assert hist.total_rate("chain") == 0.0


def test_echo_model_flips_adjacent_only(vocab, small_test):
    """Echo model: prediction at dst copies token dst-1, so src=dst-1 always
    flips and more distant numeric sources never do."""
    cfg = ModelConfig(vocab_size=len(vocab.tokens), d_model=1088, n_layers=1,
                      n_heads=1, d_ff=4, max_seq_len=160)
    params = _echo_model(cfg)
    _, recs = dependency_histogram(params, small_test[:2], vocab,
                                   perturb_budget=2, seed=0)
    for r in recs:
        assert r.flipped == (r.distance == 1), (r.src_pos, r.dst_pos)


def test_probe_pair_validation(tiny_params, small_test, vocab):
    rec = small_test[0]
    nums = _numeric_positions(rec, vocab)
    chain_nums = [i for i in nums if i >= rec.encoded.question_len]
    src, dst = nums[0], chain_nums[1]
    subs = perturb_substitutes(rec.encoded.ids[src], vocab, 3, make_rng(0))
    out = probe_pair(tiny_params, rec, src, dst, subs, vocab)
    assert out.distance == dst - src
    assert out.src_region == "question"
    with pytest.raises(BadPositions):
        probe_pair(tiny_params, rec, dst, src, subs, vocab)  # src after dst
    with pytest.raises(BadPositions):
        # dst outside the chain region (delimiter onwards / question region)
        probe_pair(tiny_params, rec, src, nums[1], subs, vocab)
    with pytest.raises(NotNumeric):
        probe_pair(tiny_params, rec, src - 1, dst, subs, vocab)
    with pytest.raises(ValueError):
        probe_pair(tiny_params, rec, src, dst, [], vocab)
    with pytest.raises(ValueError):
        probe_pair(tiny_params, rec, src, dst, [rec.encoded.ids[src]], vocab)


def test_perturb_substitutes(vocab):
    # single digit: all nine other digits
    subs = perturb_substitutes(numeric_id(4, vocab), vocab, 9, make_rng(1))
    assert len(subs) == 9
    assert numeric_id(4, vocab) not in subs
    assert {numeric_value(s, vocab) for s in subs} == set(range(10)) - {4}
    # multi digit: `budget` distinct random others
    subs = perturb_substitutes(numeric_id(57, vocab), vocab, 9, make_rng(2))
    assert len(subs) == len(set(subs)) == 9
    assert numeric_id(57, vocab) not in subs
    # deterministic in the rng
    again = perturb_substitutes(numeric_id(57, vocab), vocab, 9, make_rng(2))
    assert subs == again


def test_dependency_histogram_deterministic(tiny_params, small_test, vocab):
    h1, r1 = dependency_histogram(tiny_params, small_test[:3], vocab,
                                  perturb_budget=2, seed=7)
    h2, r2 = dependency_histogram(tiny_params, small_test[:3], vocab,
                                  perturb_budget=2, seed=7)
    assert h1.to_json() == h2.to_json()
    assert r1 == r2
    with pytest.raises(ValueError):
        dependency_histogram(tiny_params, [], vocab)


def test_dependency_src_regions(tiny_params, small_test, vocab):
    _, recs = dependency_histogram(tiny_params, small_test[:3], vocab,
                                   perturb_budget=2, seed=0)
    for r in recs:
        assert r.dst_pos > r.src_pos
        assert r.distance == r.dst_pos - r.src_pos
        assert r.src_region in ("question", "chain")


def test_case_template_validation(tiny_params, vocab):
    with pytest.raises(TemplateError):
        premise_consistency_probe(
            tiny_params,
            CaseTemplate(question="no slot here ?", prefix="first 16 - {n} =",
                         minuend=16, premise=4),
            vocab)
    tpl = CaseTemplate(question="x {p}", prefix="y {n}", minuend=10, premise=2, op="%")
    with pytest.raises(TemplateError):
        tpl.expected(3)
    assert CaseTemplate(question="", prefix="", minuend=10, premise=2,
                        op="+").expected(3) == 13


def test_premise_consistency_probe_runs(tiny_params, vocab):
    tpl = CaseTemplate(
        question="Anna has 16 apples . Anna loses {p} apples . "
                 "How many apples does Anna have now ?",
        prefix="first 16 - {n} =", minuend=16, premise=4)
    out = premise_consistency_probe(tiny_params, tpl, vocab)
    assert out["n_probes"] == 9  # digits 0..9 minus the true premise
    assert 0.0 <= out["frac_follows_question"] <= 1.0
    assert 0.0 <= out["frac_follows_prefix"] <= 1.0
    assert out["frac_follows_question"] + out["frac_follows_prefix"] <= 1.0
