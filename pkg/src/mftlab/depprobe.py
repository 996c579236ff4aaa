"""Token-dependency probe: perturb one numeric token under teacher forcing
and record whether a later numeric token's argmax prediction flips, bucketed
by token distance and by whether the source lies in the question or in the
chain. Also the premise-consistency case probe (conflicting question vs
chain-prefix premise)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadPositions, NotNumeric, TemplateError
from .model import ModelParams, embed, forward_logits, generate
from .rngutil import make_rng
from .synthdata import DatasetRecord
from .tokenizer import Vocab, is_numeric_token, numeric_id, numeric_value

DISTANCE_EDGES = [1, 2, 4, 8, 16, 32, 64, 128]
DEFAULT_PERTURB_BUDGET = 9
DEFAULT_SAMPLE_SIZE = 300


@dataclass
class DependencyRecord:
    example_id: str
    src_pos: int
    dst_pos: int
    src_region: str  # question | chain
    distance: int
    flipped: bool
    n_perturbations: int


@dataclass
class DependencyHistogram:
    edges: list[int] = field(default_factory=lambda: list(DISTANCE_EDGES))
    question_flips: list[int] = field(default_factory=list)
    question_counts: list[int] = field(default_factory=list)
    chain_flips: list[int] = field(default_factory=list)
    chain_counts: list[int] = field(default_factory=list)

    def __post_init__(self):
        nb = len(self.edges)  # final bucket is [edges[-1], inf)
        for name in ("question_flips", "question_counts", "chain_flips", "chain_counts"):
            if not getattr(self, name):
                setattr(self, name, [0] * nb)

    def bucket(self, distance: int) -> int:
        for b in range(len(self.edges) - 1):
            if self.edges[b] <= distance < self.edges[b + 1]:
                return b
        return len(self.edges) - 1

    def add(self, rec: DependencyRecord) -> None:
        b = self.bucket(rec.distance)
        if rec.src_region == "question":
            self.question_counts[b] += 1
            self.question_flips[b] += int(rec.flipped)
        else:
            self.chain_counts[b] += 1
            self.chain_flips[b] += int(rec.flipped)

    def rates(self, region: str) -> list[float | None]:
        """Per-bucket flip rate; empty buckets report None (rate omitted)."""
        flips = self.question_flips if region == "question" else self.chain_flips
        counts = self.question_counts if region == "question" else self.chain_counts
        return [f / c if c else None for f, c in zip(flips, counts)]

    def total_rate(self, region: str) -> float:
        flips = self.question_flips if region == "question" else self.chain_flips
        counts = self.question_counts if region == "question" else self.chain_counts
        total = sum(counts)
        return sum(flips) / total if total else 0.0

    def to_json(self) -> dict:
        return {
            "edges": self.edges,
            "question_rates": self.rates("question"),
            "chain_rates": self.rates("chain"),
            "counts": {"question": self.question_counts, "chain": self.chain_counts},
        }

    def to_tsv(self) -> str:
        lines = ["# distance_lo\tquestion_rate\tchain_rate\tquestion_n\tchain_n"]
        qr, cr = self.rates("question"), self.rates("chain")
        for b, lo in enumerate(self.edges):
            q = "" if qr[b] is None else f"{qr[b]:.6f}"
            c = "" if cr[b] is None else f"{cr[b]:.6f}"
            lines.append(f"{lo}\t{q}\t{c}\t{self.question_counts[b]}\t{self.chain_counts[b]}")
        return "\n".join(lines) + "\n"


def _chain_span(rec: DatasetRecord, vocab: Vocab) -> tuple[int, int]:
    """[question_len, delimiter) — the chain-of-thought region."""
    ids = rec.encoded.ids
    try:
        delim = ids.index(vocab.answer_delim)
    except ValueError:
        delim = len(ids)
    return rec.encoded.question_len, delim


def _argmax_at(params: ModelParams, ids: list[int], dst_positions: list[int]) -> dict[int, int]:
    logits = forward_logits(embed(ids, params), params).data
    return {d: int(np.argmax(logits[d - 1])) for d in dst_positions}


def probe_pair(params: ModelParams, rec: DatasetRecord, src_pos: int, dst_pos: int,
               perturb_set: list[int], vocab: Vocab) -> DependencyRecord:
    """Baseline = argmax prediction of the token at dst_pos under teacher
    forcing; flipped = any substitute at src_pos changes that argmax."""
    ids = rec.encoded.ids
    chain_lo, chain_hi = _chain_span(rec, vocab)
    if not perturb_set:
        raise ValueError("perturb_set must be non-empty")
    if not (0 <= src_pos < dst_pos < len(ids)):
        raise BadPositions(f"src={src_pos}, dst={dst_pos}")
    if not (chain_lo <= dst_pos < chain_hi):
        raise BadPositions(f"dst={dst_pos} not in chain region [{chain_lo}, {chain_hi})")
    if not is_numeric_token(ids[src_pos], vocab) or not is_numeric_token(ids[dst_pos], vocab):
        raise NotNumeric(f"positions {src_pos}/{dst_pos} must hold numeric tokens")
    if ids[src_pos] in perturb_set:
        raise ValueError("perturb_set must exclude the original source token")
    baseline = _argmax_at(params, ids, [dst_pos])[dst_pos]
    flipped = False
    for sub in perturb_set:
        mutated = list(ids)
        mutated[src_pos] = sub
        if _argmax_at(params, mutated, [dst_pos])[dst_pos] != baseline:
            flipped = True
            break
    region = "question" if src_pos < rec.encoded.question_len else "chain"
    return DependencyRecord(
        example_id=rec.problem.id, src_pos=src_pos, dst_pos=dst_pos,
        src_region=region, distance=dst_pos - src_pos, flipped=flipped,
        n_perturbations=len(perturb_set),
    )


def perturb_substitutes(tid: int, vocab: Vocab, budget: int,
                        rng: np.random.Generator) -> list[int]:
    """All other digits for single-digit sources; `budget` random other
    numbers for multi-digit ones."""
    value = numeric_value(tid, vocab)
    if value < 10:
        subs = [numeric_id(d, vocab) for d in range(10) if d != value]
        return subs[:budget] if budget < len(subs) else subs
    subs = set()
    while len(subs) < budget:
        v = int(rng.integers(0, 1000))
        if v != value:
            subs.add(numeric_id(v, vocab))
    return sorted(subs)


def dependency_histogram(params: ModelParams, records: list[DatasetRecord], vocab: Vocab,
                         perturb_budget: int = DEFAULT_PERTURB_BUDGET,
                         seed: int = 0) -> tuple[DependencyHistogram, list[DependencyRecord]]:
    """Enumerate all eligible numeric (src, dst) pairs per record: src in
    question or chain, dst in chain, dst after src. Probes share forwards
    across pairs with the same (src, substitute)."""
    if not records:
        raise ValueError("need at least one record")
    hist = DependencyHistogram()
    all_recs: list[DependencyRecord] = []
    for rec in records:
        ids = rec.encoded.ids
        chain_lo, chain_hi = _chain_span(rec, vocab)
        dsts_all = [i for i in range(chain_lo, chain_hi) if is_numeric_token(ids[i], vocab)]
        srcs = [i for i in range(0, chain_hi) if is_numeric_token(ids[i], vocab)]
        if not dsts_all or not srcs:
            continue
        baselines = _argmax_at(params, ids, dsts_all)
        for src in srcs:
            dsts = [d for d in dsts_all if d > src]
            if not dsts:
                continue
            rng = make_rng(seed, 0xDE9, len(all_recs), src)
            subs = perturb_substitutes(ids[src], vocab, perturb_budget, rng)
            flipped = {d: False for d in dsts}
            for sub in subs:
                mutated = list(ids)
                mutated[src] = sub
                preds = _argmax_at(params, mutated, dsts)
                for d in dsts:
                    if preds[d] != baselines[d]:
                        flipped[d] = True
                if all(flipped.values()):
                    break
            region = "question" if src < rec.encoded.question_len else "chain"
            for d in dsts:
                drec = DependencyRecord(
                    example_id=rec.problem.id, src_pos=src, dst_pos=d,
                    src_region=region, distance=d - src, flipped=flipped[d],
                    n_perturbations=len(subs),
                )
                hist.add(drec)
                all_recs.append(drec)
    return hist, all_recs


@dataclass
class CaseTemplate:
    """Question with a premise slot and a chain prefix with a conflicting
    slot, e.g. question "... loses {p} ..." against prefix "16 - {n}"."""
    question: str  # contains "{p}"
    prefix: str    # contains "{n}", ends just after the conflicting operand
    minuend: int
    premise: int   # true premise value, a single digit
    op: str = "-"

    def expected(self, operand: int) -> int:
        if self.op == "-":
            return self.minuend - operand
        if self.op == "+":
            return self.minuend + operand
        raise TemplateError(f"unsupported op {self.op!r}")


def premise_consistency_probe(params: ModelParams, template: CaseTemplate, vocab: Vocab,
                              values: range = range(0, 10)) -> dict[str, float]:
    """For each conflicting value n (skipping the true premise), decode the
    step result greedily and classify it as question-following (uses the
    question operand), prefix-following (uses n), or other."""
    from .tokenizer import encode

    if "{p}" not in template.question or "{n}" not in template.prefix:
        raise TemplateError("question needs a {p} slot and prefix a {n} slot")
    follows_q = follows_prefix = total = 0
    for n in values:
        if n == template.premise:
            continue  # no conflict to probe
        text_q = template.question.replace("{p}", str(template.premise))
        text_pre = template.prefix.replace("{n}", str(n))
        prompt = [vocab.bos] + encode(text_q + " " + text_pre, vocab)
        gen = generate(prompt, params, temperature=0.0, max_new=8, eos_id=vocab.eos)
        predicted = next((numeric_value(t, vocab) for t in gen
                          if is_numeric_token(t, vocab)), None)
        total += 1
        want_q = template.expected(template.premise)
        want_n = template.expected(n)
        if predicted == want_q and want_q != want_n:
            follows_q += 1
        elif predicted == want_n:
            follows_prefix += 1
    if total == 0:
        raise TemplateError("no conflicting values to probe")
    return {
        "frac_follows_question": follows_q / total,
        "frac_follows_prefix": follows_prefix / total,
        "n_probes": total,
    }


def histogram_to_files(hist: DependencyHistogram, json_path: str | Path,
                       tsv_path: str | Path | None = None) -> None:
    Path(json_path).write_text(json.dumps(hist.to_json(), indent=2) + "\n")
    if tsv_path is not None:
        Path(tsv_path).write_text(hist.to_tsv())
