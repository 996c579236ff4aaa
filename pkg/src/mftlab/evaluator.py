"""Answer extraction and greedy accuracy measurement on clean and
distractor (IC) test splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

from .errors import MissingBaseline
from .model import ModelParams, generate
from .synthdata import DatasetRecord
from .tokenizer import Vocab, is_numeric_token, numeric_value


@dataclass
class ProblemResult:
    id: str
    extracted: int | None
    gold: int
    correct: bool
    gen_len: int
    pair_id: str | None = None


@dataclass
class EvalReport:
    split: str
    n: int
    n_correct: int
    accuracy: float
    results: list[ProblemResult] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def extract_answer(ids: list[int], vocab: Vocab) -> int | None:
    """Value of the numeric token right after the last answer delimiter;
    falls back to the last "answer is <n>" template when no delimiter exists.
    Never raises on arbitrary sequences."""
    for i in range(len(ids) - 1, -1, -1):
        if ids[i] == vocab.answer_delim:
            for j in range(i + 1, len(ids)):
                if is_numeric_token(ids[j], vocab):
                    return numeric_value(ids[j], vocab)
                if ids[j] != vocab.answer_delim:
                    break
            return None
    answer_id = vocab.index.get("answer")
    is_id = vocab.index.get("is")
    for i in range(len(ids) - 3, -1, -1):
        if ids[i] == answer_id and ids[i + 1] == is_id and is_numeric_token(ids[i + 2], vocab):
            return numeric_value(ids[i + 2], vocab)
    return None


def eval_accuracy(params: ModelParams, records: list[DatasetRecord], vocab: Vocab,
                  max_new: int = 64) -> EvalReport:
    """Greedy generation from each question prompt; correct iff the extracted
    answer equals gold. Extracted None counts as incorrect."""
    if not records:
        raise ValueError("empty split")
    results = []
    for rec in records:
        prompt = rec.encoded.ids[:rec.encoded.question_len]
        gen = generate(prompt, params, temperature=0.0, max_new=max_new, eos_id=vocab.eos)
        got = extract_answer(gen, vocab)
        results.append(ProblemResult(
            id=rec.problem.id,
            extracted=got,
            gold=rec.problem.answer,
            correct=(got == rec.problem.answer),
            gen_len=len(gen),
            pair_id=rec.pair_id,
        ))
    n_correct = sum(r.correct for r in results)
    return EvalReport(
        split=records[0].split, n=len(results), n_correct=n_correct,
        accuracy=n_correct / len(results), results=results,
    )


def pair_deltas(clean: EvalReport, ic: EvalReport) -> list[tuple[str, int]]:
    """Per-pair correctness deltas (clean minus IC); they sum to
    (acc_clean - acc_ic) * n when the splits pair 1:1."""
    clean_by_id = {r.id: r for r in clean.results}
    out = []
    for r in ic.results:
        base = clean_by_id.get(r.pair_id)
        if base is not None:
            out.append((r.pair_id, int(base.correct) - int(r.correct)))
    return out


def compare_runs(reports: dict[str, list[dict[str, EvalReport]]],
                 baseline: str) -> tuple[str, dict]:
    """Summarize method x seed accuracy grids.

    `reports` maps method name -> list (one entry per seed) of
    {split: EvalReport}. Returns (aligned text table, JSON-able summary) with
    per-method means and deltas against the baseline row."""
    if baseline not in reports:
        raise MissingBaseline(f"baseline method {baseline!r} has no reports")

    def mean_acc(method: str, split: str) -> float | None:
        vals = [seed_reports[split].accuracy
                for seed_reports in reports[method] if split in seed_reports]
        return sum(vals) / len(vals) if vals else None

    splits = ["test", "test_ic"]
    summary = {"baseline": baseline, "methods": {}}
    for method in reports:
        entry = {"n_seeds": len(reports[method])}
        for split, key in zip(splits, ("clean_acc", "ic_acc")):
            entry[key] = mean_acc(method, split)
        summary["methods"][method] = entry
    base = summary["methods"][baseline]
    for method, entry in summary["methods"].items():
        for key, dkey in (("clean_acc", "delta_clean"), ("ic_acc", "delta_ic")):
            if entry[key] is not None and base[key] is not None:
                entry[dkey] = entry[key] - base[key]
            else:
                entry[dkey] = None

    cols = ["method", "clean_acc", "ic_acc", "delta_clean", "delta_ic"]
    lines = ["  ".join(f"{c:>12}" for c in cols)]
    for method, entry in summary["methods"].items():
        cells = [f"{method:>12}"]
        for c in cols[1:]:
            v = entry.get(c)
            cells.append(f"{v:>12.4f}" if v is not None else f"{'-':>12}")
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n", summary


def report_to_file(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(report.to_json(), f, indent=2)
        f.write("\n")
