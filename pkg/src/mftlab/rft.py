"""Offline rejection-sampling augmentation: sample k solutions per training
question from a trained checkpoint, keep the ones whose extracted final
answer matches the gold answer, dedupe exactly, and merge into the original
dataset for a second training stage."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

from .errors import SchemaMismatch, VocabMismatch
from .evaluator import extract_answer
from .model import ModelParams, generate
from .rngutil import make_rng
from .synthdata import (DatasetRecord, Problem, read_jsonl, record_to_json,
                        record_from_json, validate_record)
from .tokenizer import TokenSeq, Vocab, decode


@dataclass
class RftConfig:
    k: int = 10
    temperature: float = 0.8
    max_new: int = 64
    dedupe: str = "exact"  # exact | none
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.dedupe not in ("exact", "none"):
            raise ValueError(f"unknown dedupe mode {self.dedupe!r}")


@dataclass
class RftStats:
    n_questions: int
    sampled: int
    kept: int
    rejected: int  # wrong answer or dropped as duplicate


def rft_generate(params: ModelParams, dataset_path: str | Path, cfg: RftConfig,
                 vocab: Vocab, out_path: str | Path) -> tuple[Path, RftStats]:
    """Write the augmentation JSONL; deterministic in (seed, ckpt, cfg)."""
    if params.cfg.vocab_size != len(vocab.tokens):
        raise VocabMismatch(
            f"checkpoint vocab size {params.cfg.vocab_size} != vocabulary {len(vocab.tokens)}")
    records = read_jsonl(dataset_path, split="train")
    kept_records: list[DatasetRecord] = []
    sampled = kept = 0
    for rec in records:
        prompt = rec.encoded.ids[:rec.encoded.question_len]
        gold_target = tuple(rec.encoded.target_ids)
        seen: set[tuple[int, ...]] = {gold_target} if cfg.dedupe == "exact" else set()
        for j in range(cfg.k):
            sampled += 1
            id_key = zlib.crc32(rec.problem.id.encode("utf-8"))
            rng_seed = int(make_rng(cfg.seed, 0x12F7, id_key, j).integers(0, 2**62))
            gen = generate(prompt, params, temperature=cfg.temperature,
                           max_new=cfg.max_new, rng_seed=rng_seed, eos_id=vocab.eos)
            if extract_answer(gen, vocab) != rec.problem.answer:
                continue
            key = tuple(gen)
            if cfg.dedupe == "exact":
                if key in seen:
                    continue
                seen.add(key)
            body = gen[:-1] if gen and gen[-1] == vocab.eos else list(gen)
            ids = list(prompt) + list(gen)
            if not gen or gen[-1] != vocab.eos:
                ids = ids + [vocab.eos]
            kept += 1
            new = DatasetRecord(
                problem=Problem(
                    id=f"{rec.problem.id}-rft{j}",
                    question=rec.problem.question,
                    chain=[decode(body, vocab)],
                    answer=rec.problem.answer,
                    step_graph=[],
                    distractor_slots=[],
                ),
                encoded=TokenSeq(ids=ids, question_len=rec.encoded.question_len),
                split="train",
                source="rft",
                parent_id=rec.problem.id,
            )
            kept_records.append(new)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        for r in kept_records:
            f.write(json.dumps(record_to_json(r), ensure_ascii=False) + "\n")
    stats = RftStats(n_questions=len(records), sampled=sampled, kept=kept,
                     rejected=sampled - kept)
    return out_path, stats


REQUIRED_KEYS = {"id", "split", "question", "chain", "answer", "question_len",
                 "ids", "step_graph", "pair_id"}


def merge_dataset(original_path: str | Path, augmentation_path: str | Path,
                  out_path: str | Path) -> Path:
    """Concatenate original + augmentation with unique ids; original records
    are all retained and the merged line count is the sum of the inputs."""
    out_path = Path(out_path)
    seen_ids: set[str] = set()
    lines_out: list[str] = []
    for which, path in (("original", original_path), ("augmentation", augmentation_path)):
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                if not line.strip():
                    continue
                obj = json.loads(line)
                missing = REQUIRED_KEYS - obj.keys()
                if missing:
                    raise SchemaMismatch(
                        f"{which} record at line {lineno} missing keys {sorted(missing)}")
                if len(obj["ids"]) < obj["question_len"]:
                    raise SchemaMismatch(f"{which} record {obj['id']} has bad question_len")
                base_id = obj["id"]
                uid = base_id
                k = 0
                while uid in seen_ids:
                    k += 1
                    uid = f"{base_id}~{k}"
                seen_ids.add(uid)
                obj["id"] = uid
                lines_out.append(json.dumps(obj, ensure_ascii=False))
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines_out:
            f.write(line + "\n")
    return out_path


def revalidate(path: str | Path, vocab: Vocab) -> int:
    """Every merged record must pass the arithmetic-soundness check, or be a
    model sample whose extracted answer is correct. Returns the record count."""
    n = 0
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            rec = record_from_json(json.loads(line))
            if rec.source == "rft":
                got = extract_answer(rec.encoded.target_ids, vocab)
                assert got == rec.problem.answer, f"unsound rft record {rec.problem.id}"
            else:
                validate_record(rec, vocab)
            n += 1
    return n
