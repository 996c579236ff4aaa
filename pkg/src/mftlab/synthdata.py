"""Synthetic multi-step arithmetic word problems with chain-of-thought,
plus the distractor (IC) variants.

Problems are a linear accumulate/consume chain over a running count: the
question introduces a starting value and one operand per step, each chain
step is a pure "a op b = c" equation, and the target region ends with
"#### <answer>". Operand ranges are kept small so the arithmetic fact table
is learnable by a desk-scale model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from . import wordbank
from .errors import GenerationExhausted, TooManyDistractors
from .rngutil import make_rng
from .tokenizer import Vocab, TokenSeq, encode, decode

# Operand / value ranges. Values stay well inside the atomic-token range so
# chains remain representable and the fact table stays small.
START_LO, START_HI = 2, 15
OPERAND_LO, OPERAND_HI = 2, 9
VALUE_CAP = 20

STEP_WORDS = ["first", "then", "so", "finally"]

MAX_ATTEMPTS = 1000

# Number-free filler sentences mixed into questions so that sentence
# positions vary across the corpus; without them every question has an
# identical token layout and a model can address operands purely by
# absolute position, which makes the distractor split degenerate.
MAX_FILLERS = 2


def _filler_sentence(rng, name: str, item: str) -> str:
    if rng.integers(2):  # mention a bystander half the time
        subj = name
        while subj == name:
            subj = wordbank.NAMES[rng.integers(len(wordbank.NAMES))]
        obj = item
        while obj == item:
            obj = wordbank.ITEMS[rng.integers(len(wordbank.ITEMS))]
    else:
        subj, obj = name, item
    kind = rng.integers(3)
    if kind == 0:
        return f"{subj} likes the {obj} ."
    if kind == 1:
        return f"{subj} counts the {obj} ."
    return f"{subj} looks at the {obj} ."


@dataclass
class Problem:
    id: str
    question: str
    chain: list[str]  # each "a op b = c"
    answer: int
    # step_graph[i] lists the premise sources of step i: non-negative ints
    # are earlier step indices, negative ints encode question slots as
    # -(slot + 1). Every source index is < its own step index.
    step_graph: list[list[int]]
    distractor_slots: list[int]  # sentence boundaries open for distractors
    question_numbers: list[int] = field(default_factory=list)


@dataclass
class DatasetRecord:
    problem: Problem
    encoded: TokenSeq
    split: str  # train | test | test_ic
    pair_id: str | None = None
    source: str | None = None
    parent_id: str | None = None


def _apply(a: int, op: str, b: int) -> int | None:
    if op == "+":
        c = a + b
        return c if c <= VALUE_CAP else None
    if op == "-":
        return a - b if a >= b else None
    if op == "*":
        c = a * b
        return c if c <= VALUE_CAP else None
    if op == "/":
        return a // b if b != 0 and a % b == 0 else None
    raise ValueError(op)


def eval_chain(chain: list[str]) -> int:
    """Independent integer evaluator over the chain; returns the final value
    and checks every written equation."""
    value = None
    for step in chain:
        a_s, op, b_s, eq, c_s = step.split()
        assert eq == "="
        a, b, c = int(a_s), int(b_s), int(c_s)
        got = _apply(a, op, b)
        if got is None or got != c:
            raise ValueError(f"bad step: {step!r}")
        if value is not None and a != value:
            raise ValueError(f"step does not chain: {step!r}")
        value = c
    if value is None:
        raise ValueError("empty chain")
    return value


def _event_sentence(name: str, item: str, op: str, b: int) -> str:
    if op == "+":
        return f"{name} gets {b} more {item} ."
    if op == "-":
        return f"{name} loses {b} {item} ."
    if op == "*":
        return f"every one of the {item} turns into {b} {item} ."
    if op == "/":
        return f"{name} shares them equally between {b} friends ."
    raise ValueError(op)


def gen_problem(rng_seed: int, depth: int, tag: str = "p") -> Problem:
    """Deterministic problem with exactly `depth` arithmetic steps.

    Operands are chosen by rejection so all intermediates stay in range,
    subtraction never goes negative and division is exact.
    """
    if not 2 <= depth <= 4:
        raise ValueError(f"depth must be in 2..4, got {depth}")
    rng = make_rng(rng_seed, depth, 0x5D47A)
    for _ in range(MAX_ATTEMPTS):
        name = wordbank.NAMES[rng.integers(len(wordbank.NAMES))]
        item = wordbank.ITEMS[rng.integers(len(wordbank.ITEMS))]
        start = int(rng.integers(START_LO, START_HI + 1))
        value = start
        ops, operands, values = [], [], []
        ok = True
        for _ in range(depth):
            for _retry in range(20):
                op = "+-*/"[rng.integers(4)]
                b = int(rng.integers(OPERAND_LO, OPERAND_HI + 1))
                nxt = _apply(value, op, b)
                if nxt is not None:
                    break
            else:
                ok = False
                break
            ops.append(op)
            operands.append(b)
            value = nxt
            values.append(value)
        if not ok:
            continue
        sentences = [f"{name} has {start} {item} ."]
        sentences += [_event_sentence(name, item, op, b) for op, b in zip(ops, operands)]
        sentences.append(f"How many {item} does {name} have now ?")
        for _ in range(int(rng.integers(0, MAX_FILLERS + 1))):
            slot = int(rng.integers(1, len(sentences)))  # never first or last
            sentences.insert(slot, _filler_sentence(rng, name, item))
        chain = []
        prev = start
        for op, b, v in zip(ops, operands, values):
            chain.append(f"{prev} {op} {b} = {v}")
            prev = v
        step_graph = []
        for i in range(depth):
            prev_src = -1 if i == 0 else i - 1  # slot 0 is the start value
            step_graph.append([prev_src, -(i + 2)])
        return Problem(
            id=f"{tag}{rng_seed}",
            question=" ".join(sentences),
            chain=chain,
            answer=value,
            step_graph=step_graph,
            distractor_slots=list(range(1, len(sentences))),
            question_numbers=[start] + operands,
        )
    raise GenerationExhausted(f"no valid problem after {MAX_ATTEMPTS} attempts (seed={rng_seed})")


def _sentences(question: str) -> list[str]:
    """Split the rendered question back into sentences (terminator kept)."""
    toks = question.split()
    out, cur = [], []
    for t in toks:
        cur.append(t)
        if t in (".", "?"):
            out.append(" ".join(cur))
            cur = []
    if cur:
        out.append(" ".join(cur))
    return out


def chain_values(p: Problem) -> set[int]:
    vals = set(p.question_numbers)
    for step in p.chain:
        a, _op, b, _eq, c = step.split()
        vals.update((int(a), int(b), int(c)))
    vals.add(p.answer)
    return vals


def inject_distractors(p: Problem, rng_seed: int, k: int) -> Problem:
    """Copy of `p` with k irrelevant sentences inserted into the question.

    Each distractor names a different person and item and carries a fresh
    number disjoint from all operands, intermediates and the answer."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(p.distractor_slots):
        raise TooManyDistractors(f"k={k} exceeds {len(p.distractor_slots)} slots")
    rng = make_rng(rng_seed, 0xD157)
    used = chain_values(p)
    sentences = _sentences(p.question)
    protagonist = sentences[0].split()[0]
    own_item = sentences[0].split()[-2]
    slots = sorted(rng.choice(p.distractor_slots, size=k, replace=False).tolist(), reverse=True)
    distractor_numbers = []
    for slot in slots:
        other = protagonist
        while other == protagonist:
            other = wordbank.NAMES[rng.integers(len(wordbank.NAMES))]
        other_item = own_item
        while other_item == own_item:
            other_item = wordbank.ITEMS[rng.integers(len(wordbank.ITEMS))]
        d = int(rng.integers(START_LO, START_HI + 1))
        for _ in range(MAX_ATTEMPTS):
            if d not in used:
                break
            d = int(rng.integers(START_LO, START_HI + 1))
        else:
            raise GenerationExhausted("could not find a fresh distractor number")
        used.add(d)
        distractor_numbers.append(d)
        sentences.insert(slot, f"{other} has {d} {other_item} .")
    return Problem(
        id=p.id + "-ic",
        question=" ".join(sentences),
        chain=list(p.chain),
        answer=p.answer,
        step_graph=[list(s) for s in p.step_graph],
        distractor_slots=list(p.distractor_slots),
        question_numbers=list(p.question_numbers),
    )


def render_target_text(p: Problem) -> str:
    parts = []
    for i, step in enumerate(p.chain):
        parts.append(f"{STEP_WORDS[min(i, len(STEP_WORDS) - 1)]} {step} .")
    parts.append(f"{wordbank.ANSWER_DELIM} {p.answer}")
    return " ".join(parts)


def render_example(p: Problem, vocab: Vocab, split: str = "train",
                   pair_id: str | None = None) -> DatasetRecord:
    q_ids = [vocab.bos] + encode(p.question, vocab)
    t_ids = encode(render_target_text(p), vocab) + [vocab.eos]
    seq = TokenSeq(ids=q_ids + t_ids, question_len=len(q_ids))
    return DatasetRecord(problem=p, encoded=seq, split=split, pair_id=pair_id)


def record_to_json(r: DatasetRecord) -> dict:
    obj = {
        "id": r.problem.id,
        "split": r.split,
        "question": r.problem.question,
        "chain": r.problem.chain,
        "answer": r.problem.answer,
        "question_len": r.encoded.question_len,
        "ids": r.encoded.ids,
        "step_graph": r.problem.step_graph,
        "pair_id": r.pair_id,
    }
    if r.source is not None:
        obj["source"] = r.source
        obj["parent_id"] = r.parent_id
    return obj


def record_from_json(obj: dict) -> DatasetRecord:
    p = Problem(
        id=obj["id"],
        question=obj["question"],
        chain=list(obj["chain"]),
        answer=obj["answer"],
        step_graph=[list(s) for s in obj["step_graph"]],
        distractor_slots=[],
        question_numbers=[],
    )
    return DatasetRecord(
        problem=p,
        encoded=TokenSeq(ids=list(obj["ids"]), question_len=obj["question_len"]),
        split=obj["split"],
        pair_id=obj.get("pair_id"),
        source=obj.get("source"),
        parent_id=obj.get("parent_id"),
    )


def write_jsonl(records: list[DatasetRecord], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(json.dumps(record_to_json(r), ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: str | Path, split: str | None = None) -> list[DatasetRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                rec = record_from_json(json.loads(line))
                if split is None or rec.split == split:
                    out.append(rec)
    return out


@dataclass
class DataConfig:
    n_train: int = 5000
    n_test: int = 500
    n_test_ic: int = 500
    depth_lo: int = 2
    depth_hi: int = 2
    seed: int = 0
    distractors_k: int = 1


def gen_dataset(cfg: DataConfig, vocab: Vocab, path: str | Path) -> Path:
    """Writes one JSONL with disjoint ids per split; test_ic problems are
    distractor-injected copies of test problems (paired ids)."""
    if min(cfg.n_train, cfg.n_test, cfg.n_test_ic) <= 0:
        raise ValueError("split counts must be > 0")
    if cfg.n_test_ic > cfg.n_test:
        raise ValueError("n_test_ic cannot exceed n_test (IC problems pair with test)")
    rng = make_rng(cfg.seed, 0xDA7A)
    seen_questions: set[str] = set()
    records: list[DatasetRecord] = []

    def fresh(tag: str, n: int, split: str) -> list[Problem]:
        out = []
        while len(out) < n:
            sub_seed = int(rng.integers(0, 2**63 - 1))
            depth = int(rng.integers(cfg.depth_lo, cfg.depth_hi + 1))
            p = gen_problem(sub_seed, depth, tag=tag)
            if p.question in seen_questions:
                continue
            seen_questions.add(p.question)
            p.id = f"{tag}{len(out):06d}"
            out.append(p)
            records.append(render_example(p, vocab, split=split))
        return out

    fresh("tr", cfg.n_train, "train")
    test_problems = fresh("te", cfg.n_test, "test")
    for p in test_problems[:cfg.n_test_ic]:
        ic = inject_distractors(p, rng_seed=int(rng.integers(0, 2**63 - 1)), k=cfg.distractors_k)
        records.append(render_example(ic, vocab, split="test_ic", pair_id=p.id))
    return write_jsonl(records, path)


def validate_record(r: DatasetRecord, vocab: Vocab) -> None:
    """Arithmetic soundness + round-trip checks; raises on failure."""
    assert eval_chain(r.problem.chain) == r.problem.answer
    for i, srcs in enumerate(r.problem.step_graph):
        for s in srcs:
            assert s < i, "step_graph must be forward-only"
    text = r.problem.question + " " + render_target_text(r.problem)
    ids = [vocab.bos] + encode(text, vocab) + [vocab.eos]
    assert ids == r.encoded.ids
    assert decode(r.encoded.ids, vocab).split() == \
        [vocab.tokens[vocab.bos]] + text.split() + [vocab.tokens[vocab.eos]]
