"""Fixed closed vocabulary with reversible whitespace tokenization.

Integers 0..999 are atomic tokens so that perturbing one numeric token is a
single, well-defined premise change for the dependency probe.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from . import wordbank
from .errors import IdOutOfRange, UnknownToken


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(compare=False)
    pad: int
    bos: int
    eos: int
    mask: int
    answer_delim: int
    num_lo: int  # id of token "0"; numbers are a contiguous id block
    num_hi: int  # id of token "999" (inclusive)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def special(self) -> dict[str, int]:
        return {
            "PAD": self.pad,
            "BOS": self.bos,
            "EOS": self.eos,
            "MASK": self.mask,
            "####": self.answer_delim,
        }

    def to_json(self) -> str:
        return json.dumps(
            {"tokens": list(self.tokens), "special": self.special},
            ensure_ascii=False,
            sort_keys=True,
        )


@dataclass
class TokenSeq:
    ids: list[int]
    question_len: int

    def __post_init__(self):
        if not 0 <= self.question_len <= len(self.ids):
            raise ValueError("question_len out of range")

    @property
    def target_ids(self) -> list[int]:
        return self.ids[self.question_len:]


def build_vocab() -> Vocab:
    """Deterministic closed vocabulary: specials, atomic integers 0..999,
    arithmetic symbols, the template word bank, and the answer delimiter."""
    tokens: list[str] = [wordbank.PAD, wordbank.BOS, wordbank.EOS, wordbank.MASK]
    num_lo = len(tokens)
    tokens.extend(str(n) for n in range(wordbank.NUM_MIN, wordbank.NUM_MAX + 1))
    num_hi = len(tokens) - 1
    tokens.extend(wordbank.SYMBOLS)
    tokens.append(wordbank.ANSWER_DELIM)
    tokens.extend(wordbank.NAMES)
    tokens.extend(wordbank.ITEMS)
    tokens.extend(wordbank.WORDS)
    index = {t: i for i, t in enumerate(tokens)}
    assert len(index) == len(tokens), "duplicate token in word bank"
    return Vocab(
        tokens=tuple(tokens),
        index=index,
        pad=index[wordbank.PAD],
        bos=index[wordbank.BOS],
        eos=index[wordbank.EOS],
        mask=index[wordbank.MASK],
        answer_delim=index[wordbank.ANSWER_DELIM],
        num_lo=num_lo,
        num_hi=num_hi,
    )


def encode(text: str, vocab: Vocab) -> list[int]:
    """One id per whitespace-delimited token.

    Raises UnknownToken naming the offending token and its byte offset.
    """
    ids = []
    offset = 0
    for piece in text.split():
        offset = text.index(piece, offset)
        tid = vocab.index.get(piece)
        if tid is None:
            raise UnknownToken(piece, len(text[:offset].encode("utf-8")))
        ids.append(tid)
        offset += len(piece)
    return ids


def decode(ids: list[int], vocab: Vocab) -> str:
    out = []
    for tid in ids:
        if not 0 <= tid < len(vocab.tokens):
            raise IdOutOfRange(f"token id {tid} out of range (vocab size {len(vocab.tokens)})")
        out.append(vocab.tokens[tid])
    return " ".join(out)


def is_numeric_token(tid: int, vocab: Vocab) -> bool:
    if not 0 <= tid < len(vocab.tokens):
        raise IdOutOfRange(f"token id {tid} out of range (vocab size {len(vocab.tokens)})")
    return vocab.num_lo <= tid <= vocab.num_hi


def numeric_value(tid: int, vocab: Vocab) -> int:
    """Integer value of an atomic number token."""
    if not is_numeric_token(tid, vocab):
        raise IdOutOfRange(f"token id {tid} is not numeric")
    return tid - vocab.num_lo


def numeric_id(value: int, vocab: Vocab) -> int:
    if not wordbank.NUM_MIN <= value <= wordbank.NUM_MAX:
        raise IdOutOfRange(f"{value} has no atomic token")
    return vocab.num_lo + value
