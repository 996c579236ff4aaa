"""Noise-injection framework: position policies x noise families, with the
linear mask-ratio warmup schedule.

Labels are never touched; only the input side of the next-token loss is
corrupted. Question tokens, BOS/EOS, the answer delimiter and the answer
itself are never noise-eligible under the target policies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .errors import InvalidMixture
from .model import ModelParams, embed, forward_logits
from .tensor import Tape, Tensor
from .tokenizer import TokenSeq, Vocab

FAMILIES = ("None", "MaskedLM", "EmbeddingDropout", "UniformEmbeddingNoise", "ScheduledSampling")
POLICIES = ("AllTokens", "AllTargetTokens", "BernoulliSource", "BernoulliTarget")

ARGMAX_TAU = 1e-6  # below this, scheduled sampling degenerates to argmax


@dataclass
class MaskSchedule:
    kind: str = "Constant"  # Constant | LinearWarmup
    warmup_steps: int = 0
    final_p: float | None = None  # defaults to NoiseConfig.p

    def __post_init__(self):
        if self.kind not in ("Constant", "LinearWarmup"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be >= 0")


@dataclass
class NoiseConfig:
    family: str = "None"
    position_policy: str = "BernoulliTarget"
    p: float = 0.0
    m: float = 1.0
    r: float = 0.0
    q_drop: float = 0.0
    alpha: float = 0.0
    tau: float = 1.0
    loss_on_noisy: bool = True
    schedule: MaskSchedule = field(default_factory=MaskSchedule)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown noise family {self.family!r}")
        if self.position_policy not in POLICIES:
            raise ValueError(f"unknown position policy {self.position_policy!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must be in [0, 1]")
        if not 0.0 <= self.q_drop <= 1.0:
            raise ValueError("q_drop must be in [0, 1]")
        if self.tau <= 0.0:
            raise ValueError("tau must be > 0")
        if self.alpha < 0.0:
            raise ValueError("alpha must be >= 0")
        if self.family == "MaskedLM" and abs(self.m + self.r - 1.0) > 1e-12:
            raise InvalidMixture(f"m + r must equal 1, got {self.m} + {self.r}")
        if isinstance(self.schedule, dict):
            self.schedule = MaskSchedule(**self.schedule)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "NoiseConfig":
        obj = dict(obj)
        if "schedule" in obj and isinstance(obj["schedule"], dict):
            obj["schedule"] = MaskSchedule(**obj["schedule"])
        return cls(**obj)


@dataclass
class NoisedBatchItem:
    ids: list[int]                      # original ground-truth ids
    noised_ids: list[int]               # == ids for embedding-level families
    mask_indicator: list[int]           # M, 0/1 per position
    loss_weights: list[float]           # per prediction position (len(ids)-1)
    emb_keep: np.ndarray | None = None  # [t, d] 0/1 keep matrix (dropout)
    emb_add: np.ndarray | None = None   # [t, d] additive noise (uniform noise)


def ratio_at(schedule: MaskSchedule, step: int, final_p: float | None = None) -> float:
    """Effective mask ratio at a training step; non-decreasing, equals
    final_p for all steps >= warmup_steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    p = schedule.final_p if schedule.final_p is not None else final_p
    if p is None:
        raise ValueError("no final_p available")
    if schedule.kind == "Constant" or schedule.warmup_steps == 0:
        return p
    return p * min(1.0, step / schedule.warmup_steps)


def eligible_positions(seq: TokenSeq, policy: str, vocab: Vocab) -> list[int]:
    """Positions a policy may corrupt. BOS, EOS, the answer delimiter and
    everything after it are never eligible."""
    n = len(seq.ids)
    try:
        delim = seq.ids.index(vocab.answer_delim)
    except ValueError:
        delim = n
    special = {0}
    special.update(i for i in range(delim, n))
    special.update(i for i, t in enumerate(seq.ids) if t in (vocab.bos, vocab.eos, vocab.pad))
    if policy in ("AllTargetTokens", "BernoulliTarget"):
        lo, hi = seq.question_len, n
    elif policy == "BernoulliSource":
        lo, hi = 0, seq.question_len
    elif policy == "AllTokens":
        lo, hi = 0, n
    else:
        raise ValueError(policy)
    return [i for i in range(lo, hi) if i not in special]


def select_positions(seq: TokenSeq, policy: str, p_effective: float, vocab: Vocab,
                     rng: np.random.Generator) -> list[int]:
    """Mask indicator M per position."""
    if not 0.0 <= p_effective <= 1.0:
        raise ValueError("p_effective must be in [0, 1]")
    m = [0] * len(seq.ids)
    elig = eligible_positions(seq, policy, vocab)
    if policy in ("AllTokens", "AllTargetTokens"):
        for i in elig:
            m[i] = 1
    else:
        draws = rng.random(len(elig))
        for i, u in zip(elig, draws):
            if u < p_effective:
                m[i] = 1
    return m


def apply_masked_lm(ids: list[int], mask_indicator: list[int], m: float, r: float,
                    vocab: Vocab, rng: np.random.Generator) -> list[int]:
    """At each selected position: MASK with prob m, else a token drawn
    uniformly from the non-special vocabulary."""
    if abs(m + r - 1.0) > 1e-12:
        raise InvalidMixture(f"m + r must equal 1, got {m} + {r}")
    specials = set(vocab.special.values())
    regular = [t for t in range(len(vocab.tokens)) if t not in specials]
    out = list(ids)
    for i, flag in enumerate(mask_indicator):
        if flag:
            if rng.random() < m:
                out[i] = vocab.mask
            else:
                out[i] = regular[rng.integers(len(regular))]
    return out


def apply_embedding_dropout(embs: np.ndarray, mask_indicator: list[int], q_drop: float,
                            rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension zeroing with probability q_drop on selected rows; no
    inverse rescaling, so q_drop=1 is an exact full drop.

    Returns (noised embeddings, keep matrix)."""
    keep = np.ones_like(embs)
    for i, flag in enumerate(mask_indicator):
        if flag:
            keep[i] = (rng.random(embs.shape[1]) >= q_drop).astype(np.float64)
    return embs * keep, keep


def neftune_scale(seq_len: int, d_model: int) -> float:
    """Normalizer c = sqrt(seq_len * d_model)."""
    return math.sqrt(seq_len * d_model)


def apply_uniform_noise(embs: np.ndarray, mask_indicator: list[int], alpha: float,
                        seq_len: int, d_model: int,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Add iid uniform(-alpha/c, alpha/c) per dimension on selected rows.

    Returns (noised embeddings, additive offset matrix)."""
    offset = np.zeros_like(embs)
    if alpha > 0:
        bound = alpha / neftune_scale(seq_len, d_model)
        for i, flag in enumerate(mask_indicator):
            if flag:
                offset[i] = rng.uniform(-bound, bound, size=embs.shape[1])
    return embs + offset, offset


def apply_scheduled_sampling(ids: list[int], mask_indicator: list[int], params: ModelParams,
                             tau: float, rng: np.random.Generator) -> list[int]:
    """Two-pass replacement: a non-differentiated first pass on the ground
    truth yields logits O; each selected token i is replaced by a draw from
    softmax(O[i-1] / tau). Position 0 is never replaced."""
    if not any(mask_indicator):
        return list(ids)
    logits = forward_logits(embed(ids, params), params).data  # no tape: first pass
    out = list(ids)
    for i, flag in enumerate(mask_indicator):
        if flag and i > 0:
            row = logits[i - 1]
            if tau < ARGMAX_TAU:
                out[i] = int(np.argmax(row))
            else:
                z = row / tau
                z -= z.max()
                p = np.exp(z)
                p /= p.sum()
                out[i] = int(rng.choice(len(p), p=p))
    return out


def corrupt(seq: TokenSeq, cfg: NoiseConfig, step: int, params: ModelParams,
            vocab: Vocab, rng: np.random.Generator) -> NoisedBatchItem:
    """Compose schedule -> position selection -> noise family, and set the
    loss weights."""
    from .model import target_loss_weights  # local to avoid cycle at import

    if cfg.family == "None":
        m = [0] * len(seq.ids)
        return NoisedBatchItem(
            ids=list(seq.ids), noised_ids=list(seq.ids), mask_indicator=m,
            loss_weights=target_loss_weights(seq),
        )
    p_eff = ratio_at(cfg.schedule, step, final_p=cfg.p)
    m = select_positions(seq, cfg.position_policy, p_eff, vocab, rng)
    item = NoisedBatchItem(
        ids=list(seq.ids), noised_ids=list(seq.ids), mask_indicator=m,
        loss_weights=target_loss_weights(seq, m, cfg.loss_on_noisy),
    )
    if cfg.family == "MaskedLM":
        item.noised_ids = apply_masked_lm(seq.ids, m, cfg.m, cfg.r, vocab, rng)
    elif cfg.family == "ScheduledSampling":
        item.noised_ids = apply_scheduled_sampling(seq.ids, m, params, cfg.tau, rng)
    elif cfg.family == "EmbeddingDropout":
        embs = embed(seq.ids, params).data
        _, item.emb_keep = apply_embedding_dropout(embs, m, cfg.q_drop, rng)
    elif cfg.family == "UniformEmbeddingNoise":
        embs = embed(seq.ids, params).data
        _, item.emb_add = apply_uniform_noise(
            embs, m, cfg.alpha, len(seq.ids), params.cfg.d_model, rng)
    return item


def noised_embeddings(item: NoisedBatchItem, params: ModelParams, tape: Tape | None) -> Tensor:
    """Differentiable input embeddings for a corrupted item; gradients flow
    into the embedding tables through the (constant) noise."""
    embs = embed(item.noised_ids, params, tape)
    if item.emb_keep is not None:
        embs = T.mul_const(embs, item.emb_keep, tape)
    if item.emb_add is not None:
        embs = T.add_const(embs, item.emb_add, tape)
    return embs
