"""Decoder-only transformer over the closed vocabulary.

Forward runs per sequence on 2D [t, d] tensors; precomputed (possibly noised)
input embeddings can be injected below the token layer so the noise module
can operate on either tokens or embeddings.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import IdOutOfRange, SequenceTooLong
from .rngutil import make_rng
from .tensor import Tensor, Tape
from .tokenizer import TokenSeq

NEG_MASK = -1e9  # finite so every intermediate stays NaN/Inf-free


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 256
    max_seq_len: int = 160
    init_seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")


class ModelParams:
    """Named parameter tensors; iteration order is fixed by insertion."""

    def __init__(self, cfg: ModelConfig, tensors: dict[str, Tensor]):
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self):
        return self.tensors.items()

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f, v = cfg.d_model, cfg.d_ff, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "tok_emb": (v, d),
        "pos_emb": (cfg.max_seq_len, d),
    }
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes[p + "ln1_g"] = (d,)
        shapes[p + "ln1_b"] = (d,)
        shapes[p + "wq"] = (d, d)
        shapes[p + "wk"] = (d, d)
        shapes[p + "wv"] = (d, d)
        shapes[p + "wo"] = (d, d)
        shapes[p + "bq"] = (d,)
        shapes[p + "bk"] = (d,)
        shapes[p + "bv"] = (d,)
        shapes[p + "bo"] = (d,)
        shapes[p + "ln2_g"] = (d,)
        shapes[p + "ln2_b"] = (d,)
        shapes[p + "w1"] = (d, f)
        shapes[p + "b1"] = (f,)
        shapes[p + "w2"] = (f, d)
        shapes[p + "b2"] = (d,)
    shapes["lnf_g"] = (d,)
    shapes["lnf_b"] = (d,)
    shapes["w_out"] = (d, v)
    shapes["b_out"] = (v,)
    return shapes


def init_params(cfg: ModelConfig) -> ModelParams:
    """normal(0, 0.02) projections, ones/zeros norms; deterministic in init_seed."""
    rng = make_rng(cfg.init_seed, 0x1217)
    tensors: dict[str, Tensor] = {}
    for name, shape in param_shapes(cfg).items():
        base = name.rsplit(".", 1)[-1]
        if base.endswith("_g"):
            data = np.ones(shape)
        elif base.endswith("_b") or base.startswith("b"):
            data = np.zeros(shape)
        else:
            data = rng.normal(0.0, 0.02, size=shape)
        tensors[name] = Tensor(data, requires_grad=True)
    return ModelParams(cfg, tensors)


def embed(ids: list[int], params: ModelParams, tape: Tape | None = None) -> Tensor:
    """Token embedding plus learned absolute positional embedding."""
    cfg = params.cfg
    for tid in ids:
        if not 0 <= tid < cfg.vocab_size:
            raise IdOutOfRange(f"token id {tid}")
    if len(ids) > cfg.max_seq_len:
        raise SequenceTooLong(f"{len(ids)} > max_seq_len {cfg.max_seq_len}")
    tok = T.gather_rows(params["tok_emb"], ids, tape)
    pos = T.gather_rows(params["pos_emb"], list(range(len(ids))), tape)
    return T.add(tok, pos, tape)


def _causal_mask(t: int) -> np.ndarray:
    mask = np.zeros((t, t))
    mask[np.triu_indices(t, k=1)] = NEG_MASK
    return mask


def forward_logits(embs: Tensor, params: ModelParams, tape: Tape | None = None) -> Tensor:
    """Next-token logits with strict causal self-attention: row i depends
    only on embs[0..=i]."""
    cfg = params.cfg
    t = embs.data.shape[0]
    if t > cfg.max_seq_len:
        raise SequenceTooLong(f"{t} > max_seq_len {cfg.max_seq_len}")
    if t == 0:
        return Tensor(np.zeros((0, cfg.vocab_size)))
    hd = cfg.d_model // cfg.n_heads
    mask = _causal_mask(t)
    x = embs
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        h = T.layer_norm(x, params[p + "ln1_g"], params[p + "ln1_b"], tape=tape)
        q = T.add(T.matmul(h, params[p + "wq"], tape), params[p + "bq"], tape)
        k = T.add(T.matmul(h, params[p + "wk"], tape), params[p + "bk"], tape)
        v = T.add(T.matmul(h, params[p + "wv"], tape), params[p + "bv"], tape)
        heads = []
        for s in range(cfg.n_heads):
            lo, hi = s * hd, (s + 1) * hd
            qs = T.slice_cols(q, lo, hi, tape)
            ks = T.slice_cols(k, lo, hi, tape)
            vs = T.slice_cols(v, lo, hi, tape)
            scores = T.scale(T.matmul(qs, T.transpose(ks, tape), tape), 1.0 / np.sqrt(hd), tape)
            att = T.softmax(T.add_const(scores, mask, tape), tape)
            heads.append(T.matmul(att, vs, tape))
        merged = T.concat_cols(heads, tape)
        proj = T.add(T.matmul(merged, params[p + "wo"], tape), params[p + "bo"], tape)
        x = T.add(x, proj, tape)
        h2 = T.layer_norm(x, params[p + "ln2_g"], params[p + "ln2_b"], tape=tape)
        ff = T.add(T.matmul(h2, params[p + "w1"], tape), params[p + "b1"], tape)
        ff = T.gelu(ff, tape)
        ff = T.add(T.matmul(ff, params[p + "w2"], tape), params[p + "b2"], tape)
        x = T.add(x, ff, tape)
    x = T.layer_norm(x, params["lnf_g"], params["lnf_b"], tape=tape)
    return T.add(T.matmul(x, params["w_out"], tape), params["b_out"], tape)


def target_loss_weights(seq: TokenSeq, mask_indicator: list[int] | None = None,
                        loss_on_noisy: bool = True) -> list[float]:
    """Weights for prediction positions: position j predicts ids[j+1].

    Weight 1 on positions predicting target-region tokens, 0 on the question
    region. With loss_on_noisy=False a prediction is also excluded when its
    own input token (position j) was noised."""
    n = len(seq.ids) - 1
    w = [0.0] * n
    for j in range(n):
        if j + 1 >= seq.question_len:
            w[j] = 1.0
            if not loss_on_noisy and mask_indicator is not None and mask_indicator[j]:
                w[j] = 0.0
    return w


def nll_loss(seq: TokenSeq, input_embs: Tensor, loss_weights: list[float],
             params: ModelParams, tape: Tape | None = None) -> Tensor:
    """Cross entropy against the uncorrupted ground-truth next tokens; inputs
    may be noised but labels never are."""
    n = len(seq.ids)
    if input_embs.data.shape[0] != n:
        raise ValueError("input_embs length must match ids")
    logits = forward_logits(input_embs, params, tape)
    pred = T.slice_rows(logits, 0, n - 1, tape)
    return T.cross_entropy(pred, seq.ids[1:], loss_weights, tape)


def generate(prompt_ids: list[int], params: ModelParams, temperature: float = 0.0,
             max_new: int = 64, rng_seed: int = 0, eos_id: int | None = None) -> list[int]:
    """Autoregressive sampling from softmax(logits / temperature);
    temperature 0 means argmax. Returns only the newly generated ids."""
    cfg = params.cfg
    if len(prompt_ids) > cfg.max_seq_len:
        raise SequenceTooLong(f"prompt of {len(prompt_ids)} > max_seq_len {cfg.max_seq_len}")
    rng = make_rng(rng_seed, 0x6E4)
    ids = list(prompt_ids)
    out: list[int] = []
    for _ in range(max_new):
        if len(ids) >= cfg.max_seq_len:
            break
        logits = forward_logits(embed(ids, params), params).data[-1]
        if temperature <= 0.0:
            nxt = int(np.argmax(logits))
        else:
            z = logits / temperature
            z -= z.max()
            probs = np.exp(z)
            probs /= probs.sum()
            nxt = int(rng.choice(len(probs), p=probs))
        out.append(nxt)
        ids.append(nxt)
        if eos_id is not None and nxt == eos_id:
            break
    return out
