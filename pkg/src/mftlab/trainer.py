"""Training loop with decoupled-weight-decay Adam, JSONL metrics and a
binary checkpoint format that supports exact single-threaded replay.

All randomness (shuffling, noise) is derived from (run seed, epoch/step,
item index) key tuples, so resuming from a checkpoint reproduces the
uninterrupted run bit for bit.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import BadMagic, ConfigMismatch, NonFiniteLoss
from .model import ModelConfig, ModelParams, embed, init_params, nll_loss, param_shapes, target_loss_weights
from .noise import NoiseConfig, NoisedBatchItem, corrupt, noised_embeddings, ratio_at
from .rngutil import make_rng
from .synthdata import DatasetRecord, read_jsonl
from .tensor import Tape, Tensor, backward, scale as T_scale
from .tokenizer import Vocab, build_vocab

MAGIC = b"MFTCKPT1"
VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
WEIGHT_DECAY = 0.01
CLIP_NORM = 1.0


@dataclass
class TrainConfig:
    model: ModelConfig
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    epochs: int = 3
    batch_size: int = 8
    learning_rate: float = 2e-3
    lr_schedule: str = "cosine"  # constant | cosine
    seed: int = 0
    eval_every_steps: int = 0  # 0 disables in-loop accuracy evaluation
    out_dir: str = "run"

    def __post_init__(self):
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)
        if isinstance(self.noise, dict):
            self.noise = NoiseConfig.from_json(self.noise)
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs >= 1, batch_size >= 1, learning_rate > 0 required")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")

    def to_json(self) -> dict:
        return asdict(self)


class TrainerState:
    def __init__(self, cfg_model: ModelConfig, params: ModelParams,
                 adam_m: dict[str, np.ndarray], adam_v: dict[str, np.ndarray],
                 step: int, seed: int):
        self.cfg_model = cfg_model
        self.params = params
        self.adam_m = adam_m
        self.adam_v = adam_v
        self.step = step
        self.seed = seed


def new_state(cfg: TrainConfig) -> TrainerState:
    params = init_params(cfg.model)
    zeros = {n: np.zeros(s) for n, s in param_shapes(cfg.model).items()}
    return TrainerState(cfg.model, params,
                        {n: z.copy() for n, z in zeros.items()},
                        {n: z.copy() for n, z in zeros.items()},
                        step=0, seed=cfg.seed)


# ---------------------------------------------------------------------------
# checkpoint format: magic, LE u32 version, LE u64 header length,
# JSON header (config, step, tensor manifest), raw f64 payloads in order.


def save_checkpoint(state: TrainerState, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    manifest = []
    payloads = []
    for name, t in state.params.named():
        manifest.append({"name": name, "shape": list(t.data.shape)})
        payloads.append(t.data)
    for kind, table in (("adam_m", state.adam_m), ("adam_v", state.adam_v)):
        for name in state.params.tensors:
            manifest.append({"name": f"{kind}:{name}", "shape": list(table[name].shape)})
            payloads.append(table[name])
    header = json.dumps({
        "model": asdict(state.cfg_model),
        "step": state.step,
        "rng_state": {"scheme": "keyed-pcg64", "seed": state.seed},
        "manifest": manifest,
    }, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for arr in payloads:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    os.replace(tmp, path)
    return path


def load_checkpoint(path: str | Path) -> TrainerState:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(MAGIC) + 12 or blob[:len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path} is not a checkpoint")
    off = len(MAGIC)
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != VERSION:
        raise BadMagic(f"unsupported checkpoint version {version}")
    (hlen,) = struct.unpack_from("<Q", blob, off)
    off += 8
    if off + hlen > len(blob):
        raise BadMagic("truncated checkpoint header")
    header = json.loads(blob[off:off + hlen].decode("utf-8"))
    off += hlen
    cfg = ModelConfig(**header["model"])
    tensors: dict[str, np.ndarray] = {}
    for entry in header["manifest"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(blob):
            raise BadMagic("truncated checkpoint payload")
        tensors[entry["name"]] = np.frombuffer(
            blob[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    expected = param_shapes(cfg)
    params = ModelParams(cfg, {})
    adam_m, adam_v = {}, {}
    for name, shape in expected.items():
        for store, key in ((params.tensors, name),
                           (adam_m, f"adam_m:{name}"), (adam_v, f"adam_v:{name}")):
            if key not in tensors or tensors[key].shape != shape:
                raise ConfigMismatch(f"missing or misshaped tensor {key}")
            if store is params.tensors:
                store[name] = Tensor(tensors[key], requires_grad=True)
            else:
                store[name] = tensors[key]
    return TrainerState(cfg, params, adam_m, adam_v,
                        step=header["step"], seed=header["rng_state"]["seed"])


# ---------------------------------------------------------------------------
# optimization


def _lr_at(cfg: TrainConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    frac = min(1.0, step / max(1, total_steps))
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


def _adamw_step(state: TrainerState, lr: float) -> None:
    t = state.step + 1
    grads = {n: p.grad for n, p in state.params.named()}
    norm_sq = sum(float((g**2).sum()) for g in grads.values() if g is not None)
    clip = 1.0
    norm = math.sqrt(norm_sq)
    if norm > CLIP_NORM:
        clip = CLIP_NORM / norm
    b1t = 1.0 - ADAM_BETA1**t
    b2t = 1.0 - ADAM_BETA2**t
    for name, p in state.params.named():
        g = grads[name]
        if g is None:
            g = np.zeros_like(p.data)
        g = g * clip
        m = state.adam_m[name]
        v = state.adam_v[name]
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        update = (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)
        p.data -= lr * (update + WEIGHT_DECAY * p.data)


def _batch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return make_rng(seed, 0x5A0F, epoch).permutation(n)


def train(cfg: TrainConfig, dataset_path: str | Path, vocab: Vocab | None = None,
          resume_from: str | Path | None = None,
          stop_after_steps: int | None = None) -> tuple[Path, Path]:
    """Run SFT/MFT training; returns (checkpoint path, metrics path).

    Writes out_dir/metrics.jsonl, out_dir/config.json and out_dir/ckpt.bin."""
    vocab = vocab or build_vocab()
    records = read_jsonl(dataset_path, split="train")
    if not records:
        raise ValueError(f"no train records in {dataset_path}")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(cfg.to_json(), indent=2, sort_keys=True) + "\n")

    if resume_from is not None:
        state = load_checkpoint(resume_from)
        if state.cfg_model != cfg.model:
            raise ConfigMismatch("checkpoint model config differs from train config")
        if state.seed != cfg.seed:
            raise ConfigMismatch("checkpoint seed differs from train config")
    else:
        state = new_state(cfg)

    n = len(records)
    steps_per_epoch = (n + cfg.batch_size - 1) // cfg.batch_size
    total_steps = steps_per_epoch * cfg.epochs
    metrics_path = out_dir / "metrics.jsonl"
    ckpt_path = out_dir / "ckpt.bin"

    with open(metrics_path, "w" if resume_from is None else "a",
              encoding="utf-8", newline="\n") as mf:
        while state.step < total_steps:
            if stop_after_steps is not None and state.step >= stop_after_steps:
                break
            step = state.step
            epoch = step // steps_per_epoch
            pos = (step % steps_per_epoch) * cfg.batch_size
            order = _batch_order(cfg.seed, epoch, n)
            batch = [records[i] for i in order[pos:pos + cfg.batch_size]]
            lr = _lr_at(cfg, step, total_steps)
            mask_ratio = (0.0 if cfg.noise.family == "None"
                          else ratio_at(cfg.noise.schedule, step, final_p=cfg.noise.p))
            state.params.zero_grads()
            losses = []
            for j, rec in enumerate(batch):
                rng = make_rng(cfg.seed, 0xC0FF, step, j)
                item = corrupt(rec.encoded, cfg.noise, step, state.params, vocab, rng)
                tape = Tape()
                embs = noised_embeddings(item, state.params, tape)
                loss = nll_loss(rec.encoded, embs, item.loss_weights, state.params, tape)
                val = float(loss.data)
                if not math.isfinite(val):
                    raise NonFiniteLoss(step)
                losses.append(val)
                # scale so batch gradients average rather than sum
                scaled = T_scale(loss, 1.0 / len(batch), tape)
                backward(scaled, tape)
            _adamw_step(state, lr)
            state.step += 1
            mf.write(json.dumps({
                "event": "train_step", "step": state.step,
                "train_loss": sum(losses) / len(losses),
                "mask_ratio": mask_ratio, "lr": lr,
            }) + "\n")
            if cfg.eval_every_steps and state.step % cfg.eval_every_steps == 0:
                from .evaluator import eval_accuracy
                accs = {}
                for split, key in (("test", "test_acc"), ("test_ic", "test_ic_acc")):
                    split_recs = read_jsonl(dataset_path, split=split)
                    if split_recs:
                        accs[key] = eval_accuracy(state.params, split_recs, vocab).accuracy
                mf.write(json.dumps({"event": "eval", "step": state.step, **accs}) + "\n")
    save_checkpoint(state, ckpt_path)
    return ckpt_path, metrics_path


def evaluate_loss(params: ModelParams, records: list[DatasetRecord]) -> float:
    """Mean teacher-forced nll over the records with clean inputs."""
    if not records:
        raise ValueError("empty split")
    total = 0.0
    for rec in records:
        embs = embed(rec.encoded.ids, params)
        w = target_loss_weights(rec.encoded)
        total += float(nll_loss(rec.encoded, embs, w, params).data)
    return total / len(records)
