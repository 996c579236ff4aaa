#!/usr/bin/env python3
"""Rejection-sampling augmentation stage: sample solutions from a trained
checkpoint, keep answer-correct ones, merge, retrain, and re-evaluate.

Usage: python scripts/run_rft_stage.py CKPT DATASET [--out runs/rft] [--k 10]
"""

import argparse
import json
import time
from pathlib import Path

from mftlab import build_vocab
from mftlab.evaluator import eval_accuracy, report_to_file
from mftlab.rft import RftConfig, merge_dataset, revalidate, rft_generate
from mftlab.synthdata import read_jsonl
from mftlab.trainer import TrainConfig, load_checkpoint, train


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("ckpt")
    ap.add_argument("dataset")
    ap.add_argument("--out", default="runs/rft")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--temperature", type=float, default=0.8)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    vocab = build_vocab()
    state = load_checkpoint(args.ckpt)

    t0 = time.time()
    aug_path, stats = rft_generate(
        state.params, args.dataset,
        RftConfig(k=args.k, temperature=args.temperature, seed=args.seed),
        vocab, out / "augmentation.jsonl")
    print(f"sampled {stats.sampled}, kept {stats.kept}, rejected {stats.rejected} "
          f"({time.time() - t0:.0f}s)")
    merged = merge_dataset(args.dataset, aug_path, out / "merged.jsonl")
    n = revalidate(merged, vocab)
    print(f"merged dataset: {n} records, all revalidated")

    cfg = TrainConfig(model=state.cfg_model, epochs=args.epochs, seed=args.seed,
                      out_dir=str(out / "retrain"))
    ckpt, _ = train(cfg, merged, vocab=vocab)
    params = load_checkpoint(ckpt).params
    summary = {"kept": stats.kept, "rejected": stats.rejected}
    for split in ("test", "test_ic"):
        recs = read_jsonl(args.dataset, split=split)
        if recs:
            rep = eval_accuracy(params, recs, vocab)
            report_to_file(rep, out / f"eval_{split}.json")
            summary[f"{split}_accuracy"] = rep.accuracy
            print(f"{split}: {rep.accuracy:.4f}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
