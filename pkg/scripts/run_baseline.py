#!/usr/bin/env python3
"""Generate the standard corpus, train the SFT baseline, report accuracy.

Usage: python scripts/run_baseline.py [--out runs/baseline] [--seed 0]
"""

import argparse
import json
import time
from pathlib import Path

from mftlab import build_vocab
from mftlab.evaluator import eval_accuracy, report_to_file
from mftlab.model import ModelConfig
from mftlab.synthdata import DataConfig, gen_dataset, read_jsonl
from mftlab.trainer import TrainConfig, load_checkpoint, train


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs/baseline")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--n-train", type=int, default=5000)
    ap.add_argument("--epochs", type=int, default=3)
    args = ap.parse_args()

    out = Path(args.out)
    vocab = build_vocab()
    data_path = out / "dataset.jsonl"
    gen_dataset(DataConfig(n_train=args.n_train, n_test=500, n_test_ic=500,
                           seed=args.seed), vocab, data_path)

    cfg = TrainConfig(model=ModelConfig(vocab_size=len(vocab.tokens)),
                      epochs=args.epochs, seed=args.seed,
                      out_dir=str(out / "sft"))
    t0 = time.time()
    ckpt, _ = train(cfg, data_path, vocab=vocab)
    print(f"trained in {time.time() - t0:.0f}s -> {ckpt}")

    params = load_checkpoint(ckpt).params
    summary = {}
    for split in ("test", "test_ic"):
        rep = eval_accuracy(params, read_jsonl(data_path, split=split), vocab)
        report_to_file(rep, out / f"eval_{split}.json")
        summary[split] = rep.accuracy
        print(f"{split}: {rep.n_correct}/{rep.n} = {rep.accuracy:.4f}")
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
