"""Single executable for the full workflow: data generation, training, RFT
augmentation, evaluation, dependency probing and noise inspection.

Every artifact-producing command writes a resolved-config snapshot next to
its outputs and is rerunnable to byte-identical output for the same config
and seed. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields as dc_fields
from pathlib import Path

from .errors import MftError
from .evaluator import compare_runs, eval_accuracy, report_to_file
from .model import ModelConfig
from .noise import NoiseConfig, corrupt
from .rngutil import make_rng
from .synthdata import DataConfig, gen_dataset, read_jsonl
from .tokenizer import build_vocab, decode
from .trainer import TrainConfig, load_checkpoint, train
from . import depprobe, rft


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read config {path}: {e}")
    if not isinstance(obj, dict):
        raise UsageError(f"config {path} must be a JSON object")
    return obj


def _apply_sets(cfg: dict, sets: list[str]) -> dict:
    for kv in sets or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        key, raw = kv.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise UsageError(f"--set path {key!r} crosses a non-object")
        node[parts[-1]] = value
    return cfg


def _check_keys(cfg: dict, allowed: set[str], context: str) -> None:
    unknown = set(cfg) - allowed
    if unknown:
        raise UsageError(f"unknown {context} config keys: {sorted(unknown)}")


def _snapshot(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "resolved_config.json").write_text(
        json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _dataclass_keys(cls) -> set[str]:
    return {f.name for f in dc_fields(cls)}


def cmd_gen_data(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    if args.seed is not None:
        cfg["seed"] = args.seed
    _check_keys(cfg, _dataclass_keys(DataConfig), "gen-data")
    out = Path(args.out)
    _snapshot(cfg, out)
    vocab = build_vocab()
    path = gen_dataset(DataConfig(**cfg), vocab, out / "dataset.jsonl")
    (out / "vocab.json").write_text(vocab.to_json() + "\n")
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_train(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    dataset = cfg.pop("dataset", None)
    if dataset is None:
        raise UsageError("train config needs a 'dataset' path")
    resume = cfg.pop("resume_from", None)
    stop_after = cfg.pop("stop_after_steps", None)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out_dir"] = args.out
    _check_keys(cfg, _dataclass_keys(TrainConfig), "train")
    vocab = build_vocab()
    cfg.setdefault("model", {}).setdefault("vocab_size", len(vocab.tokens))
    tc = TrainConfig(**cfg)
    _snapshot({**cfg, "dataset": dataset}, Path(tc.out_dir))
    ckpt, metrics = train(tc, dataset, vocab=vocab, resume_from=resume,
                          stop_after_steps=stop_after)
    print(f"wrote {ckpt} and {metrics}", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    _check_keys(cfg, {"ckpt", "dataset", "splits", "max_new"}, "eval")
    ckpt = cfg.get("ckpt") or args.ckpt
    dataset = cfg.get("dataset") or args.dataset
    if not ckpt or not dataset:
        raise UsageError("eval needs ckpt and dataset (config or flags)")
    splits = cfg.get("splits", ["test", "test_ic"])
    out = Path(args.out)
    _snapshot({"ckpt": str(ckpt), "dataset": str(dataset), "splits": splits}, out)
    vocab = build_vocab()
    state = load_checkpoint(ckpt)
    for split in splits:
        records = read_jsonl(dataset, split=split)
        if not records:
            continue
        report = eval_accuracy(state.params, records, vocab,
                               max_new=cfg.get("max_new", 64))
        report_to_file(report, out / f"eval_{split}.json")
        print(f"{split}: {report.n_correct}/{report.n} = {report.accuracy:.4f}")
    return 0


def cmd_rft(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    ckpt = cfg.pop("ckpt", None) or args.ckpt
    dataset = cfg.pop("dataset", None) or args.dataset
    if not ckpt or not dataset:
        raise UsageError("rft needs ckpt and dataset (config or flags)")
    if args.seed is not None:
        cfg["seed"] = args.seed
    _check_keys(cfg, _dataclass_keys(rft.RftConfig), "rft")
    out = Path(args.out)
    _snapshot({**cfg, "ckpt": str(ckpt), "dataset": str(dataset)}, out)
    vocab = build_vocab()
    state = load_checkpoint(ckpt)
    path, stats = rft.rft_generate(state.params, dataset, rft.RftConfig(**cfg),
                                   vocab, out / "augmentation.jsonl")
    print(json.dumps({"sampled": stats.sampled, "kept": stats.kept,
                      "rejected": stats.rejected}))
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_merge(args) -> int:
    out = Path(args.out)
    _snapshot({"original": args.original, "augmentation": args.augmentation}, out)
    path = rft.merge_dataset(args.original, args.augmentation, out / "merged.jsonl")
    print(f"wrote {path}", file=sys.stderr)
    return 0


def cmd_probe_dep(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    _check_keys(cfg, {"ckpt", "dataset", "split", "n_samples", "perturb_budget", "seed"},
                "probe-dep")
    ckpt = cfg.get("ckpt") or args.ckpt
    dataset = cfg.get("dataset") or args.dataset
    if not ckpt or not dataset:
        raise UsageError("probe-dep needs ckpt and dataset (config or flags)")
    n = cfg.get("n_samples", depprobe.DEFAULT_SAMPLE_SIZE)
    seed = cfg.get("seed", args.seed or 0)
    out = Path(args.out)
    _snapshot({**cfg, "ckpt": str(ckpt), "dataset": str(dataset), "n_samples": n}, out)
    vocab = build_vocab()
    state = load_checkpoint(ckpt)
    records = read_jsonl(dataset, split=cfg.get("split", "test"))[:n]
    hist, _ = depprobe.dependency_histogram(
        state.params, records, vocab,
        perturb_budget=cfg.get("perturb_budget", depprobe.DEFAULT_PERTURB_BUDGET),
        seed=seed)
    depprobe.histogram_to_files(hist, out / "histogram.json", out / "histogram.tsv")
    print(json.dumps(hist.to_json()))
    return 0


def cmd_probe_case(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    _check_keys(cfg, {"ckpt", "question", "prefix", "minuend", "premise", "op"},
                "probe-case")
    ckpt = cfg.get("ckpt") or args.ckpt
    for key in ("question", "prefix", "minuend", "premise"):
        if key not in cfg:
            raise UsageError(f"probe-case config needs {key!r}")
    if not ckpt:
        raise UsageError("probe-case needs a ckpt")
    out = Path(args.out)
    _snapshot({**cfg, "ckpt": str(ckpt)}, out)
    vocab = build_vocab()
    state = load_checkpoint(ckpt)
    template = depprobe.CaseTemplate(
        question=cfg["question"], prefix=cfg["prefix"],
        minuend=cfg["minuend"], premise=cfg["premise"], op=cfg.get("op", "-"))
    result = depprobe.premise_consistency_probe(state.params, template, vocab)
    (out / "case_probe.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))
    return 0


def _parse_run_group(spec: str) -> tuple[str, list[Path]]:
    if "=" in spec:
        name, paths = spec.split("=", 1)
    else:
        name, paths = Path(spec).name, spec
    return name, [Path(p) for p in paths.split(",")]


def cmd_compare(args) -> int:
    from .evaluator import EvalReport, ProblemResult

    def load_dir(d: Path) -> dict:
        out = {}
        for split in ("test", "test_ic"):
            p = d / f"eval_{split}.json"
            if p.exists():
                obj = json.loads(p.read_text())
                out[split] = EvalReport(
                    split=obj["split"], n=obj["n"], n_correct=obj["n_correct"],
                    accuracy=obj["accuracy"],
                    results=[ProblemResult(**r) for r in obj["results"]])
        return out

    base_name, base_dirs = _parse_run_group(args.baseline)
    groups = {base_name: [load_dir(d) for d in base_dirs]}
    for spec in args.runs or []:
        name, dirs = _parse_run_group(spec)
        groups[name] = [load_dir(d) for d in dirs]
    text, summary = compare_runs(groups, baseline=base_name)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_inspect_noise(args) -> int:
    cfg = _apply_sets(_load_config(args.config), args.set)
    dataset = cfg.pop("dataset", None) or args.dataset
    if not dataset:
        raise UsageError("inspect-noise needs a dataset")
    n = int(cfg.pop("n", 3))
    step = int(cfg.pop("step", 10**9))  # far past any warmup by default
    ckpt = cfg.pop("ckpt", None)
    seed = args.seed if args.seed is not None else 0
    _check_keys(cfg, _dataclass_keys(NoiseConfig), "inspect-noise")
    ncfg = NoiseConfig.from_json(cfg) if cfg else NoiseConfig()
    vocab = build_vocab()
    if ckpt:
        params = load_checkpoint(ckpt).params
    else:
        from .model import init_params
        params = init_params(ModelConfig(vocab_size=len(vocab.tokens)))
    records = read_jsonl(dataset, split="train")[:n]
    for i, rec in enumerate(records):
        rng = make_rng(seed, 0x1A5, i)
        item = corrupt(rec.encoded, ncfg, step, params, vocab, rng)
        print(f"--- {rec.problem.id}")
        print("orig:   " + decode(item.ids, vocab))
        print("noised: " + decode(item.noised_ids, vocab))
        print("mask:   " + " ".join(str(b) for b in item.mask_indicator))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mftlab")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value (dotted keys allowed)")
        p.add_argument("--seed", type=int, help="run seed override")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap (numeric paths are single-threaded)")
        p.add_argument("--deterministic", action="store_true",
                       help="force single-threaded numeric paths")
        p.add_argument("--log-json", action="store_true",
                       help="line-delimited JSON logs on stderr")

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    common(p)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="run SFT/MFT training")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="greedy accuracy on test splits")
    common(p)
    p.add_argument("--ckpt")
    p.add_argument("--dataset")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("rft", help="rejection-sampling augmentation")
    common(p)
    p.add_argument("--ckpt")
    p.add_argument("--dataset")
    p.set_defaults(fn=cmd_rft)

    p = sub.add_parser("merge", help="merge original + augmentation datasets")
    common(p)
    p.add_argument("--original", required=True)
    p.add_argument("--augmentation", required=True)
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("probe-dep", help="token-dependency histogram")
    common(p)
    p.add_argument("--ckpt")
    p.add_argument("--dataset")
    p.set_defaults(fn=cmd_probe_dep)

    p = sub.add_parser("probe-case", help="premise-consistency case probe")
    common(p)
    p.add_argument("--ckpt")
    p.set_defaults(fn=cmd_probe_case)

    p = sub.add_parser("compare", help="method x seed summary table")
    common(p)
    p.add_argument("--baseline", required=True,
                   help="NAME=DIR[,DIR...] or DIR (baseline eval output dirs)")
    p.add_argument("--runs", action="append",
                   help="NAME=DIR[,DIR...] for each additional method")
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("inspect-noise", help="dry-run corruption on sample records")
    common(p, needs_out=False)
    p.add_argument("--dataset")
    p.set_defaults(fn=cmd_inspect_noise)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code == 0 else 1
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (MftError, OSError, ValueError, AssertionError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
