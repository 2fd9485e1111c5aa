"""Command-line entry point: ``arl {gen,train,eval,ablate-stage1,sweep,dump-embeddings,baseline,encode}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .datagen import SPLITS, DatasetConfig, build_vocab, generate_split, load_split
from .pipeline import (Pipeline, TrainConfig, dump_action_embeddings, load_pipeline, load_stage1, save_pipeline,
                       save_stage1, train_stage1, train_stage2, balanced_pairs, TrainingError)
from .scene import deserialize
from .tensorize import encode_scene

log = logging.getLogger("arl")


# fields whose default is None, with the type a value takes otherwise
_OPTIONAL = {"stage2_episodes": int, "stage2_lr": float}


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    if default is None and name in _OPTIONAL:
        return None if raw.lower() == "none" else _OPTIONAL[name](raw)
    if isinstance(default, bool):
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes")
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def read_config(path) -> dict:
    """``key = value`` lines (``#`` comments allowed) coerced to :class:`TrainConfig` field types."""
    defaults = {f.name: f.default for f in dataclasses.fields(TrainConfig)}
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value")
        key, value = (x.strip() for x in line.split("=", 1))
        if key not in defaults:
            raise ValueError(f"{path}:{lineno}: unknown option {key!r}")
        out[key] = _coerce(key, value, defaults[key])
    return out


def _train_config(args) -> TrainConfig:
    opts = read_config(args.config) if getattr(args, "config", None) else {}
    opts["seed"] = args.seed
    if getattr(args, "stage2_cotrain", False):
        opts["stage2_cotrain"] = True
    cfg = TrainConfig(**opts)
    scale = getattr(args, "scale", 1.0)
    return ev.scaled(cfg, scale) if scale != 1.0 else cfg


def _splits(data_dir):
    d = Path(data_dir)
    train = load_split(d / "train.jsonl")
    val_path = d / "val.jsonl"
    val = load_split(val_path) if val_path.exists() else []
    return train, val


def _dump(obj, path=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text + "\n")
    print(text)


# -- verbs ----------------------------------------------------------------------------


def cmd_gen(args) -> int:
    counts = {"train": args.train, "val": args.val, "test": args.test, "2hop_ta": args.two_hop_ta,
              "2hop_qh": args.two_hop_qh}
    counts = {k: max(0, int(round(v * args.scale))) for k, v in counts.items()}
    paths = generate_split(DatasetConfig(seed=args.seed, counts=counts), args.out,
                           [s for s in SPLITS if counts[s] > 0])
    for split, path in paths.items():
        log.info("wrote %d %s episodes to %s", counts[split], split, path)
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    train, val = _splits(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics = {"config": cfg.to_dict()}
    budget = ev.Budget(args.budget_minutes * 60, "train")
    hook = budget.hook(log.info)
    if args.stage in ("1", "all"):
        pairs = balanced_pairs(train, cfg.stage1_pairs, cfg.seed)
        stage1, m1 = train_stage1([(a, b) for a, b, _ in pairs], cfg, hook)
        save_stage1(out / "stage1.npz", stage1)
        metrics["stage1"] = m1
    else:
        stage1 = load_stage1(Path(args.stage1 or out) / "stage1.npz")
    if args.stage in ("2", "all"):
        vocab = build_vocab(e.action_text for e in train)
        n2 = cfg.stage2_episodes or len(train)
        nl, m2 = train_stage2(train[:n2], stage1, vocab, cfg, val, hook)
        save_pipeline(Pipeline(stage1, nl, vocab, cfg), out)
        metrics["stage2"] = m2
    _dump(metrics, out / f"metrics_stage{args.stage}.json")
    return 0


def cmd_eval(args) -> int:
    pipe = load_pipeline(args.model)
    names = ["test", "2hop_ta", "2hop_qh"] if args.split == "all" else [args.split]
    report = ev.RunReport(config=pipe.config.to_dict(), seed=pipe.config.seed)
    for name in names:
        eps = load_split(Path(args.data) / f"{name}.jsonl")
        report.splits[name] = ev.eval_split(pipe, eps, name)
        report.sizes[f"eval_{name}"] = len(eps)
        if report.majority_baseline is None:
            report.majority_baseline = ev.majority_baseline(eps)
    _dump(report.to_dict(), args.out)
    return 0


def _seeded(args):
    base = _train_config(args)
    return [dataclasses.replace(base, seed=base.seed + i) for i in range(args.seeds)]


def cmd_ablate(args) -> int:
    train, val = _splits(args.data)
    test = load_split(Path(args.data) / f"{args.split}.jsonl")
    runs = []
    for cfg in _seeded(args):
        budget = ev.Budget(args.budget_minutes * 60, "stage-1 ablation")
        runs.append(ev.ablate_stage1(train, val, test, cfg, budget, log.info))
    result = {"runs": runs,
              "mean_scene_gap": float(np.mean([r["scene_gap"] for r in runs])),
              "mean_qa_gap": float(np.mean([r["qa_gap"] for r in runs]))}
    _dump(result, args.out)
    return 0


def cmd_sweep(args) -> int:
    train, val = _splits(args.data)
    test = load_split(Path(args.data) / f"{args.split}.jsonl")
    if args.grid:
        grid = [int(x) for x in args.grid.split(",")]
    elif args.axis == "data":
        grid = [max(4, int(round(g * args.scale))) for g in ev.DATA_GRID]
    else:
        grid = list(ev.VECLEN_GRID)
    fn = ev.sweep_data_size if args.axis == "data" else ev.sweep_vector_length
    axis = "pairs" if args.axis == "data" else "d_a"
    rows = []
    for cfg in _seeded(args):
        budget = ev.Budget(args.budget_minutes * 60, f"{args.axis} sweep")
        for row in fn(train, val, test, cfg, grid, budget, log.info):
            rows.append({"seed": cfg.seed, **row})
    if args.out:
        ev.write_series(rows, args.out)
    for row in rows:
        print(",".join(str(row[k]) for k in row))
    log.info("best %s: %s", axis, ev.best_point(rows, axis))
    return 0


def cmd_dump(args) -> int:
    pipe = load_pipeline(args.model)
    eps = load_split(Path(args.data) / f"{args.split}.jsonl")
    rows = dump_action_embeddings(pipe, eps, args.out)
    log.info("wrote %d embeddings", len(rows))
    return 0


def cmd_baseline(args) -> int:
    eps = load_split(Path(args.data) / f"{args.split}.jsonl")
    print(f"{ev.majority_baseline(eps):.4f}")
    return 0


def cmd_encode(args) -> int:
    scene = deserialize(Path(args.scene).read_text())
    print(" ".join(repr(float(v)) for v in encode_scene(scene)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arl", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(sp, train=True):
        sp.add_argument("--seed", type=int, default=0)
        if train:
            sp.add_argument("--config", help="key=value training options")
            sp.add_argument("--scale", type=float, default=1.0, help="multiply data budgets")
            sp.add_argument("--stage2-cotrain", action="store_true", help="let stage 2 update the decoder")
            sp.add_argument("--budget-minutes", type=float, default=ev.CPU_BUDGET_S / 60)

    g = sub.add_parser("gen", help="generate episode splits as JSONL")
    common(g, train=False)
    g.add_argument("--out", required=True)
    g.add_argument("--scale", type=float, default=1.0)
    g.add_argument("--train", type=int, default=10_000)
    g.add_argument("--val", type=int, default=1_000)
    g.add_argument("--test", type=int, default=1_000)
    g.add_argument("--2hop-ta", dest="two_hop_ta", type=int, default=500)
    g.add_argument("--2hop-qh", dest="two_hop_qh", type=int, default=500)
    g.set_defaults(fn=cmd_gen)

    t = sub.add_parser("train", help="train stage 1, stage 2 or both")
    common(t)
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--stage", choices=("1", "2", "all"), default="all")
    t.add_argument("--stage1", help="directory holding stage1.npz (default: --out)")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="score a trained pipeline on a split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", help="split name, or 'all' for the three test partitions")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate-stage1", help="Stage(2 only) against Stage(1+2)")
    common(a)
    a.add_argument("--data", required=True)
    a.add_argument("--split", default="test")
    a.add_argument("--seeds", type=int, default=1)
    a.add_argument("--out")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("sweep", help="accuracy against data size or vector length")
    common(s)
    s.add_argument("--axis", choices=("data", "veclen"), required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--grid", help="comma-separated grid points")
    s.add_argument("--seeds", type=int, default=1)
    s.add_argument("--out", help="series CSV")
    s.set_defaults(fn=cmd_sweep)

    d = sub.add_parser("dump-embeddings", help="write action vectors as CSV")
    d.add_argument("--model", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--split", default="val")
    d.add_argument("--out", required=True)
    d.set_defaults(fn=cmd_dump)

    b = sub.add_parser("baseline", help="majority-answer accuracy of a split")
    b.add_argument("--data", required=True)
    b.add_argument("--split", default="test")
    b.set_defaults(fn=cmd_baseline)

    c = sub.add_parser("encode", help="print the tensor encoding of a scene JSON file")
    c.add_argument("--scene", required=True)
    c.set_defaults(fn=cmd_encode)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except (FileNotFoundError, ValueError, TrainingError, ev.BudgetExceeded) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
