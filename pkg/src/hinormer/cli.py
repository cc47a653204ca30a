"""Command-line entry point: ``hinormer {train,eval,sample,gradcheck,synth,stats}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
divergence, 4 failed gradient check.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, TrainConfig, resolve_config
from .graph import DataError, dataset_checksum, load_dataset, load_hgb, subgraph_stats, write_dataset
from .sampler import SamplerConfig, sample_context
from .synth import SynthSpec, generate
from .trainer import DivergenceError, dump_attention, evaluate, load_checkpoint, restore_model, train

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 1, 2, 3, 4
OUT_DIR_ENV = "HINORMER_OUT_DIR"

# flag dest -> TrainConfig field
FLAG_KEYS = {
    "seed": "seed",
    "mechanism": "mechanism",
    "no_lse": "no_lse",
    "no_hre": "no_hre",
    "beta": "beta",
    "layers": "L",
    "dim": "d",
    "heads": "n_h",
    "seq_len": "S",
    "hops": "D",
    "ks": "K_s",
    "kh": "K_h",
    "epochs": "epochs",
    "lr": "learning_rate",
    "dropout": "dropout",
    "patience": "patience",
}
MECHANISM_FLAGS = {"gatv2": "gatv2", "gat": "gat", "dot": "dot"}


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--mechanism", choices=sorted(MECHANISM_FLAGS))
    p.add_argument("--no-lse", action="store_true", default=None)
    p.add_argument("--no-hre", action="store_true", default=None)
    p.add_argument("--beta", type=float)
    p.add_argument("--layers", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--heads", type=int)
    p.add_argument("--seq-len", type=int)
    p.add_argument("--hops", type=int)
    p.add_argument("--ks", type=int)
    p.add_argument("--kh", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--dropout", type=float)
    p.add_argument("--patience", type=int)


def config_from_args(args) -> TrainConfig:
    overrides = {}
    for dest, key in FLAG_KEYS.items():
        val = getattr(args, dest, None)
        if val is None:
            continue
        overrides[key] = MECHANISM_FLAGS[val] if dest == "mechanism" else val
    return resolve_config(getattr(args, "config", None), overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hinormer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on a dataset directory")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--out-dir", help=f"parent of the run directory (default ${OUT_DIR_ENV} or ./runs)")
    p.add_argument("--seeds", type=int, default=1, help="train this many consecutive seeds")
    p.add_argument("--dump-attention", metavar="N", type=int, help="dump attention maps of N test nodes")
    _add_model_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--dump-attention", metavar="PATH")

    p = sub.add_parser("sample", help="print the context sequence of one node")
    p.add_argument("--dataset-dir", required=True)
    p.add_argument("--node", type=int, required=True, help="original node id")
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--seq-len", type=int, default=20)
    p.add_argument("--policy", default="deterministic", choices=("deterministic", "seeded-random"))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference check on a 10-node fixture")
    p.add_argument("--config")
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--nodes", type=int, default=300)
    p.add_argument("--types", type=int, default=3)
    p.add_argument("--min-degree", type=int, default=3)
    p.add_argument("--max-degree", type=int, default=8)

    p = sub.add_parser("stats", help="print dataset statistics")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--dataset-dir")
    g.add_argument("--hgb-dir", help="directory in the HGB node.dat/link.dat layout")
    return parser


def _run_dir(parent: Path, stem: str) -> Path:
    path = parent / stem
    k = 1
    while path.exists():
        path = parent / f"{stem}-{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def _write_manifest(run_dir: Path, command: str, args, cfg: TrainConfig | None, checksum: str | None,
                    seeds, started: str) -> None:
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "config_path": getattr(args, "config", None),
        "config": cfg.to_dict() if cfg else None,
        "dataset_checksum": checksum,
        "seeds": list(seeds),
        "version": __version__,
        "started": started,
        "finished": _now(),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_train(args) -> int:
    started = _now()
    cfg = config_from_args(args)
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    ds = load_dataset(args.dataset_dir)
    checksum = dataset_checksum(args.dataset_dir)
    parent = Path(args.out_dir or os.environ.get(OUT_DIR_ENV, "runs"))
    stamp = time.strftime("%Y%m%d-%H%M%S", time.gmtime())
    seeds = [cfg.seed + i for i in range(args.seeds)]
    if args.seeds == 1:
        run_dir = _run_dir(parent, f"{stamp}_seed{cfg.seed}")
    else:
        run_dir = _run_dir(parent, f"{stamp}_seeds{seeds[0]}-{seeds[-1]}")
    finals = []
    for seed in seeds:
        scfg = cfg.replace(seed=seed)
        out = run_dir if args.seeds == 1 else run_dir / f"seed_{seed}"
        result = train(ds, scfg, out)
        (out / "config.cfg").write_text(scfg.dumps(), encoding="utf-8")
        if args.dump_attention:
            dump_attention(result.model, ds, ds.split.test[: args.dump_attention], out / "attention.txt")
        finals.append(result.metrics)
        test = result.metrics.get("test")
        if test is not None:
            print(f"seed {seed}: test micro-F1 {test.micro_f1:.4f} macro-F1 {test.macro_f1:.4f}")
    if args.seeds > 1:
        agg = {}
        for split in finals[0]:
            for key in ("micro_f1", "macro_f1"):
                vals = np.array([getattr(m[split], key) for m in finals])
                agg[f"{split}_{key}"] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0)), "values": vals.tolist()}
        (run_dir / "aggregate.json").write_text(json.dumps(agg, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        for key in ("test_micro_f1", "test_macro_f1"):
            if key in agg:
                print(f"{key}: {agg[key]['mean']:.4f} ± {agg[key]['std']:.4f}")
    _write_manifest(run_dir, "train", args, cfg, checksum, seeds, started)
    print(run_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {args.checkpoint}: {exc}") from None
    ds = load_dataset(args.dataset_dir)
    try:
        model = restore_model(ckpt, ds)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    m = evaluate(model, ds, args.split)
    print(json.dumps({"split": args.split, "micro_f1": m.micro_f1, "macro_f1": m.macro_f1, "loss": m.loss}))
    if args.dump_attention:
        dump_attention(model, ds, ds.split[args.split], args.dump_attention)
    return EXIT_OK


def cmd_sample(args) -> int:
    ds = load_dataset(args.dataset_dir)
    g = ds.graph
    lookup = {int(x): i for i, x in enumerate(g.node_ids)}
    if args.node not in lookup:
        raise DataError(f"unknown node id {args.node}")
    try:
        cfg = SamplerConfig(D=args.hops, S=args.seq_len, policy=args.policy, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    seq = sample_context(g, lookup[args.node], cfg)
    print("pos\tnode\thop\tmask")
    for i, (v, h, m) in enumerate(zip(seq.nodes, seq.hop, seq.mask)):
        print(f"{i}\t{g.node_ids[v] if m else '-'}\t{h if m else '-'}\t{int(m)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .checks import GRADCHECK_CONFIG, run_gradcheck

    cfg = resolve_config(args.config, base=GRADCHECK_CONFIG) if args.config else GRADCHECK_CONFIG
    report = run_gradcheck(cfg.replace(dropout=0.0, attn_dropout=0.0), args.tolerance)
    for line in report.lines():
        print(line)
    print("PASS" if report.passed else "FAIL")
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(num_nodes=args.nodes, num_types=args.types, min_degree=args.min_degree,
                         max_degree=args.max_degree, seed=args.seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_dataset(generate(spec), args.out_dir)
    print(args.out_dir)
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.hgb_dir:
        ds = load_hgb(args.hgb_dir)
    else:
        ds = load_dataset(args.dataset_dir)
    stats = subgraph_stats(ds.graph)
    stats["target_type"] = ds.info.target_type
    stats["num_classes"] = ds.labels.num_classes
    stats["multilabel"] = ds.labels.multilabel
    print(json.dumps(stats, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sample": cmd_sample,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
