"""Command-line entry point: ``pfn train | eval | inspect | gen-data | gradcheck``.

Settings are resolved in this order, later winning: built-in defaults,
command-line flags (including ``--set section.key=value``), then the file
given by ``--config``. Run directories are created under ``$PFN_RUNS_DIR``
(default ``./runs``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..arch import PfnConfig, PfnModel
from ..engine import ConfigurationError
from ..metrics import format_table
from ..synth import SynthConfig, dataset, export_triplets, load_triplets
from .checkpoint import IncompatibleCheckpoint
from .config import TrainConfig, apply_overrides, read_config_file
from .evaluate import evaluate, resolve_checkpoint
from .gradsuite import MODEL_TOL, OP_TOL, run_model_check, run_op_checks
from .train import TrainingDiverged, runs_root, train

# flag name -> (section, key)
TRAIN_FLAGS = {
    "task": ("train", "task"),
    "max_iter": ("train", "max_iter"),
    "lr": ("train", "lr"),
    "lr_schedule": ("train", "lr_schedule"),
    "batch_size": ("train", "batch_size"),
    "seed": ("train", "seed"),
    "pose_source": ("train", "pose_source"),
    "checkpoint_every": ("train", "checkpoint_every"),
    "train_count": ("train", "train_count"),
    "scales": ("model", "scales"),
    "sc": ("model", "sc"),
    "pc": ("model", "pc"),
    "height": ("data", "height"),
    "width": ("data", "width"),
}


def _parse_sets(pairs) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in pairs or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigurationError(f"--set expects section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.split(".", 1)
        out.setdefault(section.strip(), {})[key.strip()] = value.strip()
    return out


def resolve_config(args) -> TrainConfig:
    sections: dict[str, dict[str, str]] = {}
    for flag, (section, key) in TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            sections.setdefault(section, {})[key] = str(value)
    for section, values in _parse_sets(getattr(args, "set", None)).items():
        sections.setdefault(section, {}).update(values)
    config = apply_overrides(TrainConfig(), sections)
    if getattr(args, "config", None):
        config = apply_overrides(config, read_config_file(Path(args.config)))
    return config


# -- subcommands ----------------------------------------------------------------


def cmd_train(args) -> int:
    config = resolve_config(args)
    run_dir = Path(args.run_dir) if args.run_dir else runs_root() / (args.name or f"{config.task}-{config.hash()}")
    every = max(1, args.log_every)

    def progress(row):
        if row["step"] % every == 0:
            extra = f" photometric={row['photometric']:.5f}" if "photometric" in row else ""
            extra += f" pixel_acc={row['pixel_accuracy']:.4f}" if "pixel_accuracy" in row else ""
            print(f"step {row['step']:5d} loss={row['loss']:.5f}{extra} grad_norm={row['grad_norm']:.4f}", flush=True)

    try:
        result = train(config, run_dir, resume=args.resume, progress=None if args.quiet else progress)
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(f"run directory: {result.run_dir}")
    print(json.dumps(result.summary, indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    explicit = args.config or args.set or any(getattr(args, f, None) is not None for f in TRAIN_FLAGS)
    config = resolve_config(args) if explicit else None
    ckpt = resolve_checkpoint(Path(args.checkpoint))
    triplets = load_triplets(Path(args.manifest)) if args.manifest else None
    out_dir = Path(args.out) if args.out else ckpt.parent.parent / "eval"
    try:
        result = evaluate(ckpt, triplets, config, median_scaling=args.median_scaling, out_dir=out_dir, split=args.split)
    except IncompatibleCheckpoint as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(result.table())
    for f in result.files:
        print(f"wrote {f}")
    return 0


def cmd_inspect(args) -> int:
    if args.config:
        model_cfg = apply_overrides(TrainConfig(), read_config_file(Path(args.config))).model
    else:
        n = tuple(int(v) for v in args.n.split(",")) if "," in args.n else int(args.n)
        model_cfg = PfnConfig(
            scales=args.scales,
            n=n,
            sc=args.sc,
            pc=args.pc,
            kernel=args.kernel,
            fusion_inner=args.fusion_inner,
            fusion_output=args.fusion_output,
            cws_weighted=not args.unweighted,
            output_scales=min(args.output_scales, args.scales),
        )
    stats = PfnModel(model_cfg).stats().to_dict()
    if args.json:
        print(json.dumps({"model": model_cfg.to_dict(), "stats": stats}, indent=2))
    else:
        rows = [{"field": k, "value": v if not isinstance(v, list) else " ".join(map(str, v))} for k, v in stats.items()]
        print(format_table(rows, ("field", "value")))
    return 0


def cmd_gen_data(args) -> int:
    cfg = SynthConfig(height=args.height, width=args.width)
    manifest = export_triplets(dataset(cfg, args.count, args.seed), Path(args.out))
    print(f"wrote {args.count} triplets, manifest {manifest}")
    return 0


def cmd_gradcheck(args) -> int:
    results = run_op_checks(args.op_tol or OP_TOL, args.ops)
    if not args.ops_only:
        results.append(run_model_check(tol=args.model_tol or MODEL_TOL, entries_per_leaf=args.entries))
    rows = [
        {"check": r.name, "max_rel_err": f"{r.max_rel_err:.2e}", "entries": r.checked, "tol": f"{r.tol:.0e}",
         "status": "pass" if r.passed else "FAIL"}
        for r in results
    ]
    print(format_table(rows, ("check", "max_rel_err", "entries", "tol", "status")))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return 1 if failed else 0


# -- parser -------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI config file; its values override flags")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override any config key")
    p.add_argument("--task", choices=("depth", "segmentation"), help="training recipe (default depth)")
    p.add_argument("--max-iter", type=int, help="optimizer steps (default 500)")
    p.add_argument("--lr", type=float, help="base learning rate (default 1e-4 depth, 1e-2 segmentation)")
    p.add_argument("--lr-schedule", choices=("constant", "poly"), help="default constant for depth, poly for segmentation")
    p.add_argument("--batch-size", type=int, help="default 2")
    p.add_argument("--seed", type=int, help="parameter init and data order seed (default 0)")
    p.add_argument("--pose-source", choices=("ground_truth", "learned"), help="default ground_truth")
    p.add_argument("--checkpoint-every", type=int, help="save every N steps; 0 saves only at the end")
    p.add_argument("--train-count", type=int, help="number of training triplets (default 16)")
    p.add_argument("--scales", type=int, help="pyramid scales S (default 3)")
    p.add_argument("--sc", type=int, help="shared channels (default 4)")
    p.add_argument("--pc", type=int, help="private channels (default 8)")
    p.add_argument("--height", type=int, help="image height (default 64)")
    p.add_argument("--width", type=int, help="image width (default 64)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pfn", description="Fractal pyramid networks on numpy")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a depth or segmentation model")
    _add_train_flags(p)
    p.add_argument("--run-dir", help="explicit run directory")
    p.add_argument("--name", help="run name under $PFN_RUNS_DIR (default <task>-<config hash>)")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in the run directory")
    p.add_argument("--log-every", type=int, default=25)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint", help="checkpoint directory or run directory")
    _add_train_flags(p)
    p.add_argument("--manifest", help="evaluate triplets from an exported manifest instead of generating them")
    p.add_argument("--split", choices=("train", "val"), default="val")
    p.add_argument("--median-scaling", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out", help="report directory (default <run>/eval)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print graph statistics of a model configuration")
    p.add_argument("--config", help="INI config file ([model] section is used)")
    p.add_argument("--scales", type=int, default=5)
    p.add_argument("--n", default="2", help="composition count, or comma list of one count per scale")
    p.add_argument("--sc", type=int, default=18)
    p.add_argument("--pc", type=int, default=54)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--fusion-inner", default="cws")
    p.add_argument("--fusion-output", default="ctc")
    p.add_argument("--unweighted", action="store_true", help="fixed equal weights for CWS fusion")
    p.add_argument("--output-scales", type=int, default=4)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("gen-data", help="export synthetic triplets as PPM images with a JSON manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--ops", nargs="*", help="restrict to these op checks")
    p.add_argument("--ops-only", action="store_true", help="skip the whole-network check")
    p.add_argument("--op-tol", type=float)
    p.add_argument("--model-tol", type=float)
    p.add_argument("--entries", type=int, default=16, help="sampled entries per parameter tensor")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigurationError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
