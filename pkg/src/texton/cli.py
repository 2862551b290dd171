"""Command-line entry point: ``texton <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, apply_text
from .data import load_dataset, split_random
from .ensemble import ConfigError, TextureEnsemble
from .experiments import (ImportanceReport, design_from_cells, published_fmd_design,
                          read_accuracy_csv, report_emit, rf_importance, run_ablation)
from .gradcheck import layer_suite
from .synth import SyntheticTextureSpec, synth_generate, write_dataset
from .training import train

log = logging.getLogger("texton")


class UsageError(Exception):
    pass


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat 'section.key = value' file")
    p.add_argument("--dataset", help="dataset root (one directory per class)")
    p.add_argument("--out", help="output directory (default: $TEXTON_OUT or ./results)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="parallel worker processes (default 1)")
    p.add_argument("--methods", help="comma list of deepten,gap,histogram,fap")
    p.add_argument("--aggregator", choices=["concat", "bilinear"])
    p.add_argument("--scale", choices=["paper", "desk"], help="configuration preset")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key, e.g. train.lr=0.01")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="texton",
                                     description="Texture-method ensembles on a numpy autodiff core.")
    parser.add_argument("--version", action="version", version=f"texton {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("train", help="train one method selection")
    _common(p)
    p.add_argument("--split", type=int, default=0, help="which split to train on")

    p = sub.add_parser("ablate", help="train all 15 method subsets")
    _common(p)

    p = sub.add_parser("importance", help="random-forest importance of each method")
    _common(p)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--accuracies", help="CSV with deepten,gap,histogram,fap and mean_acc/accuracy")
    src.add_argument("--published-fmd", "--paper-fmd", dest="published_fmd",
                     action="store_true", help="use the built-in published FMD accuracy grid")
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--n-seeds", type=int, default=10)

    p = sub.add_parser("synth", help="generate a procedural texture dataset")
    _common(p)
    p.add_argument("--samples-per-class", type=int)
    p.add_argument("--image-size", type=int)

    p = sub.add_parser("gradcheck", help="verify analytic gradients of every layer")
    _common(p)
    p.add_argument("--coords", type=int, default=120)

    p = sub.add_parser("report", help="emit CSV/SVG reports from an ablation directory")
    _common(p)
    p.add_argument("--accuracies", help="ablation CSV (default: <out>/ablation.csv)")
    return parser


def resolve_config(args) -> RunConfig:
    """Preset, then config file, then flags (later wins)."""
    scale = args.scale
    text = None
    if args.config:
        text = Path(args.config).read_text()
        if scale is None:
            for line in text.splitlines():
                key, _, value = line.split("#", 1)[0].partition("=")
                if key.strip() == "run.scale":
                    scale = value.strip()
    cfg = RunConfig.preset(scale or "paper")
    if text is not None:
        apply_text(cfg, text)
    if args.scale:
        cfg.run.scale = args.scale
    overrides = {"data.dataset": args.dataset, "run.out": args.out, "run.seed": args.seed,
                 "run.workers": args.workers, "model.methods": args.methods,
                 "model.aggregator": args.aggregator}
    for key, value in overrides.items():
        if value is not None:
            cfg.set(key, value if isinstance(value, str) else str(value))
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        cfg.set(key.strip(), value.strip())
    if not cfg.run.out:
        cfg.run.out = os.environ.get("TEXTON_OUT", "results")
    if cfg.run.workers < 1:
        raise UsageError("--workers must be >= 1")
    cfg.train.seed = cfg.run.seed
    return cfg


def versions() -> dict:
    return {"texton": __version__, "numpy": np.__version__, "python": platform.python_version()}


def write_run_json(cfg: RunConfig, command: str, argv, extra: dict | None = None) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    record = {"command": command, "argv": list(argv), "seed": cfg.run.seed,
              "config": {k: v for k, v in cfg.to_dict().items()},
              "config_text": cfg.dumps(), "versions": versions()}
    record.update(extra or {})
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=1, default=str))
    cfg.save(out / "config.txt")
    return path


def _load(cfg: RunConfig):
    if not cfg.data.dataset:
        raise UsageError("--dataset is required")
    manifest = load_dataset(cfg.data.dataset)
    if manifest.load_errors:
        log.warning("%d files could not be decoded", len(manifest.load_errors))
    if not manifest.splits:
        split_random(manifest, cfg.data.n_splits, cfg.data.train_fraction, cfg.data.split_seed)
    return manifest


def cmd_train(cfg: RunConfig, args) -> int:
    manifest = _load(cfg)
    if not 0 <= args.split < len(manifest.splits):
        raise UsageError(f"--split must be in [0, {len(manifest.splits)})")
    out = Path(cfg.run.out)
    metrics = out / "metrics.csv"
    out.mkdir(parents=True, exist_ok=True)
    if metrics.exists():
        metrics.unlink()
    model = TextureEnsemble(cfg.ensemble(manifest.n_classes),
                            np.random.default_rng([cfg.run.seed, 0]))
    result = train(model, manifest, manifest.splits[args.split], cfg.train, cfg.augment,
                   run_id=f"{cfg.selection()}-split{args.split}", metrics_path=metrics)
    write_run_json(cfg, "train", args.argv,
                   {"dataset_id": manifest.dataset_id, "split": args.split,
                    "test_acc": result.test_acc})
    print(f"{cfg.selection()}: test accuracy {result.test_acc:.2f}%")
    return 0


def cmd_ablate(cfg: RunConfig, args) -> int:
    manifest = _load(cfg)
    write_run_json(cfg, "ablate", args.argv, {"dataset_id": manifest.dataset_id})
    cells = run_ablation(manifest, cfg, out_dir=cfg.run.out, workers=cfg.run.workers)
    X, y = design_from_cells(cells)
    importance = rf_importance(X, y) if len(y) >= 2 and len({tuple(r) for r in X}) == len(X) \
        else None
    paths = report_emit(cells, importance, cfg.run.out)
    failed = [c for c in cells if c.error]
    for c in cells:
        tag = " (proposed)" if c.proposed else ""
        status = f"ERROR {c.error}" if c.error else f"{c.mean:.2f} +- {c.std:.2f}"
        print(f"{str(c.selection):<32} {status}{tag}")
    print(f"wrote {paths['ablation']}")
    return 1 if failed else 0


def _print_importance(rep: ImportanceReport) -> None:
    for m, imp in zip(rep.methods, rep.importances):
        print(f"{m:<10} {imp:.4f}  rank {rep.rank_of(m)}")
    print("ranking: " + " > ".join(rep.majority_ranking))
    if rep.degenerate:
        print("warning: accuracies are constant; importances are uniform")


def cmd_importance(cfg: RunConfig, args) -> int:
    if args.published_fmd:
        X, y = published_fmd_design()
    else:
        path = args.accuracies or str(Path(cfg.run.out) / "ablation.csv")
        if not Path(path).exists():
            raise UsageError(f"accuracy file not found: {path}")
        X, y = read_accuracy_csv(path)
    rep = rf_importance(X, y, n_trees=args.trees, seeds=range(args.n_seeds))
    report_emit(None, rep, cfg.run.out)
    _print_importance(rep)
    return 0


def cmd_synth(cfg: RunConfig, args) -> int:
    if args.samples_per_class is not None:
        cfg.synth.samples_per_class = args.samples_per_class
    if args.image_size is not None:
        cfg.synth.image_size = args.image_size
    if args.seed is not None:
        cfg.synth.seed = args.seed
    root = cfg.data.dataset or cfg.run.out
    spec = SyntheticTextureSpec(samples_per_class=cfg.synth.samples_per_class,
                                image_size=cfg.synth.image_size, seed=cfg.synth.seed,
                                noise=cfg.synth.noise)
    manifest = synth_generate(spec)
    write_dataset(manifest, root)
    print(f"wrote {len(manifest)} images in {manifest.n_classes} classes to {root}")
    return 0


def cmd_gradcheck(cfg: RunConfig, args) -> int:
    reports = layer_suite(n_coords=args.coords, seed=cfg.run.seed)
    for r in reports:
        print(r)
    return 0 if all(r.passed for r in reports) else 1


def cmd_report(cfg: RunConfig, args) -> int:
    path = args.accuracies or str(Path(cfg.run.out) / "ablation.csv")
    if not Path(path).exists():
        raise UsageError(f"ablation file not found: {path}")
    X, y = read_accuracy_csv(path)
    rep = rf_importance(X, y)
    paths = report_emit(None, rep, cfg.run.out)
    _print_importance(rep)
    for p in paths.values():
        print(f"wrote {p}")
    return 0


COMMANDS = {"train": cmd_train, "ablate": cmd_ablate, "importance": cmd_importance,
            "synth": cmd_synth, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except (UsageError, ConfigError, FileNotFoundError, ValueError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"texton {args.command}: error: {exc}", file=sys.stderr)
        return 2
