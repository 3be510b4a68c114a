"""Command-line entry point: ``siamese-fewshot <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .classify import embed_dataset, fit_classifier, grid_search
from .data import DataError, ImbalanceLevel, ImbalanceSpec, load_manifest, make_folds, mean_ir
from .experiment import (
    ConfigError,
    ExperimentConfig,
    emit_report,
    parse_config,
    run_experiment,
    run_scaling_study,
)
from .metrics import confusion, macro_f1
from .model import export_weights, import_weights, init_parameters, train_siamese
from .rng import derive_seed
from .synthetic import write_synthetic_corpus

log = logging.getLogger("siamese_fewshot")


def _load_config(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "mode", None):
        cfg = replace(cfg, mode=args.mode)
    if getattr(args, "output", None):
        cfg = replace(cfg, output_dir=str(Path(args.output).resolve()))
    return cfg


def cmd_prepare(args) -> int:
    cfg = _load_config(args)
    for name, path in cfg.datasets.items():
        ds = load_manifest(path, cfg.image_size, cfg.channels, name=name)
        print(f"{name}: {len(ds)} samples, image shape {ds.image_shape}")
        for split in ("train", "test"):
            part = ds.split(split)
            counts = part.class_counts()
            txt = ", ".join(f"class {c}: {n}" for c, n in sorted(counts.items()))
            print(f"  {split}: {txt or 'empty'}")
        totals = ds.class_counts()
        print(f"  MeanIR: {mean_ir(list(totals.values())):.4f}")
    return 0


def _technique(cfg: ExperimentConfig, index: int):
    if not 0 <= index < len(cfg.techniques):
        raise ConfigError(f"technique index {index} out of range (have {len(cfg.techniques)})")
    return cfg.techniques[index]


def _fold_draw(cfg: ExperimentConfig, src: str, level: ImbalanceLevel, majority: int, fold: int):
    pool = load_manifest(cfg.datasets[src], cfg.image_size, cfg.channels, name=src).split("train")
    spec = ImbalanceSpec.from_level(level, majority)
    plan = make_folds(pool, spec, cfg.folds, derive_seed(cfg.seed, "folds", src, level.value, majority))
    return plan.fold(pool, fold), plan


def cmd_train(args) -> int:
    cfg = _load_config(args)
    tech = _technique(cfg, args.technique)
    level = ImbalanceLevel.parse(args.level)
    src = args.source or next(iter(cfg.datasets))
    draw, plan = _fold_draw(cfg, src, level, args.majority, args.fold)
    if tech.init == "imported":
        init = init_parameters(cfg.backbone, "imported", path=tech.init_arg)
    else:
        if tech.init == "pretrain":
            log.warning("train: pretrain initialisation is only run inside 'experiment'; using scratch")
        init = init_parameters(cfg.backbone, "scratch_random",
                               derive_seed(cfg.seed, "init", args.technique, src, level.value, args.majority, args.fold))
    tc = replace(cfg.train, loss=tech.loss,
                 seed=derive_seed(cfg.seed, "train", args.technique, src, level.value, args.majority, args.fold))
    params, history = train_siamese(draw, tech.pairing, tech.augment, tc, init)
    out = Path(args.output or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_weights(params, out / "weights.bin")
    with open(out / "history.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        w.writerows([e, f"{v:.6f}"] for e, v in enumerate(history))
    (out / "draw.json").write_text(json.dumps({"fold": args.fold, "ids": draw.ids}, indent=1), encoding="utf-8")
    print(f"trained {len(history)} epochs; final loss {history[-1] if history else float('nan'):.6f}; "
          f"weights {params.fingerprint()} -> {out / 'weights.bin'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    tech = _technique(cfg, args.technique)
    level = ImbalanceLevel.parse(args.level)
    src = args.source or next(iter(cfg.datasets))
    dst = args.target or src
    params = import_weights(args.weights, expected=cfg.backbone)
    draw, _ = _fold_draw(cfg, src, level, args.majority, args.fold)
    test = load_manifest(cfg.datasets[dst], cfg.image_size, cfg.channels, name=dst).split("test")
    train_nc, test_nc = embed_dataset(params, draw), embed_dataset(params, test)
    classes = sorted(set(draw.classes) | set(test.classes))
    results = []
    for entry in tech.classifiers:
        spec = grid_search(train_nc, entry.spec, cfg.search_space, seed=cfg.seed) if entry.search else entry.spec
        fitted = fit_classifier(train_nc, spec)
        score = macro_f1(confusion(fitted.predict(test_nc.embeddings), test.labels, classes))
        results.append({"classifier": spec.kind, "macro_f1": round(score, 4),
                        "hyperparams": fitted.spec.hyperparameters()})
    doc = {"from": src, "to": dst, "level": level.value, "fold": args.fold, "results": results}
    print(json.dumps(doc, indent=1))
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return 0


def _run_grid(args, runner, command: str) -> int:
    cfg = _load_config(args)
    table = runner(cfg)
    paths = emit_report(table, cfg.output_dir, cfg, command=command)
    n_fail = len(table.failures)
    print(f"{len(table.rows)} rows ({n_fail} failed) -> {paths['raw'].parent}")
    for row in table.failures[:10]:
        print(f"  failed: {row.from_}->{row.to} {row.level} fold {row.fold} {row.classifier}: {row.error}",
              file=sys.stderr)
    return 0 if n_fail == 0 else 1


def cmd_experiment(args) -> int:
    return _run_grid(args, run_experiment, "experiment")


def cmd_scaling(args) -> int:
    return _run_grid(args, run_scaling_study, "scaling")


def cmd_synth(args) -> int:
    path = write_synthetic_corpus(
        args.output, name=args.name, train_counts=tuple(args.train), test_counts=tuple(args.test),
        size=args.size, noise=args.noise, seed=args.seed,
    )
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="siamese-fewshot", description="Few-shot Siamese experiments under class imbalance.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, output_help="output directory"):
        sp.add_argument("--config", required=True, help="experiment config JSON (or a run_manifest.json)")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--output", help=output_help)
        sp.add_argument("--mode", choices=("siamese", "single_cnn"), help="override the config mode")

    def cell(sp):
        sp.add_argument("--from", dest="source", help="training dataset (default: first in config)")
        sp.add_argument("--level", default="M", help="imbalance level H/M/L/N")
        sp.add_argument("--majority", type=int, default=100)
        sp.add_argument("--fold", type=int, default=0)
        sp.add_argument("--technique", type=int, default=0, help="technique index in the config")

    sp = sub.add_parser("prepare", help="validate manifests, print class counts and MeanIR")
    common(sp)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train one grid cell and write weights + history")
    common(sp)
    cell(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="score saved weights on a dataset's test split")
    common(sp)
    cell(sp)
    sp.add_argument("--to", dest="target", help="evaluation dataset (default: --from)")
    sp.add_argument("--weights", required=True)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("experiment", help="run the full grid and write the report")
    common(sp)
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("scaling", help="run the grid at majority sizes 100/200/300")
    common(sp)
    sp.set_defaults(func=cmd_scaling)

    sp = sub.add_parser("synth", help="write a synthetic blob-vs-ring corpus with a manifest")
    sp.add_argument("--output", required=True)
    sp.add_argument("--name", default="synthetic")
    sp.add_argument("--train", type=int, nargs=2, default=(300, 300), metavar=("N0", "N1"))
    sp.add_argument("--test", type=int, nargs=2, default=(100, 100), metavar=("N0", "N1"))
    sp.add_argument("--size", type=int, default=32)
    sp.add_argument("--noise", type=float, default=0.25)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
