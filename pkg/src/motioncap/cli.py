"""Command-line surface tying the pipeline together.

Machine-readable JSON goes to stdout; human-readable notes go to stderr so
stdout stays pipeable. A JSON config file may pre-set any flag; explicit
flags win. Exit codes: 0 ok, 2 usage, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict

import numpy as np

from . import data as data_mod
from . import db as db_mod
from . import metrics as metrics_mod
from .diagnostics import LOSS_NAMES, loss_grad_check
from .nn import NonFiniteError
from .training import (
    PRESETS,
    VARIANTS,
    Checkpoint,
    TrainConfig,
    Trainer,
    TrainingError,
    infer,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_DATA):
        super().__init__(message)
        self.code = code


def _echo(payload: dict, args) -> dict:
    """Attach the effective configuration to a report for reproducibility."""
    payload["effective_config"] = {
        k: v for k, v in sorted(vars(args).items()) if k != "func"
    }
    return payload


def _emit(payload: dict, out_path=None) -> None:
    text_out = json.dumps(payload, indent=1)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text_out + "\n")
        print(f"wrote {out_path}", file=sys.stderr)
    else:
        print(text_out)


def _load_dataset(path) -> data_mod.Dataset:
    try:
        return data_mod.load(path)
    except (OSError, data_mod.DataError) as exc:
        raise CliError(f"cannot load dataset {path}: {exc}")


def _load_checkpoint(path) -> Checkpoint:
    try:
        return Checkpoint.load(path)
    except (OSError, TrainingError, ValueError) as exc:
        raise CliError(f"cannot load checkpoint {path}: {exc}")


def _load_db(path) -> db_mod.Database:
    try:
        return db_mod.Database.load(path)
    except (OSError, db_mod.DatabaseError) as exc:
        raise CliError(f"cannot load database {path}: {exc}")


def _check_widths(ckpt: Checkpoint, database: db_mod.Database) -> None:
    if database.width != ckpt.config.d_embed:
        raise CliError(
            f"database width {database.width} does not match checkpoint "
            f"embedding width {ckpt.config.d_embed}"
        )


# -- commands ----------------------------------------------------------------


def cmd_gen_data(args) -> int:
    dataset = data_mod.synth_generate(
        args.classes, args.per_class, args.frames, args.channels, args.seed
    )
    data_mod.save(dataset, args.out)
    counts = {name: len(dataset.split(name)) for name in ("train", "val", "test")}
    _emit(_echo({"samples": len(dataset), "splits": counts, "path": args.out}, args))
    return EXIT_OK


def cmd_stats(args) -> int:
    dataset = _load_dataset(args.data)
    if args.lemmatize:
        from .text import lemmatize
        for s in dataset.samples:
            s.high_captions = [lemmatize(c) for c in s.high_captions]
    report = data_mod.stats(dataset)
    _emit(_echo(report.to_dict(), args))
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(seed=args.seed)
    if args.preset:
        for key, value in PRESETS[args.preset].items():
            setattr(cfg, key, value)
    overrides = {
        "k": args.k, "c": args.c, "epochs": args.epochs, "batch_size": args.batch,
        "lr": args.lr, "variant": args.variant, "lambda1": args.lambda1,
        "lambda2": args.lambda2, "lambda3": args.lambda3, "l2_form": args.l2_form,
        "exclude_self": args.exclude_self or None,
        "d_model": args.d_model, "n_layers": args.layers, "n_heads": args.heads,
        "patch_t": args.patch_t, "patch_j": args.patch_j, "d_embed": args.d_embed,
        "min_freq": args.min_freq,
        "lemmatize_validation": args.lemmatize or None,
    }
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.no_grad_clip:
        cfg.grad_clip = 0.0
    return cfg


def cmd_train(args) -> int:
    dataset = _load_dataset(args.data)
    cfg = _train_config(args)
    try:
        trainer = Trainer(dataset, cfg)
        result = trainer.train(log_path=args.log_path)
    except (data_mod.DataError, TrainingError) as exc:
        raise CliError(str(exc))
    result.checkpoint.save(args.out_ckpt)
    result.db.save(args.out_db)
    best = result.checkpoint
    _emit(_echo({
        "best_epoch": best.epoch,
        "best_metrics": best.metrics,
        "epochs": [row.to_dict() for row in result.logs],
        "ckpt": args.out_ckpt,
        "db": args.out_db,
        "config": asdict(cfg),
    }, args))
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = _load_checkpoint(args.ckpt)
    database = _load_db(args.db)
    variant = args.variant or ckpt.config.variant
    if variant != "base":
        _check_widths(ckpt, database)
    dataset = _load_dataset(args.data)
    samples = dataset.split(args.split)
    if not samples:
        raise CliError(f"split {args.split!r} is empty in {args.data}")
    bundle = ckpt.build_models()
    splits = set(args.db_splits.split(",")) if args.db_splits else None
    pairs = []
    for sample in samples:
        result = infer(sample.motion, bundle, database, variant=variant,
                       k=args.k, splits=splits)
        pairs.append(metrics_mod.EvalPair(result.final_caption, sample.high_captions))
    try:
        report = metrics_mod.evaluate(pairs, lemmatized=args.lemmatize)
    except metrics_mod.DegenerateCorpusError as exc:
        raise CliError(str(exc), EXIT_NUMERIC)
    payload = report.to_dict()
    payload["variant"] = variant
    payload["split"] = args.split
    _emit(_echo(payload, args), args.out)
    return EXIT_OK


def cmd_caption(args) -> int:
    ckpt = _load_checkpoint(args.ckpt)
    database = _load_db(args.db)
    variant = args.variant or ckpt.config.variant
    if variant != "base":
        _check_widths(ckpt, database)
    dataset = _load_dataset(args.data)
    try:
        sample = dataset.by_id(args.motion_id)
    except data_mod.DataError as exc:
        raise CliError(str(exc))
    bundle = ckpt.build_models()
    result = infer(sample.motion, bundle, database, variant=variant, k=args.k)
    payload = result.to_dict()
    payload["motion_id"] = args.motion_id
    _emit(_echo(payload, args))
    return EXIT_OK


def cmd_retrieve(args) -> int:
    ckpt = _load_checkpoint(args.ckpt)
    database = _load_db(args.db)
    _check_widths(ckpt, database)
    bundle = ckpt.build_models()
    query = bundle.embed_text(args.text)
    result = database.topk(query, args.k)
    _emit(_echo({
        "query": args.text,
        "results": [
            {"caption": c, "score": s, "entry_id": i} for c, s, i in result
        ],
        "clamped": result.clamped,
    }, args))
    return EXIT_OK


def cmd_enrich_db(args) -> int:
    ckpt = _load_checkpoint(args.ckpt)
    database = _load_db(args.db)
    _check_widths(ckpt, database)
    dataset = _load_dataset(args.data)
    samples = [s for s in dataset.split(args.split) if s.low_caption]
    if not samples:
        raise CliError(f"no samples with low captions in split {args.split!r}")
    bundle = ckpt.build_models()
    before = len(database)
    database.enrich(
        (s.motion_id, s.primary_caption, s.low_caption,
         bundle.embed_text(s.low_caption), args.split)
        for s in samples
    )
    out_path = args.out or args.db
    database.save(out_path)
    _emit(_echo({
        "before": before, "after": len(database), "added": len(database) - before,
        "path": out_path,
    }, args))
    return EXIT_OK


def cmd_expand_captions(args) -> int:
    dataset = _load_dataset(args.data)
    with open(args.template, encoding="utf-8") as fh:
        template = fh.read()
    report = data_mod.expand_captions(
        dataset, args.endpoint, template, timeout=args.timeout,
        max_retries=args.max_retries, cache_path=args.cache,
    )
    out_path = args.out or args.data
    data_mod.save(dataset, out_path)
    _emit(_echo({
        "filled": report.filled,
        "failed": [{"motion_id": m, "reason": r} for m, r in report.failed],
        "network_calls": report.network_calls,
        "path": out_path,
    }, args))
    return EXIT_OK


def cmd_grad_check(args) -> int:
    report = loss_grad_check(args.loss, args.trials, seed=args.seed, eps=args.eps)
    _emit(_echo(report, args))
    if not np.isfinite(report["max_rel_error"]) or report["max_rel_error"] >= 1e-4:
        raise CliError(
            f"gradient check failed: max relative error {report['max_rel_error']:.3e}",
            EXIT_NUMERIC,
        )
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="motioncap",
        description="Hierarchical motion captioning with caption retrieval.",
    )
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults (default: none)")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0, help="RNG seed (default: 0)")
        p.add_argument("--log-path", default=None,
                       help="JSON-lines log destination (default: none)")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--classes", type=int, default=8, help="motion classes (default: 8)")
    p.add_argument("--per-class", type=int, default=25,
                   help="samples per class (default: 25)")
    p.add_argument("--frames", type=int, default=64, help="frames per motion (default: 64)")
    p.add_argument("--channels", type=int, default=32,
                   help="joint-state channels (default: 32)")
    p.add_argument("--out", required=True, help="output dataset path")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("stats", help="dataset word/lemma statistics")
    common(p)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--lemmatize", action="store_true",
                   help="lemmatize captions before counting (default: off)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="train a captioning model")
    common(p)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--out-ckpt", required=True, help="checkpoint output path")
    p.add_argument("--out-db", required=True, help="database output path")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="bundle of k/c/patch defaults (default: none)")
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="training variant (default: complete)")
    p.add_argument("--k", type=int, default=None, help="retrieved captions (default: 2)")
    p.add_argument("--c", type=float, default=None,
                   help="contrastive margin constant (default: 0.7)")
    p.add_argument("--epochs", type=int, default=None, help="epochs (default: 10)")
    p.add_argument("--batch", type=int, default=None, help="batch size (default: 8)")
    p.add_argument("--lr", type=float, default=None, help="learning rate (default: 1e-4)")
    p.add_argument("--lambda1", type=float, default=None,
                   help="low-level loss weight (default: 1)")
    p.add_argument("--lambda2", type=float, default=None,
                   help="contrastive loss weight (default: 1)")
    p.add_argument("--lambda3", type=float, default=None,
                   help="final-caption loss weight (default: 1)")
    p.add_argument("--l2-form", choices=("paper", "hinge"), default=None,
                   help="contrastive form (default: paper)")
    p.add_argument("--exclude-self", action="store_true",
                   help="exclude the sample's own captions from training retrieval "
                        "(default: off)")
    p.add_argument("--no-grad-clip", action="store_true",
                   help="disable gradient clipping (default: clip at norm 1.0)")
    p.add_argument("--d-model", type=int, default=None,
                   help="model width (default: 64)")
    p.add_argument("--layers", type=int, default=None,
                   help="transformer layers (default: 2)")
    p.add_argument("--heads", type=int, default=None,
                   help="attention heads (default: 4)")
    p.add_argument("--patch-t", type=int, default=None,
                   help="patch length in frames (default: 16)")
    p.add_argument("--patch-j", type=int, default=None,
                   help="patch width in channels (default: 32)")
    p.add_argument("--d-embed", type=int, default=None,
                   help="sentence embedding width (default: 64)")
    p.add_argument("--min-freq", type=int, default=None,
                   help="vocabulary frequency threshold (default: 1)")
    p.add_argument("--lemmatize", action="store_true",
                   help="lemmatized validation protocol for model selection "
                        "(default: off)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on a split")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--db", required=True, help="database path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--split", default="test", help="dataset split (default: test)")
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="override the checkpoint's variant (default: checkpoint)")
    p.add_argument("--k", type=int, default=None,
                   help="retrieved captions (default: checkpoint)")
    p.add_argument("--db-splits", default=None,
                   help="comma-separated db splits to search (default: all)")
    p.add_argument("--lemmatize", action="store_true",
                   help="lemmatized evaluation protocol (default: off)")
    p.add_argument("--out", default=None, help="report path (default: stdout)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("caption", help="caption one motion from a dataset")
    common(p)
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--db", required=True, help="database path")
    p.add_argument("--data", required=True, help="dataset path holding the motion")
    p.add_argument("--motion-id", required=True, help="motion id to caption")
    p.add_argument("--k", type=int, default=None,
                   help="retrieved captions (default: checkpoint)")
    p.add_argument("--variant", choices=VARIANTS, default=None,
                   help="override the checkpoint's variant (default: checkpoint)")
    p.set_defaults(func=cmd_caption)

    p = sub.add_parser("retrieve", help="query the database with free text")
    common(p)
    p.add_argument("--db", required=True, help="database path")
    p.add_argument("--ckpt", required=True, help="checkpoint supplying the text encoder")
    p.add_argument("--text", required=True, help="query text")
    p.add_argument("--k", type=int, default=5, help="results to return (default: 5)")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("enrich-db", help="add a split's captions to a database")
    common(p)
    p.add_argument("--db", required=True, help="database path")
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--split", default="val", help="split to add (default: val)")
    p.add_argument("--ckpt", required=True, help="checkpoint supplying the text encoder")
    p.add_argument("--out", default=None,
                   help="output database path (default: overwrite --db)")
    p.set_defaults(func=cmd_enrich_db)

    p = sub.add_parser("expand-captions", help="fill low-level captions via an endpoint")
    common(p)
    p.add_argument("--data", required=True, help="dataset path")
    p.add_argument("--endpoint", required=True, help="expansion endpoint URL")
    p.add_argument("--template", required=True,
                   help="prompt template file containing {caption}")
    p.add_argument("--timeout", type=float, default=10.0,
                   help="request timeout in seconds (default: 10)")
    p.add_argument("--max-retries", type=int, default=2,
                   help="retries per caption (default: 2)")
    p.add_argument("--cache", default=None,
                   help="expansion cache file (default: none)")
    p.add_argument("--out", default=None,
                   help="output dataset path (default: overwrite --data)")
    p.set_defaults(func=cmd_expand_captions)

    p = sub.add_parser("grad-check", help="finite-difference check of a loss term")
    common(p)
    p.add_argument("--loss", choices=LOSS_NAMES, required=True, help="loss to check")
    p.add_argument("--trials", type=int, default=20, help="random trials (default: 20)")
    p.add_argument("--eps", type=float, default=1e-5,
                   help="finite-difference step (default: 1e-5)")
    p.set_defaults(func=cmd_grad_check)

    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> list[str]:
    """Turn config-file entries into leading flags so explicit flags win."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    try:
        path = argv[idx + 1]
    except IndexError:
        return argv
    with open(path, encoding="utf-8") as fh:
        entries = json.load(fh)
    injected: list[str] = []
    for key, value in entries.items():
        flag = "--" + key.replace("_", "-")
        if flag in argv:
            continue
        if isinstance(value, bool):
            if value:
                injected.append(flag)
        else:
            injected.extend([flag, str(value)])
    # insert after the subcommand name
    out = argv[:idx] + argv[idx + 2:]
    for pos, token in enumerate(out):
        if not token.startswith("-"):
            return out[:pos + 1] + injected + out[pos + 1:]
    return out + injected


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, argv)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config file: {exc}", file=sys.stderr)
        return EXIT_DATA
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (data_mod.DataError, db_mod.DatabaseError, TrainingError,
            metrics_mod.MetricError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
