"""Command-line entry point: prepare, train, eval, ablate, sweep.

Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numerical
failure during training.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import evaluate, ingest
from .config import RunConfig, parse_config, serialize_config
from .errors import ConfigError, DataError, NumericalFailure, UsageError
from .model import AblationFlags, build_model
from .params import load_checkpoint
from .train import fit

log = logging.getLogger(__name__)

GROUP_FLAG_MODES = {"cold-start": "interaction-count",
                    "long-tail": "item-popularity"}

ABLATION_VARIANTS = ("full", "no_enhancement", "no_attention", "no_cl", "no_cg")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser():
    parser = _Parser(prog="kdar", description="knowledge-aware recommender engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="raw files -> processed dataset directory")
    p.add_argument("--interactions", required=True, help="raw interaction file")
    p.add_argument("--kg", required=True, help="raw triplet file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--format", choices=ingest_formats(), default="pairs",
                   help="interaction file format")
    p.add_argument("--threshold", type=float, default=4.0,
                   help="rating threshold for implicit positives (rating format)")
    p.add_argument("--core", type=int, default=5, help="minimum user degree kept")
    p.add_argument("--ratio", type=float, default=0.8, help="train share per user")
    p.add_argument("--seed", type=int, default=2024)
    p.add_argument("--force", action="store_true", help="overwrite existing output")

    p = sub.add_parser("train", help="fit a model on a processed dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--out", default=None, help="override config out_dir")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="processed dataset directory")
    p.add_argument("--config", default=None, help="config with model settings")
    p.add_argument("--k", default=None, help="comma-separated cutoff list")
    p.add_argument("--groups", choices=sorted(GROUP_FLAG_MODES), default=None)
    p.add_argument("--out", default=None, help="directory for report files")

    p = sub.add_parser("ablate", help="run the five model variants")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("sweep", help="sweep one hyperparameter")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, choices=("L", "tau"))
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    return parser


def ingest_formats():
    return ("pairs", "rating")


def _parse_k(text):
    try:
        ks = tuple(sorted(set(int(x) for x in text.split(","))))
    except ValueError:
        raise UsageError(f"--k: cannot parse {text!r} as integers") from None
    if not ks or any(k < 1 for k in ks):
        raise UsageError("--k values must be positive integers")
    return ks


def _load_config(args, require_data=True):
    cfg = parse_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if require_data and not cfg.data.processed_dir:
        raise ConfigError("data.processed_dir is required for this command")
    return cfg


def _train_once(cfg, table, kg, flags, out_dir, k_list):
    """Fit one model variant and report metrics from its best checkpoint."""
    model = build_model(table, kg, cfg.hp, flags, seed=cfg.train.seed)
    fit(model, table, cfg.train, k_list, out_dir=out_dir)
    load_checkpoint(Path(out_dir) / "checkpoint.bin", model.store)
    reps = model.frozen_representations()
    return evaluate.evaluate_reps(reps.user_final, reps.item_final, table, k_list)


def cmd_prepare(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise DataError(f"output directory {out} is not empty; use --force to overwrite")
    processed = ingest.prepare(
        args.interactions, args.kg, fmt=args.format, threshold=args.threshold,
        core=args.core, split_ratio=args.ratio, seed=args.seed)
    ingest.write_processed(out, processed)
    for key, value in processed.stats.as_dict().items():
        print(f"{key}={value}")
    print(f"written to {out}")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    table, kg, _ = ingest.load_processed(cfg.data.processed_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(serialize_config(cfg), encoding="utf-8")
    report = _train_once(cfg, table, kg, cfg.flags, out, cfg.k_list)
    (out / "report.txt").write_text(
        "\n".join(evaluate.report_lines(report)) + "\n", encoding="utf-8")
    print(evaluate.format_report(report))
    print(f"artifacts in {out}")
    return 0


def cmd_eval(args):
    cfg = _load_config(args, require_data=False)
    k_list = _parse_k(args.k) if args.k else cfg.k_list
    table, kg, _ = ingest.load_processed(args.data)
    model = build_model(table, kg, cfg.hp, cfg.flags, seed=cfg.train.seed)
    load_checkpoint(args.checkpoint, model.store)
    reps = model.frozen_representations()
    report = evaluate.evaluate_reps(reps.user_final, reps.item_final, table, k_list)
    lines = evaluate.report_lines(report)
    print(evaluate.format_report(report))
    if args.groups:
        grp = evaluate.group_report(report, GROUP_FLAG_MODES[args.groups])
        lines += evaluate.group_report_lines(grp)
        for entry in grp.groups:
            print(f"{entry['label']}: users={entry['count']} "
                  f"recall@{max(k_list)}={entry['recall'][max(k_list)]:.4f} "
                  f"auc={entry['auc']:.4f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _print_table(header, rows):
    table = [header] + [tuple(str(c) for c in row) for row in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    for r in table:
        print("  ".join(r[c].ljust(widths[c]) for c in range(len(header))))


def cmd_ablate(args):
    cfg = _load_config(args)
    table, kg, _ = ingest.load_processed(cfg.data.processed_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in ABLATION_VARIANTS:
        flags = AblationFlags(**({variant: True} if variant != "full" else {}))
        log.info("ablation variant %s", variant)
        report = _train_once(cfg, table, kg, flags, out / variant, (20,))
        rows.append((variant, f"{report.auc:.4f}",
                     f"{report.recall[20]:.4f}", f"{report.ndcg[20]:.4f}"))
    body = "\n".join("\t".join(r) for r in rows)
    (out / "ablation.txt").write_text(
        "variant\tauc\trecall@20\tndcg@20\n" + body + "\n", encoding="utf-8")
    _print_table(("variant", "auc", "recall@20", "ndcg@20"), rows)
    return 0


def cmd_sweep(args):
    cfg = _load_config(args)
    table, kg, _ = ingest.load_processed(cfg.data.processed_dir)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    kind = int if args.param == "L" else float
    try:
        raw = [kind(x) for x in args.values.split(",")]
    except ValueError:
        raise UsageError(f"--values: cannot parse {args.values!r}") from None
    values = []
    for v in raw:
        if v in values:
            log.warning("duplicate sweep value %s ignored", v)
        else:
            values.append(v)
    rows = []
    for v in values:
        if args.param == "L":
            hp = replace(cfg.hp, num_layers=v)
        else:
            hp = replace(cfg.hp, tau=v)
        hp.validate()
        run_cfg = replace(cfg, hp=hp)
        label = f"{args.param}_{v}"
        log.info("sweep point %s", label)
        report = _train_once(run_cfg, table, kg, cfg.flags, out / label, (20,))
        rows.append((str(v), f"{report.auc:.4f}",
                     f"{report.recall[20]:.4f}", f"{report.ndcg[20]:.4f}"))
    body = "\n".join("\t".join(r) for r in rows)
    (out / f"sweep_{args.param}.txt").write_text(
        f"{args.param}\tauc\trecall@20\tndcg@20\n" + body + "\n", encoding="utf-8")
    _print_table((args.param, "auc", "recall@20", "ndcg@20"), rows)
    return 0


_COMMANDS = {"prepare": cmd_prepare, "train": cmd_train, "eval": cmd_eval,
             "ablate": cmd_ablate, "sweep": cmd_sweep}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
