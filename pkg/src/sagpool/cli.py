"""Command-line entry point: ``sagpool {inspect,train,cv,grid,gradcheck,bench}``.

Exit codes: 0 success, 1 invalid input (flags, config, dataset files), 2 numeric abort.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autograd import NonFiniteError
from .datasets import ParseError, StratificationError, cycle_star_dataset, load_dataset, make_folds, summarize
from .models import save_checkpoint
from .training import (
    ConfigError,
    TrialConfig,
    append_trial_record,
    cross_validate,
    evaluate,
    grid_search,
    read_trial_records,
    substream,
    table_grid,
    train_one,
    write_summary_csv,
)

log = logging.getLogger("sagpool")

SYNTHETIC = "SYNTH_CYCLE_STAR"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _add_data_flags(p):
    p.add_argument("--dataset", required=True, help=f"TUDataset name, or {SYNTHETIC} for the built-in toy set")
    p.add_argument("--data-root", default="data", help="directory holding <name>/<name>_A.txt etc.")


def _add_model_flags(p):
    p.add_argument("--arch", choices=("global", "hierarchical"), default="hierarchical")
    p.add_argument("--pooling", choices=("sagpool", "gpool"), default="sagpool")
    p.add_argument("--variant", choices=("base", "augmentation", "serial", "parallel"), default="base")
    p.add_argument("--heads", type=int, default=None, help="score heads for --variant parallel (default 2)")
    p.add_argument("--ratio", type=float, default=None, help="pooling ratio, hierarchical only (default 0.5)")
    p.add_argument("--hidden", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--binarize-augmented", action="store_true")
    p.add_argument("--no-stratify", action="store_true")
    p.add_argument("--off-grid", action="store_true", help="allow values outside the search grid")
    p.add_argument("--jobs", type=int, default=1, help="parallel folds (default 1)")
    p.add_argument("--config", type=Path, default=None, help="JSON file whose keys mirror the flags")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sagpool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("inspect", help="print dataset statistics")
    _add_data_flags(p)
    p.add_argument("--out", type=Path, default=None, help="also write the row as JSON")

    p = sub.add_parser("train", help="fit one configuration and write a checkpoint")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", type=Path, default=Path("model.ckpt.json"))

    p = sub.add_parser("cv", help="k-fold cross-validation, one JSON record per seed")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds, starting at --seed")
    p.add_argument("--out", type=Path, default=Path("results.jsonl"))
    p.add_argument("--summary", type=Path, default=None, help="CSV table of mean ± std per method and dataset")

    p = sub.add_parser("grid", help="grid search over learning rate, hidden size, weight decay and ratio")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--grid-lr", type=_floats, default=None, help="comma list restricting the learning rates")
    p.add_argument("--grid-hidden", type=_ints, default=None)
    p.add_argument("--grid-weight-decay", type=_floats, default=None)
    p.add_argument("--grid-ratio", type=_floats, default=None)
    p.add_argument("--out", type=Path, default=Path("grid.jsonl"))

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer's gradient")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--graphs", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("bench", help="time sparse vs dense pooling forward passes")
    p.add_argument("--sizes", type=_ints, default=None, help="comma list of node counts")
    p.add_argument("--features", type=int, default=64)
    p.add_argument("--degree", type=float, default=4.0)
    p.add_argument("--repeats", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-dense", action="store_true")
    p.add_argument("--compare-backends", action="store_true", help="also time each kernel backend")
    p.add_argument("--out", type=Path, default=Path("bench.csv"))
    return parser


def _apply_config_file(parser, argv, args):
    """Re-parse with defaults from ``--config`` so explicit flags still win."""
    if getattr(args, "config", None) is None:
        return args
    try:
        doc = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"{args.config}: {exc}") from None
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    defaults = {}
    for key, value in doc.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in ("config", "dataset"):
            raise UsageError(f"{args.config}: unknown or disallowed key {key!r}")
        defaults[dest] = value
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def trial_config(args) -> TrialConfig:
    if args.heads is not None and args.variant != "parallel":
        raise UsageError("--heads only applies to --variant parallel")
    if args.arch == "global" and args.ratio is not None:
        raise UsageError("--ratio conflicts with --arch global: the global architecture keeps a fixed K nodes per graph")
    given = {
        "arch": args.arch,
        "pooling": args.pooling,
        "variant": args.variant,
        "heads": args.heads,
        "ratio": args.ratio,
        "hidden": args.hidden,
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "batch_size": args.batch_size,
        "patience": args.patience,
        "max_epochs": args.max_epochs,
        "seed": args.seed,
        "folds": args.folds,
        "stratify": not args.no_stratify,
        "binarize_augmented": args.binarize_augmented,
        "off_grid": args.off_grid,
    }
    return TrialConfig(**{k: v for k, v in given.items() if v is not None})


def load_graphs(args):
    if args.dataset == SYNTHETIC:
        graphs = cycle_star_dataset(seed=0)
        return graphs, summarize(SYNTHETIC, graphs)
    return load_dataset(args.dataset, args.data_root)


def cmd_inspect(args) -> int:
    _, summary = load_graphs(args)
    row = summary.as_row()
    w = max(10, len(row["dataset"]) + 2)
    print(f"{'dataset':<{w}}{'graphs':>8}{'classes':>9}{'avg nodes':>11}{'avg edges':>11}")
    print(f"{row['dataset']:<{w}}{row['graphs']:>8}{row['classes']:>9}{summary.avg_nodes:>11.2f}{summary.avg_edges:>11.2f}")
    if args.out:
        args.out.write_text(json.dumps(row, sort_keys=True) + "\n")
    return 0


def cmd_train(args) -> int:
    config = trial_config(args)
    graphs, summary = load_graphs(args)
    labels = np.array([g.label for g in graphs])
    plan = make_folds(labels, config.seed, config.folds, config.stratify, rng=substream(config.seed, "folds"))
    train = [graphs[i] for i in plan.train_indices(0)]
    val = [graphs[i] for i in plan.val_indices(0)]
    test = [graphs[i] for i in plan.test_indices(0)]
    model, history = train_one(config, train, val, summary.num_classes)
    test_loss, test_acc = evaluate(model, test)
    extra = {
        "dataset": args.dataset,
        "epochs": len(history.epochs),
        "best_epoch": history.best_epoch,
        "best_val_loss": history.best_val_loss,
        "test_acc": test_acc,
    }
    save_checkpoint(args.out, model, config, extra)
    print(f"{config.method} on {args.dataset}: {len(history.epochs)} epochs, best val loss "
          f"{history.best_val_loss:.4f}, held-out accuracy {100 * test_acc:.2f}%; checkpoint {args.out}")
    return 0


def cmd_cv(args) -> int:
    config = trial_config(args)
    graphs, _ = load_graphs(args)
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    for s in range(args.seed, args.seed + args.seeds):
        cfg = dataclasses.replace(config, seed=s)
        result = cross_validate(cfg, graphs, args.jobs, args.dataset,
                                on_fold=lambda f, o: log.info("fold %d: test acc %.4f (%d epochs)", f, o[0], o[2]))
        append_trial_record(args.out, result)
        print(f"{cfg.method} {args.dataset} seed {s}: {100 * result.test_mean:.2f} ± {100 * result.test_std:.2f}")
    if args.summary:
        write_summary_csv(args.summary, read_trial_records(args.out))
    return 0


def cmd_grid(args) -> int:
    base = trial_config(args)
    graphs, _ = load_graphs(args)
    grid = table_grid(base, args.grid_lr, args.grid_hidden, args.grid_weight_decay,
                      args.grid_ratio if base.arch == "hierarchical" else None)

    def report(r):
        append_trial_record(args.out, r)
        tag = "diverged" if r.diverged else f"val {100 * r.val_mean:.2f} test {100 * r.test_mean:.2f}"
        print(f"lr={r.config.lr:g} hidden={r.config.hidden} wd={r.config.weight_decay:g} ratio={r.config.ratio}: {tag}")

    best, _ = grid_search(grid, graphs, args.jobs, args.dataset, on_result=report)
    print("best:", json.dumps(best.to_dict(), sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import model_suite, per_layer

    worst = 0.0
    for arch in ("hierarchical", "global"):
        errors = per_layer(model_suite(arch, args.seed, num_graphs=args.graphs))
        for layer, err in errors.items():
            print(f"{arch:<13} {layer:<14} max rel err {err:.3e}")
            worst = max(worst, err)
    ok = worst <= args.tolerance
    print(f"{'PASS' if ok else 'FAIL'}: max relative error {worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if ok else 1


def cmd_bench(args) -> int:
    from .bench import DEFAULT_SIZES, backend_comparison, complexity_sweep, loglog_slope, write_csv

    rows = complexity_sweep(args.sizes or DEFAULT_SIZES, args.degree, args.features, repeats=args.repeats,
                            seed=args.seed, dense=not args.no_dense)
    write_csv(args.out, rows)
    for r in rows:
        print(f"N={r.n:<6} E={r.e:<7} sparse {r.sparse_ns / 1e6:9.3f} ms  dense {r.dense_ns / 1e6:10.3f} ms  params {r.param_count}")
    if len(rows) > 1:
        print(f"log-log slope: sparse vs |E| {loglog_slope([r.e for r in rows], [r.sparse_ns for r in rows]):.3f}", end="")
        if not args.no_dense:
            print(f", dense vs |V| {loglog_slope([r.n for r in rows], [r.dense_ns for r in rows]):.3f}", end="")
        print()
    if args.compare_backends:
        for backend, timings in backend_comparison(repeats=args.repeats, seed=args.seed).items():
            print(backend, " ".join(f"{k}={v * 1e3:.3f}ms" for k, v in timings.items()))
    return 0


COMMANDS = {
    "inspect": cmd_inspect,
    "train": cmd_train,
    "cv": cmd_cv,
    "grid": cmd_grid,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(argv)
        args = _apply_config_file(parser, argv, args)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except NonFiniteError as exc:
        print(f"sagpool: numeric abort: {exc}", file=sys.stderr)
        return 2
    except (ParseError, ConfigError, UsageError, StratificationError, FileNotFoundError, ValueError) as exc:
        print(f"sagpool: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
