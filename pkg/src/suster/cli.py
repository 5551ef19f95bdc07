"""Command-line front end.

Subcommands::

    suster sparsify --input DIR --dropout P --seed N [--out PATH]
    suster train    --config PATH [--out DIR] [--seed N]
    suster eval     --config PATH --checkpoint PATH [--out DIR]
    suster sweep    --config PATH [--out DIR] [--seed N]
    suster ablate   --config PATH --grid {nodes_embed,factor} [--out DIR]
    suster fraction --config PATH [--fractions 0.1,...,0.7] [--out DIR]
    suster report   --out DIR

Configs are JSON; ``SUSTER_DATA_DIR`` provides the default root for relative
dataset paths.  Exit codes: 0 success, 2 config error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments, reports
from .datasets import DatasetError, load_dense_dataset, save_mask, sparsify
from .experiments import ConfigError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="suster", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sparsify", help="write a keep/drop mask for a dataset")
    p.add_argument("--input", required=True, help="dataset directory")
    p.add_argument("--dropout", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="mask path (default: <input>/mask.csv)")

    for name, help_text in (
        ("train", "train one model and write checkpoint/history/report"),
        ("sweep", "multirun every (model, dropout) cell"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", default=None)

    p = sub.add_parser("ablate", help="hidden-graph or inner-stack ablation grid")
    p.add_argument("--config", required=True)
    p.add_argument("--grid", required=True, choices=("nodes_embed", "factor"))
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("fraction", help="training-fraction study")
    p.add_argument("--config", required=True)
    p.add_argument("--fractions", default=None, help="comma-separated fractions in (0,1]")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("report", help="re-render figures from CSVs in a directory")
    p.add_argument("--out", required=True)
    return parser


def _load_config(args) -> experiments.ExperimentConfig:
    overrides = {}
    if getattr(args, "out", None):
        overrides["out"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    return experiments.load_config_file(args.config, overrides)


def _cmd_sparsify(args) -> int:
    if not 0.0 <= args.dropout <= 1.0:
        raise ConfigError([f"dropout: {args.dropout} outside [0, 1]"])
    dataset = load_dense_dataset(args.input)
    mask = sparsify(dataset, args.dropout, args.seed)
    out = Path(args.out) if args.out else Path(args.input) / "mask.csv"
    save_mask(mask, out)
    print(f"wrote {out} (empirical keep rate {mask.keep_rate:.6f})")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    result = experiments.cmd_train(config)
    print(
        f"{config.label()} dropout={config.dropout:g} seed={config.seed}: "
        f"test MAE {result.metrics['mae']:.4f}, RMSE {result.metrics['rmse']:.4f}, "
        f"MAPE {result.metrics['mape']:.4f} (best epoch {result.best_epoch})"
    )
    print(f"outputs in {config.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    config = _load_config(args)
    metrics = experiments.cmd_eval(config, args.checkpoint)
    print(
        f"test MAE {metrics['mae']:.4f}, RMSE {metrics['rmse']:.4f}, "
        f"MAPE {metrics['mape']:.4f}"
    )
    return EXIT_OK


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    rows = experiments.cmd_sweep(config)
    out = Path(config.out)
    reports.render_sweep_plot(out / "sweep.csv")
    print(f"{len(rows)} result rows in {out / 'sweep.csv'}; plot in {out / 'sweep_mae.png'}")
    return EXIT_OK


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    rows = experiments.cmd_ablate(config, args.grid)
    name = "ablate_nodes_embed.csv" if args.grid == "nodes_embed" else "ablate_factor.csv"
    print(f"{len(rows)} grid cells in {Path(config.out) / name}")
    return EXIT_OK


def _cmd_fraction(args) -> int:
    config = _load_config(args)
    if args.fractions:
        try:
            fractions = [float(f) for f in args.fractions.split(",") if f.strip()]
        except ValueError:
            raise ConfigError([f"fractions: not numeric: {args.fractions!r}"]) from None
    else:
        fractions = list(DEFAULT_FRACTIONS)
    rows = experiments.cmd_fraction(config, fractions)
    out = Path(config.out)
    reports.render_fraction_plot(out / "fraction.csv")
    print(f"{len(rows)} fractions in {out / 'fraction.csv'}; plot in {out / 'fraction_mae.png'}")
    return EXIT_OK


def _cmd_report(args) -> int:
    rendered = reports.render_reports(args.out)
    if not rendered:
        print(f"no renderable CSVs found in {args.out}")
    for path in rendered:
        print(f"rendered {path}")
    return EXIT_OK


_COMMANDS = {
    "sparsify": _cmd_sparsify,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "ablate": _cmd_ablate,
    "fraction": _cmd_fraction,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_CONFIG
    except DatasetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
