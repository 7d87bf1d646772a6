"""Command-line entry points: run experiments, export plot data, compare runs."""

from __future__ import annotations

import argparse
import os
import sys

from .harness import (
    OUT_DIR_ENV,
    ExperimentConfig,
    export_plot_data,
    format_summary,
    load_record,
    load_results,
    run_batch,
)
from .metrics import mann_whitney_u


def _resolve_out(value):
    return os.environ.get(OUT_DIR_ENV) or value


def _cmd_run(args):
    config = ExperimentConfig.from_file(args.config)
    if args.trials is not None:
        config.trials = args.trials
    if args.seed is not None:
        config.base_seed = args.seed
    out = _resolve_out(args.out)
    batch = run_batch(config, out_dir=out)
    sys.stdout.write(format_summary(batch))
    if out:
        sys.stdout.write(f"results written to {out}\n")
    return 0


def _cmd_export(args):
    out = _resolve_out(args.out) or "."
    if args.what == "reward-density":
        source = load_results(args.record)
    else:
        source = load_record(args.record)
    written = export_plot_data(source, args.what, out, step=args.step)
    for path in written:
        sys.stdout.write(path + "\n")
    return 0


def _cmd_compare(args):
    a = load_results(args.a)
    b = load_results(args.b)
    ra = [t.metrics.mss_reward for t in a.trials]
    rb = [t.metrics.mss_reward for t in b.trials]
    u, p = mann_whitney_u(ra, rb)
    import numpy as np

    sys.stdout.write(
        f"a: n={len(ra)} median mss_reward={np.median(ra):g}\n"
        f"b: n={len(rb)} median mss_reward={np.median(rb):g}\n"
        f"Mann-Whitney U={u:g}  two-sided p={p:.6g}\n"
    )
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="maxseek",
        description="Maximum seek-and-sample planning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a batch of trials from a config file")
    run.add_argument("--config", required=True, help="experiment config (JSON)")
    run.add_argument("--trials", type=int, default=None, help="override trial count")
    run.add_argument("--seed", type=int, default=None, help="override base seed")
    run.add_argument("--out", default=None,
                     help=f"output directory (env {OUT_DIR_ENV} overrides)")
    run.set_defaults(fn=_cmd_run)

    export = sub.add_parser("export", help="emit plot data from a saved record")
    export.add_argument("--record", required=True,
                        help="trial log (or results.jsonl for reward-density)")
    export.add_argument(
        "--what", required=True,
        choices=["belief-heatmap", "reward-heatmap", "trajectory", "reward-density"],
    )
    export.add_argument("--step", type=int, default=None,
                        help="logged step for heatmaps (default: final)")
    export.add_argument("--out", default=None,
                        help=f"output directory (env {OUT_DIR_ENV} overrides)")
    export.set_defaults(fn=_cmd_export)

    compare = sub.add_parser("compare", help="Mann-Whitney test between two result files")
    compare.add_argument("--a", required=True)
    compare.add_argument("--b", required=True)
    compare.set_defaults(fn=_cmd_compare)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
