"""Command-line front end.

Subcommands:

* ``run <config.json>``            execute one experiment config
* ``schedule-check``               verify the plateau area bookkeeping
* ``oracle-compare [--steps N]``   production vs extended-precision replay
* ``variance-study``               minibatch gradient variance by scheme
* ``batch-scaling <config.json> --batches a,b,c``  sqrt-rule batch sweep

Exit codes: 0 on success, 2 when a check misses its tolerance, 3 when a
training run diverges.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .harness import (
    batch_scaling_study,
    default_oracle_grid,
    load_config,
    run_experiment,
    write_batch_scaling_csv,
)
from .problems import make_logistic
from .schedule import area_matching_gaps
from .sharding import estimate_gradient_variance

ORACLE_TOLERANCE = 1e-12
AREA_TARGETS = (5.28, 1.91)
AREA_TOLERANCE = 0.02


def _cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out_dir = args.out if args.out is not None else (
        config.out_dir if config.out_dir is not None else f"runs/{Path(args.config).stem}"
    )
    result = run_experiment(config, out_dir=out_dir)
    s = result.summary
    print(f"wrote {out_dir}/metrics.csv ({len(result.rows)} rows)")
    print(f"final_loss={s['final_loss']:.6g}", end="")
    if s["f_star_gap"] is not None:
        print(f" f_star_gap={s['f_star_gap']:.6g}", end="")
    print(f" diverged={s['diverged']}")
    if s["diverged"]:
        print(f"run diverged at step {s['diverged_at']}", file=sys.stderr)
        return 3
    return 0


def _cmd_schedule_check(args: argparse.Namespace) -> int:
    peak_gap, plateau_gap = area_matching_gaps()
    ok = True
    for label, got, want in (
        ("peak-drop area gap", peak_gap, AREA_TARGETS[0]),
        ("plateau residual gap", plateau_gap, AREA_TARGETS[1]),
    ):
        hit = abs(got - want) <= AREA_TOLERANCE
        ok &= hit
        print(f"[{'PASSED' if hit else 'FAILED'}] {label}: {got:.4f} "
              f"(target {want} +/- {AREA_TOLERANCE})")
    return 0 if ok else 2


def _cmd_oracle_compare(args: argparse.Namespace) -> int:
    results = default_oracle_grid(steps=args.steps)
    ok = True
    for name, dev in results.items():
        hit = dev <= ORACLE_TOLERANCE
        ok &= hit
        print(f"[{'PASSED' if hit else 'FAILED'}] {name}: max relative deviation "
              f"{dev:.3e} over {args.steps} steps (tolerance {ORACLE_TOLERANCE:.0e})")
    return 0 if ok else 2


def _cmd_variance_study(args: argparse.Namespace) -> int:
    problem = make_logistic(n=args.n, d=args.d, seed=args.seed, l2_reg=0.01)
    batch_sizes = [int(k) for k in args.k.split(",")]
    lines = ["scheme,k,variance,trials"]
    for k in batch_sizes:
        for scheme in ("with_replacement", "without_replacement", "sharded"):
            if scheme == "sharded":
                if k % args.workers != 0:
                    print(f"note: skipping sharded at k={k} "
                          f"(not divisible by {args.workers} workers)", file=sys.stderr)
                    continue
                report = estimate_gradient_variance(
                    problem, k, scheme, trials=args.trials, seed=args.seed,
                    workers=args.workers,
                )
            else:
                report = estimate_gradient_variance(
                    problem, k, scheme, trials=args.trials, seed=args.seed,
                )
            lines.append(f"{report.scheme},{report.k},{report.variance!r},{report.trials}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        print(text, end="")
    return 0


def _cmd_batch_scaling(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    batches = [int(b) for b in args.batches.split(",")]
    records = batch_scaling_study(config, batches)
    out = args.out or "batch_scaling.csv"
    write_batch_scaling_csv(records, out)
    diverged = [r for r in records if r["diverged"]]
    print(f"wrote {out} ({len(records)} rows, {len(diverged)} diverged)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blockopt", description="block-wise large-batch optimizer benchmarks"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory (default runs/<config stem>)")
    p_run.set_defaults(func=_cmd_run)

    p_sched = sub.add_parser("schedule-check", help="verify plateau area bookkeeping")
    p_sched.set_defaults(func=_cmd_schedule_check)

    p_oracle = sub.add_parser("oracle-compare", help="compare against the extended-precision replay")
    p_oracle.add_argument("--steps", type=int, default=1000)
    p_oracle.set_defaults(func=_cmd_oracle_compare)

    p_var = sub.add_parser("variance-study", help="minibatch gradient variance by sampling scheme")
    p_var.add_argument("--n", type=int, default=100, help="dataset size")
    p_var.add_argument("--d", type=int, default=5, help="parameter dimension")
    p_var.add_argument("--k", default="10,50,100", help="comma-separated batch sizes")
    p_var.add_argument("--trials", type=int, default=10_000)
    p_var.add_argument("--seed", type=int, default=0)
    p_var.add_argument("--workers", type=int, default=5, help="workers for the sharded scheme")
    p_var.add_argument("--out", default=None, help="CSV path (default: stdout)")
    p_var.set_defaults(func=_cmd_variance_study)

    p_scale = sub.add_parser("batch-scaling", help="sqrt-rule batch size sweep")
    p_scale.add_argument("config", help="base experiment config")
    p_scale.add_argument("--batches", required=True, help="comma-separated global batch sizes")
    p_scale.add_argument("--out", default=None, help="CSV path (default batch_scaling.csv)")
    p_scale.set_defaults(func=_cmd_batch_scaling)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
