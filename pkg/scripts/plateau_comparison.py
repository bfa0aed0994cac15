#!/usr/bin/env python3
"""Compare warmup-decay against warmup-constant-decay at a fixed peak rate.

Runs LANS on all four test problems with both schedule shapes under the
same peak rate and step budget, and prints the final losses side by side.
The constant phase adds schedule area without raising the peak; the point
of this script is to show that the extra area shows up as a lower final
loss on most problems.
"""

import argparse

from blockopt.harness import ExperimentConfig, ProblemSpec, ScheduleSpec, run_experiment
from blockopt.optimizers import OptimizerConfig

PROBLEMS = {
    "quadratic": (ProblemSpec(kind="quadratic", d=16, seed=5, blocks=(6, 5, 5)), 1, None),
    "rosenbrock": (ProblemSpec(kind="rosenbrock", d=4), 1, None),
    "logistic": (
        ProblemSpec(kind="logistic_regression", d=20, n=1000, seed=3, l2_reg=0.01),
        1,
        1000,
    ),
    "mlp1": (ProblemSpec(kind="mlp1", d=8, n=200, seed=4), 1, 200),
}


def run_one(pspec, workers, local, args, kind, const_pct):
    config = ExperimentConfig(
        problem=pspec,
        optimizer_name=args.optimizer,
        optimizer=OptimizerConfig(weight_decay=0.0),
        schedule=ScheduleSpec(kind=kind, eta=args.eta, warmup_pct=10.0, const_pct=const_pct),
        total_steps=args.steps,
        workers=workers,
        local_batch=local,
        seed=args.seed,
    )
    return run_experiment(config).summary["final_loss"]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--optimizer", default="lans", choices=["lamb", "lans"])
    parser.add_argument("--eta", type=float, default=0.01)
    parser.add_argument("--steps", type=int, default=200)
    parser.add_argument("--const-pct", type=float, default=40.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    print(f"{args.optimizer}, eta={args.eta}, {args.steps} steps, "
          f"warmup 10%, const {args.const_pct}%")
    print(f"{'problem':<12} {'ramp':>12} {'plateau':>12} {'winner':>8}")
    wins = 0
    for name, (pspec, workers, local) in PROBLEMS.items():
        ramp = run_one(pspec, workers, local, args, "warmup_decay", None)
        plateau = run_one(pspec, workers, local, args, "warmup_const_decay", args.const_pct)
        better = plateau <= ramp
        wins += better
        print(f"{name:<12} {ramp:>12.6f} {plateau:>12.6f} {'plateau' if better else 'ramp':>8}")
    print(f"\nplateau wins {wins}/{len(PROBLEMS)}")


if __name__ == "__main__":
    main()
