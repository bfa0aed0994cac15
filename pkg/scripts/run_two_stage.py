#!/usr/bin/env python3
"""Run the shipped two-stage config and summarize each stage.

The config trains logistic regression with LANS in two stages, each with
its own peak rate and warmup/constant percentages (the second stage
restarts its warmup at a lower peak). Prints the per-stage loss trajectory
endpoints and the final gap to the certified optimum.
"""

import argparse
from pathlib import Path

from blockopt.harness import load_config, run_experiment, schedule_plan

DEFAULT_CONFIG = Path(__file__).resolve().parent.parent / "configs/two_stage_logistic.json"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default=str(DEFAULT_CONFIG))
    parser.add_argument("--out", default=None, help="output directory override")
    args = parser.parse_args()

    config = load_config(args.config)
    result = run_experiment(config, out_dir=args.out)

    boundaries = []
    offset = 0
    for stage, sched in zip(config.stages, schedule_plan(config)):
        offset += stage.steps
        boundaries.append((stage, sched, offset))

    print(f"{len(config.stages)} stages, {config.total_steps} total steps")
    start = 1
    for stage, sched, end in boundaries:
        stage_rows = [r for r in result.rows if start <= r.step <= end]
        if stage_rows:
            print(
                f"  steps {start}-{end}: eta={stage.eta} "
                f"(warmup {sched.warmup_steps}, const {sched.const_steps}) "
                f"loss {stage_rows[0].loss:.6f} -> {stage_rows[-1].loss:.6f}"
            )
        start = end + 1

    s = result.summary
    print(f"final loss {s['final_loss']:.8f}")
    if s["f_star_gap"] is not None:
        print(f"gap to certified optimum {s['f_star_gap']:.3e}")
    if s["diverged"]:
        print(f"diverged at step {s['diverged_at']}")


if __name__ == "__main__":
    main()
