#!/usr/bin/env python3
"""Paired progressive vs one-step comparison on a small enumerable space.

For each seed both modes get the same evaluation budget; the script reports
success against the exhaustive optimum and final entropies (the convergence
indicator).

Example:
    python scripts/compare_progressive_one_step.py --seeds 10 --rounds 260
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))
sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from conftest import brute_force_best, make_tiny_space
from tsnas.evaluators import SyntheticEvaluator, stepwise_objective
from tsnas.progressive import StepPlan, run_one_step, run_progressive
from tsnas.sampler import SearchConfig


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--rounds", type=int, default=260)
    args = parser.parse_args()

    space = make_tiny_space()
    r1 = args.rounds * 6 // 13
    r2 = args.rounds * 4 // 13
    r3 = args.rounds - r1 - r2
    plans = [
        StepPlan("sparse", r1, None, "sparse_stream_only"),
        StepPlan("dense_fusion", r2, None, "whole_model"),
        StepPlan("attention", r3, None, "whole_model"),
    ]
    prog_hits = one_hits = 0
    for seed in range(args.seeds):
        objective = stepwise_objective(space, seed)
        _, best = brute_force_best(space, SyntheticEvaluator(space, objective))
        config = SearchConfig(
            rounds=args.rounds, seed=seed, penalty_weight=0.0, weight_temperature=0.01
        )
        prog = run_progressive(space, plans, SyntheticEvaluator(space, objective), config)
        one = run_one_step(space, SyntheticEvaluator(space, objective), config)
        p_hit = prog.final_arch.key() == best.key()
        o_hit = one.final_arch.key() == best.key()
        prog_hits += p_hit
        one_hits += o_hit
        step_h = [
            s.trajectory.records[-1].entropy for s in prog.steps if s.trajectory.records
        ]
        print(
            f"seed {seed:3d}: progressive {'hit ' if p_hit else 'miss'} "
            f"(mean step entropy {sum(step_h) / len(step_h):6.3f}) | "
            f"one-step {'hit ' if o_hit else 'miss'} "
            f"(entropy {one.steps[0].trajectory.records[-1].entropy:6.3f})"
        )
    print(f"\nprogressive {prog_hits}/{args.seeds}, one-step {one_hits}/{args.seeds}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
